"""Local annotation capture service.

Serves the video manifest, receives live (timestamp, value) samples from the
browser annotation tool in small batches, and persists each closed session as
an annotation trace file that the post-processing pipeline consumes directly.

Open sessions live in memory and are journaled to disk on every push, so a
crashed server can recover them on restart; closed sessions are durable as
trace files.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException

from ..annotations import AnnotationTrace, write_trace
from .schemas import (CloseSessionResponse, OpenSessionRequest,
                      OpenSessionResponse, PushSamplesRequest,
                      PushSamplesResponse, RejectedSample, ReviewResponse,
                      Sample, VideoEntry)


@dataclass
class Session:
    session_id: str
    annotator_id: str
    video_id: str
    dimension: str
    started_at: float
    samples: list = field(default_factory=list)  # (timestamp, value) pairs
    state: str = "open"
    trace_path: str | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


def load_video_manifest(path) -> dict[str, VideoEntry]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("version") != 1:
        raise ValueError(f"{path}: unsupported video manifest version")
    entries = [VideoEntry(**v) for v in data["videos"]]
    return {e.video_id: e for e in entries}


class SessionStore:
    """In-memory sessions with per-session serialized mutation and a JSONL
    journal per open session for crash recovery."""

    def __init__(self, videos: dict[str, VideoEntry], out_dir: Path, journal_dir: Path):
        self.videos = videos
        self.out_dir = out_dir
        self.journal_dir = journal_dir
        self.sessions: dict[str, Session] = {}
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.journal_dir.mkdir(parents=True, exist_ok=True)
        self._recover()

    # -------------------------------------------------------------- lifecycle

    def open(self, annotator_id: str, video_id: str, dimension: str) -> Session:
        if video_id not in self.videos:
            raise HTTPException(404, f"unknown video {video_id!r}")
        session = Session(uuid.uuid4().hex, annotator_id, video_id, dimension, time.time())
        self.sessions[session.session_id] = session
        self._journal_meta(session)
        return session

    def get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return session

    def push(self, session: Session, samples: list[Sample]):
        with session.lock:
            if session.state != "open":
                raise HTTPException(409, "session is closed")
            rejected: list[RejectedSample] = []
            accepted: list[tuple[float, float]] = []
            last = session.samples[-1][0] if session.samples else -float("inf")
            for i, s in enumerate(samples):
                ts = round(s.timestamp, 3)  # wire precision is milliseconds
                if not -1.0 <= s.value <= 1.0:
                    rejected.append(RejectedSample(index=i, reason="value outside [-1, 1]"))
                    continue
                if ts <= last:
                    rejected.append(RejectedSample(
                        index=i, reason="timestamp not increasing"))
                    continue
                accepted.append((ts, s.value))
                last = ts
            session.samples.extend(accepted)
            self._journal_samples(session, accepted)
            return len(accepted), rejected

    def close(self, session: Session) -> str:
        with session.lock:
            if session.state != "open":
                raise HTTPException(409, "session is already closed")
            if not session.samples:
                raise HTTPException(422, "cannot close an empty session")
            trace = AnnotationTrace(session.annotator_id, session.dimension,
                                    tuple(session.samples))
            path = self.out_dir / (
                f"{session.video_id}__{session.dimension}__"
                f"{session.annotator_id}__{session.session_id}.trace")
            write_trace(path, trace, session.video_id)
            session.state = "closed"
            session.trace_path = str(path)
            self._journal_path(session).unlink(missing_ok=True)
            return str(path)

    # ---------------------------------------------------------------- journal

    def _journal_path(self, session: Session) -> Path:
        return self.journal_dir / f"{session.session_id}.journal"

    def _journal_meta(self, session: Session) -> None:
        meta = {"session_id": session.session_id, "annotator_id": session.annotator_id,
                "video_id": session.video_id, "dimension": session.dimension,
                "started_at": session.started_at}
        self._journal_path(session).write_text(json.dumps(meta) + "\n", encoding="utf-8")

    def _journal_samples(self, session: Session, samples) -> None:
        if not samples:
            return
        with open(self._journal_path(session), "a", encoding="utf-8") as fh:
            for ts, value in samples:
                fh.write(json.dumps([ts, value]) + "\n")

    def _recover(self) -> None:
        for journal in sorted(self.journal_dir.glob("*.journal")):
            lines = journal.read_text(encoding="utf-8").splitlines()
            if not lines:
                continue
            meta = json.loads(lines[0])
            session = Session(meta["session_id"], meta["annotator_id"],
                              meta["video_id"], meta["dimension"], meta["started_at"])
            session.samples = [tuple(json.loads(l)) for l in lines[1:]]
            self.sessions[session.session_id] = session


def create_app(video_manifest, out_dir, journal_dir=None) -> FastAPI:
    out_dir = Path(out_dir)
    journal_dir = Path(journal_dir) if journal_dir else out_dir / "journal"
    store = SessionStore(load_video_manifest(video_manifest), out_dir, journal_dir)

    app = FastAPI(title="affwild annotation service")
    app.state.store = store

    @app.get("/videos", response_model=list[VideoEntry])
    def list_videos():
        return list(store.videos.values())

    @app.post("/sessions", response_model=OpenSessionResponse, status_code=201)
    def open_session(req: OpenSessionRequest):
        try:
            dimension = req.validated_dimension()
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from None
        session = store.open(req.annotator_id, req.video_id, dimension)
        return OpenSessionResponse(session_id=session.session_id)

    @app.post("/sessions/{session_id}/samples", response_model=PushSamplesResponse)
    def push_samples(session_id: str, req: PushSamplesRequest):
        session = store.get(session_id)
        accepted, rejected = store.push(session, req.samples)
        return PushSamplesResponse(accepted=accepted, rejected=rejected)

    @app.post("/sessions/{session_id}/close", response_model=CloseSessionResponse)
    def close_session(session_id: str):
        session = store.get(session_id)
        return CloseSessionResponse(trace_path=store.close(session))

    @app.get("/sessions/{session_id}/review", response_model=ReviewResponse)
    def review(session_id: str):
        session = store.get(session_id)
        if session.state != "closed":
            raise HTTPException(409, "session is still open")
        return ReviewResponse(
            session_id=session.session_id,
            annotator_id=session.annotator_id,
            video_id=session.video_id,
            dimension=session.dimension,
            samples=[Sample(timestamp=t, value=v) for t, v in session.samples],
            video=store.videos[session.video_id],
        )

    return app
