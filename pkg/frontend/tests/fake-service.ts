/**
 * In-memory service client implementing the annotation-service semantics:
 * millisecond timestamp rounding, strictly increasing timestamps, value range
 * checks, per-sample rejection, closed-session guards, and review replay.
 * An `offline` switch simulates network failure for reconnect tests.
 */

import type {
    Dimension, PushResult, RejectedSample, Review, Sample, ServiceClient,
    VideoEntry,
} from '../src/protocol.js';
import { ServiceError } from '../src/protocol.js';

interface FakeSession {
    sessionId: string;
    annotatorId: string;
    videoId: string;
    dimension: Dimension;
    samples: Sample[];
    state: 'open' | 'closed';
    tracePath: string | null;
}

export class FakeService implements ServiceClient {
    offline = false;
    pushCalls = 0;
    readonly sessions = new Map<string, FakeSession>();
    private nextId = 1;

    constructor(private readonly videos: VideoEntry[]) {}

    private guardOnline(): void {
        if (this.offline) throw new Error('network unreachable');
    }

    async listVideos(): Promise<VideoEntry[]> {
        this.guardOnline();
        return this.videos;
    }

    async openSession(annotatorId: string, videoId: string,
                      dimension: Dimension): Promise<string> {
        this.guardOnline();
        if (!this.videos.some((v) => v.video_id === videoId)) {
            throw new ServiceError(404, `unknown video ${videoId}`);
        }
        const sessionId = `s${this.nextId++}`;
        this.sessions.set(sessionId, {
            sessionId, annotatorId, videoId, dimension,
            samples: [], state: 'open', tracePath: null,
        });
        return sessionId;
    }

    async pushSamples(sessionId: string, samples: Sample[]): Promise<PushResult> {
        this.guardOnline();
        this.pushCalls += 1;
        const session = this.get(sessionId);
        if (session.state !== 'open') throw new ServiceError(409, 'session is closed');
        const rejected: RejectedSample[] = [];
        let accepted = 0;
        let last = session.samples.length > 0
            ? session.samples[session.samples.length - 1].timestamp
            : -Infinity;
        for (let i = 0; i < samples.length; i++) {
            const ts = Math.round(samples[i].timestamp * 1000) / 1000;
            const value = samples[i].value;
            if (value < -1 || value > 1) {
                rejected.push({ index: i, reason: 'value outside [-1, 1]' });
                continue;
            }
            if (ts <= last) {
                rejected.push({ index: i, reason: 'timestamp not increasing' });
                continue;
            }
            session.samples.push({ timestamp: ts, value });
            last = ts;
            accepted += 1;
        }
        return { accepted, rejected };
    }

    async closeSession(sessionId: string): Promise<string> {
        this.guardOnline();
        const session = this.get(sessionId);
        if (session.state !== 'open') throw new ServiceError(409, 'already closed');
        if (session.samples.length === 0) throw new ServiceError(422, 'empty session');
        session.state = 'closed';
        session.tracePath =
            `${session.videoId}__${session.dimension}__${session.annotatorId}.trace`;
        return session.tracePath;
    }

    async review(sessionId: string): Promise<Review> {
        this.guardOnline();
        const session = this.get(sessionId);
        if (session.state !== 'closed') throw new ServiceError(409, 'still open');
        const video = this.videos.find((v) => v.video_id === session.videoId)!;
        return {
            session_id: session.sessionId,
            annotator_id: session.annotatorId,
            video_id: session.videoId,
            dimension: session.dimension,
            samples: session.samples.map((s) => ({ ...s })),
            video,
        };
    }

    private get(sessionId: string): FakeSession {
        const session = this.sessions.get(sessionId);
        if (!session) throw new ServiceError(404, `unknown session ${sessionId}`);
        return session;
    }
}
