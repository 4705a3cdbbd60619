"""Command-line surface tying the pipeline together.

Exit codes: 0 success, 1 runtime failure, 2 usage/validation error.
Option precedence: command-line flag > --config file value > built-in default.
All randomness flows from --seed; when it is absent a fresh seed is drawn and
recorded in the run record written next to the outputs.
"""

from __future__ import annotations

import functools
import json
import secrets
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, annotations, dataset as ds, model as mdl, training
from .annotations import TraceFormatError, VideoAnnotations, read_trace
from .checkpoint import CheckpointError
from .model import ConfigError

PAPER_TARGETS = (0.43, 0.24, 0.19, 0.14)


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(func):
    """Map validation errors to exit 2 and runtime failures to exit 1."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (TraceFormatError, ConfigError, CheckpointError, ValueError) as exc:
            _fail(2, str(exc))
        except click.ClickException:
            raise
        except Exception as exc:  # noqa: BLE001 - CLI boundary
            _fail(1, f"{type(exc).__name__}: {exc}")

    return wrapper


def _load_config(path) -> dict:
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return cfg


def _pick(flag, config: dict, key: str, default):
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _resolve_seed(seed) -> int:
    if seed is None:
        seed = secrets.randbelow(2 ** 31)
        click.echo(f"seed not given; using recorded seed {seed}")
    return int(seed)


def _write_run_record(out_dir: Path, command: str, seed: int, settings: dict) -> None:
    record = {"command": command, "seed": seed, "version": __version__,
              "settings": settings}
    (out_dir / "run.json").write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")


def _model_config_for(dataset: ds.AffectDataset, overrides: dict) -> mdl.ModelConfig:
    seq = dataset.sequences[0]
    derived = dict(
        input_hwc=tuple(seq.frames.shape[1:]),
        landmark_dim=seq.landmarks.shape[1],
    )
    derived.update(overrides)
    if "backbone" in derived:
        derived["backbone"] = tuple(
            mdl._layer_from_dict(l) for l in derived["backbone"])
    if "input_hwc" in derived:
        derived["input_hwc"] = tuple(derived["input_hwc"])
    return mdl.desk_config(**derived)


@click.group()
@click.version_option(version=__version__)
def main():
    """Dimensional affect toolkit: annotation post-processing, dataset
    balancing, CNN-GRU training, evaluation and fine-tuning."""


# ------------------------------------------------------------ annotate-process

CDF_THRESHOLDS = np.round(np.arange(-1.0, 1.0001, 0.05), 2)


@main.command("annotate-process")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_guarded
def annotate_process(manifest, out):
    """Resample traces, write final label files, MAC table and CDF curves."""
    spec = json.loads(Path(manifest).read_text(encoding="utf-8"))
    if spec.get("version") != 1:
        raise ValueError(f"{manifest}: unsupported annotation manifest version")
    base = Path(manifest).parent

    # Validate and load everything before any output is written.
    videos: list[VideoAnnotations] = []
    for entry in spec["videos"]:
        traces = []
        for rel in entry["traces"]:
            trace_path = base / rel
            if not trace_path.exists():
                raise ValueError(f"trace file not found: {trace_path}")
            trace, video_id = read_trace(trace_path)
            if video_id != entry["video_id"]:
                raise ValueError(
                    f"{trace_path}: header video id {video_id!r} does not match "
                    f"manifest entry {entry['video_id']!r}")
            traces.append(trace)
        landmarks = None
        if entry.get("landmarks"):
            lm_path = base / entry["landmarks"]
            rows = [[float(v) for v in line.split(",")]
                    for line in lm_path.read_text(encoding="utf-8").splitlines()
                    if line.strip()]
            landmarks = np.asarray(rows)
        videos.append(VideoAnnotations(
            video_id=entry["video_id"],
            frame_rate=entry["frame_rate"],
            frame_count=entry["frame_count"],
            traces=traces,
            selected_ids=entry.get("selected", {}),
            landmarks=landmarks,
        ))

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    mac_rows = ["video\tdimension\tmac_a\tmac_s\tcca_first"]
    reports: dict[str, list] = {d: [] for d in annotations.DIMENSIONS}
    for video in videos:
        for dim in annotations.DIMENSIONS:
            if len(video.traces_for(dim)) >= 2:
                report = annotations.mac(video, dim)
                reports[dim].append(report)
            else:
                report = None
            if video.selected_ids.get(dim):
                labels = annotations.final_labels(video, dim)
                annotations.write_labels(
                    out_dir / f"{video.video_id}_{dim}.labels", labels,
                    video.video_id, dim)
                cca = (annotations.cca_first(video.landmarks, labels)
                       if video.landmarks is not None else None)
            else:
                cca = None
            if report is not None:
                mac_rows.append(
                    f"{video.video_id}\t{dim}\t{report.mac_a:.6f}\t"
                    f"{'' if report.mac_s is None else f'{report.mac_s:.6f}'}\t"
                    f"{'' if cca is None else f'{cca:.6f}'}")
    (out_dir / "mac_report.tsv").write_text("\n".join(mac_rows) + "\n", encoding="utf-8")

    for dim, dim_reports in reports.items():
        if not dim_reports:
            continue
        for which in ("mac_a", "mac_s"):
            values = [getattr(r, which) for r in dim_reports
                      if getattr(r, which) is not None]
            if not values:
                continue
            curve = annotations.mac_cdf(values, CDF_THRESHOLDS)
            lines = ["threshold,fraction"] + [
                f"{t},{float(f)!r}" for t, f in zip(CDF_THRESHOLDS, curve)]
            (out_dir / f"cdf_{which}_{dim}.csv").write_text(
                "\n".join(lines) + "\n", encoding="utf-8")
    click.echo(f"processed {len(videos)} video(s) into {out_dir}")


# ----------------------------------------------------------------- train/eval

def _train_options(func):
    for option in reversed([
        click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False)),
        click.option("--out", required=True, type=click.Path(file_okay=False)),
        click.option("--config", type=click.Path(exists=True, dir_okay=False)),
        click.option("--seed", type=int),
        click.option("--lr", type=float),
        click.option("--batch", type=int),
        click.option("--seqlen", type=int),
        click.option("--epochs", type=int),
        click.option("--loss", type=click.Choice(training.LOSSES)),
    ]):
        func = option(func)
    return func


def _build_train_config(config: dict, seed, lr, batch, seqlen, epochs, loss) -> training.TrainConfig:
    tcfg = config.get("train", {})
    return training.TrainConfig(
        learning_rate=_pick(lr, tcfg, "learning_rate", 1e-4),
        batch_size=_pick(batch, tcfg, "batch_size", 4),
        seq_len=_pick(seqlen, tcfg, "seq_len", 80),
        epochs=_pick(epochs, tcfg, "epochs", 1),
        seed=seed,
        loss=_pick(loss, tcfg, "loss", "ccc"),
    )


@main.command()
@_train_options
@_guarded
def train(manifest, out, config, seed, lr, batch, seqlen, epochs, loss):
    """Train a model from scratch on a dataset manifest."""
    config = _load_config(config)
    seed = _resolve_seed(seed)
    data = ds.load_manifest(manifest)
    tcfg = _build_train_config(config, seed, lr, batch, seqlen, epochs, loss)
    mcfg = _model_config_for(data, config.get("model", {}))
    model = mdl.build(mcfg, seed)
    result = training.train(model, data, tcfg)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    mdl.save_model(out_dir / "model.ckpt", result.model)
    training.write_loss_curve(out_dir / "loss_curve.csv", result.loss_curve)
    _write_run_record(out_dir, "train", seed,
                      {"train": tcfg.__dict__, "model": json.loads(mcfg.to_json())})
    click.echo(f"trained {tcfg.epochs} epoch(s); final loss "
               f"{result.loss_curve[-1]:.6f}; checkpoint at {out_dir / 'model.ckpt'}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--mode", type=click.Choice(["per-video", "concat"]), default="concat")
@click.option("--seqlen", type=int, default=80)
@_guarded
def evaluate(checkpoint, manifest, out, mode, seqlen):
    """Evaluate a checkpoint: CCC/Pearson/MSE report plus prediction dumps."""
    model = mdl.load_model(checkpoint)
    data = ds.load_manifest(manifest)
    report_mode = "per-video" if mode == "per-video" else "concatenated"
    report = training.evaluate(model, data, mode=report_mode, seq_len=seqlen)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")
    for vid, preds in report.predictions.items():
        training.write_predictions(out_dir / f"pred_{vid.replace('/', '_')}.csv", preds)
    np.savetxt(out_dir / "hist_predictions.csv", report.pred_hist, delimiter=",")
    np.savetxt(out_dir / "hist_annotations.csv", report.ann_hist, delimiter=",")
    _write_run_record(out_dir, "evaluate", 0,
                      {"checkpoint": str(checkpoint), "mode": report_mode,
                       "seq_len": seqlen})
    click.echo(f"mean CCC ({report_mode}): {report.mean_ccc:.6f}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--freeze", type=click.Choice(["none", "backbone"]), default="none")
@click.option("--rescale-labels", "rescale", type=str, default=None,
              help="min,max source label range to map onto [-1,1]")
@_train_options
@_guarded
def finetune(checkpoint, freeze, rescale, manifest, out, config, seed, lr, batch,
             seqlen, epochs, loss):
    """Continue training from a checkpoint on a new dataset."""
    config = _load_config(config)
    seed = _resolve_seed(seed)
    data = ds.load_manifest(manifest)
    if rescale is not None:
        lo, hi = (float(v) for v in rescale.split(","))
        data = ds.AffectDataset(tuple(
            ds.LabeledSequence(s.video_id, s.frames, s.landmarks,
                               training.rescale_labels(s.valence, lo, hi),
                               training.rescale_labels(s.arousal, lo, hi),
                               s.classes)
            for s in data.sequences))
    tcfg = _build_train_config(config, seed, lr, batch, seqlen, epochs, loss)
    result = training.finetune(checkpoint, data, tcfg, freeze=freeze)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    mdl.save_model(out_dir / "model.ckpt", result.model)
    training.write_loss_curve(out_dir / "loss_curve.csv", result.loss_curve)
    _write_run_record(out_dir, "finetune", seed,
                      {"train": tcfg.__dict__, "freeze": freeze,
                       "checkpoint": str(checkpoint)})
    click.echo(f"fine-tuned; final loss {result.loss_curve[-1]:.6f}")


@main.command()
@click.option("--loss", type=click.Choice(training.LOSSES), default="ccc")
@click.option("--seed", type=int, default=0)
@click.option("--threshold", type=float, default=1e-4)
@_guarded
def gradcheck(loss, seed, threshold):
    """Finite-difference check of the full tiny network under a loss."""
    rng = np.random.default_rng(seed)
    head = mdl.CATEGORICAL_HEAD if loss == "cross-entropy" else mdl.REGRESSION_HEAD
    cfg = mdl.desk_config(
        input_hwc=(8, 8, 3),
        backbone=(mdl.Conv(3, 3, 3, 2), mdl.Relu(), mdl.Pool(2, 2),
                  mdl.Conv(3, 3, 2, 3), mdl.Relu(), mdl.Pool(2, 2)),
        fc1_units=8, landmark_dim=4, rnn_units=4, head=head, dropout_rate=0.0)
    model = mdl.build(cfg, seed)
    b, t = 2, 5
    batch = ds.Batch(
        frames=rng.uniform(-1, 1, (b, t, 8, 8, 3)),
        landmarks=rng.uniform(0, 1, (b, t, 4)),
        valence=rng.uniform(-1, 1, (b, t)),
        arousal=rng.uniform(-1, 1, (b, t)),
        classes=rng.integers(0, mdl.NUM_CLASSES, (b, t)),
    )
    worst = training.gradcheck(model, batch, loss)
    click.echo(f"max relative gradient error ({loss}): {worst:.3e}")
    if worst >= threshold:
        _fail(1, f"gradient check failed: {worst:.3e} >= {threshold}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--targets", type=str, default=",".join(str(t) for t in PAPER_TARGETS),
              help="v+a+,v-a+,v+a-,v-a- proportions")
@click.option("--tolerance", type=float, default=0.02)
@click.option("--seqlen", "segment_len", type=int, default=80)
@click.option("--seed", type=int)
@_guarded
def balance(manifest, out, targets, tolerance, segment_len, seed):
    """Oversample toward target quadrant proportions and write the result."""
    seed = _resolve_seed(seed)
    target_values = tuple(float(v) for v in targets.split(","))
    if len(target_values) != 4:
        raise ValueError("--targets needs 4 comma-separated proportions")
    data = ds.load_manifest(manifest)
    balanced = ds.balance(data, target_values, segment_len, tolerance, seed)
    out_dir = Path(out)
    manifest_path = ds.save_dataset(balanced, out_dir)
    stats = ds.quadrant_stats(balanced)
    _write_run_record(out_dir, "balance", seed,
                      {"targets": list(target_values), "tolerance": tolerance,
                       "segment_len": segment_len})
    click.echo("achieved proportions: " + ", ".join(
        f"{n}={p:.3f}" for n, p in zip(ds.QUADRANT_NAMES, stats.proportions)))
    click.echo(f"balanced manifest at {manifest_path}")


@main.command()
@click.option("--videos", required=True, type=click.Path(exists=True, dir_okay=False),
              help="video manifest JSON for the annotation service")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8710)
@_guarded
def serve(videos, out, host, port):
    """Run the local annotation capture service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(videos, out), host=host, port=port)


if __name__ == "__main__":
    main()
