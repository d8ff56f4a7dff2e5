"""Command-line entry point.

Every subcommand accepts ``--config`` (YAML) and ``--seed`` and writes a
JSON manifest with a reproducibility stanza next to its outputs. Exit codes:
0 success, 1 validation error, 2 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .. import synthdata
from ..sync import SyncError
from . import checkpoint as ckpt
from .config import ConfigError, TrainConfig, load_config
from .infer import InferenceError, evaluate, infer_corpus, pose_control
from .metrics import heat_ratio, motion_heatmap
from .model import Model
from .train import Trainer, TrainingAborted, pretrain_sync

log = logging.getLogger("lipfield")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def stanza(cfg: TrainConfig) -> dict:
    return {"seed": cfg.seed, "config_digest": cfg.digest().hex(), "git_describe": synthdata.git_describe()}


def write_manifest(out: Path, name: str, cfg: TrainConfig, payload: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": name, "reproducibility": stanza(cfg), **payload}
    path = out / f"{name}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable))
    return path


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serialisable: {type(x)}")


def save_png(path: Path, img: np.ndarray) -> None:
    Image.fromarray(synthdata.quantize(img)).save(path)


def get_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def get_corpus(cfg: TrainConfig) -> synthdata.Corpus:
    if cfg.corpus:
        return synthdata.load_corpus(cfg.corpus)
    return synthdata.build_corpus(cfg.scene_config, cfg.data_seed)


def load_model(path) -> Model:
    return Model.from_checkpoint(ckpt.load(path))


def _indices(corpus, which: str) -> np.ndarray:
    if which == "test":
        return corpus.test_indices
    if which == "train":
        return corpus.train_indices
    if which == "all":
        return np.arange(len(corpus.frames))
    try:
        return np.array([int(x) for x in which.split(",")])
    except ValueError:
        raise ConfigError(f"bad frame selection {which!r}") from None


# -- subcommands ---------------------------------------------------------------
def cmd_gen_data(args) -> int:
    cfg = get_config(args)
    seed = cfg.data_seed if args.seed is None else args.seed
    manifest = synthdata.generate_corpus(cfg.scene_config, seed, args.out)
    print(f"wrote {len(manifest['frames'])} frames to {args.out}")
    return EXIT_OK


def cmd_pretrain_sync(args) -> int:
    cfg = get_config(args)
    corpus = get_corpus(cfg)
    expert, report = pretrain_sync(cfg, corpus)
    model = Model.from_corpus(cfg, corpus, expert)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt.save(model.to_checkpoint(), out / "expert.ckpt")
    write_manifest(out, "pretrain-sync", cfg, {"report": report})
    print(f"held-out margin {report['heldout_margin']:.3f}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = get_config(args)
    if args.iterations is not None:
        cfg = cfg.replace(iterations=args.iterations)
    corpus = get_corpus(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.expert:
        expert = load_model(args.expert).expert
        report = None
    else:
        expert, report = pretrain_sync(cfg, corpus)
    trainer = Trainer(cfg, corpus, expert)
    log_path = out / "metrics.jsonl"

    with log_path.open("w") as fh:

        def callback(tr, entry):
            fh.write(json.dumps(entry.as_dict()) + "\n")
            every = cfg.checkpoint_every
            if every and (entry.step + 1) % every == 0:
                ckpt.save(tr.model.to_checkpoint(), out / f"step{entry.step + 1:06d}.ckpt")

        try:
            trainer.run(callback=callback)
        except TrainingAborted as e:
            write_manifest(out, "train", cfg, {"aborted": True, "step": e.step, "diagnostics": e.parts})
            print(f"aborted: {e}", file=sys.stderr)
            return EXIT_NUMERIC
    ckpt.save(trainer.model.to_checkpoint(), out / "final.ckpt")
    write_manifest(out, "train", cfg, {"iterations": trainer.step_count, "expert_report": report,
                                       "checkpoint": "final.ckpt", "metrics_log": log_path.name})
    print(f"trained {trainer.step_count} steps -> {out / 'final.ckpt'}")
    return EXIT_OK


def _audio(corpus, idx, audio_seed):
    if audio_seed is None:
        return corpus.features(idx)
    t = np.asarray(idx) / corpus.cfg.fps
    feats, _ = synthdata.speech_signal(t, audio_seed)
    return feats


def cmd_render(args) -> int:
    cfg = get_config(args)
    model = load_model(args.checkpoint)
    corpus = get_corpus(cfg)
    idx = _indices(corpus, args.frames)
    frames = infer_corpus(model, corpus, idx, feats=_audio(corpus, idx, args.audio_seed))
    out = Path(args.out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    names = []
    for i, f in zip(idx, frames):
        name = f"frames/{int(i):05d}.png"
        save_png(out / name, f)
        names.append(name)
    write_manifest(out, "render", cfg, {"checkpoint": str(args.checkpoint), "frames": names,
                                        "audio_seed": args.audio_seed})
    return EXIT_OK


def cmd_pose_control(args) -> int:
    cfg = get_config(args)
    model = load_model(args.checkpoint)
    corpus = get_corpus(cfg)
    idx = _indices(corpus, args.frames)
    views = [(int(i), corpus.frames[i].image, corpus.frames[i].pose, corpus.frames[i].mouth_box)
             for i in corpus.train_indices]
    offset = synthdata.euler_to_matrix(*np.radians([args.yaw, args.pitch, args.roll]))
    poses = []
    for i in idx:
        p = corpus.frames[i].pose
        poses.append(type(p).from_rt(p.R @ offset, p.t))
    res = pose_control(model, corpus.features(idx), poses, views, idx)
    out = Path(args.out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    names = []
    for i, f in zip(idx, res.frames):
        name = f"frames/{int(i):05d}.png"
        save_png(out / name, f)
        names.append(name)
    write_manifest(out, "pose-control", cfg, {
        "frames": names, "hole_fraction": res.hole_fraction.tolist(), "source_views": res.source_indices,
        "warnings": res.warnings, "offset_deg": [args.yaw, args.pitch, args.roll]})
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = get_config(args)
    model = load_model(args.checkpoint)
    corpus = get_corpus(cfg)
    idx = _indices(corpus, args.frames)
    report = evaluate(model, corpus, idx, seed=cfg.seed)
    write_manifest(Path(args.out), "eval", cfg, {"checkpoint": str(args.checkpoint), "metrics": report})
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_heatmap(args) -> int:
    cfg = get_config(args)
    corpus = get_corpus(cfg)
    model = load_model(args.checkpoint) if args.checkpoint else Model.from_corpus(cfg, corpus)
    warped, valid = zip(*(model.warp_frame_to_canonical(f.image, f.pose) for f in corpus.frames))
    heat = motion_heatmap(np.stack(warped), np.stack(valid))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(heat * 255).astype(np.uint8)).save(out / "heatmap.png")
    ratio = heat_ratio(heat, corpus.canonical.mouth_box)
    write_manifest(out, "heatmap", cfg, {"image": "heatmap.png", "in_out_ratio": ratio})
    print(f"in-mouth / out-of-mouth heat ratio {ratio:.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lipfield", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML training config (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, "render the synthetic corpus to disk")
    sp.add_argument("--out", required=True)
    sp = add("pretrain-sync", cmd_pretrain_sync, "pretrain and freeze the sync expert")
    sp.add_argument("--out", required=True)
    sp = add("train", cmd_train, "train field, depth and Blend-Net")
    sp.add_argument("--out", required=True)
    sp.add_argument("--expert", help="checkpoint holding a pretrained expert")
    sp.add_argument("--iterations", type=int)
    sp = add("render", cmd_render, "synthesise frames from speech features")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--frames", default="test", help="test, train, all or a comma list of indices")
    sp.add_argument("--audio-seed", type=int, default=None, help="drive with another seed's speech")
    sp = add("pose-control", cmd_pose_control, "synthesise frames at rotated head poses")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--frames", default="test")
    sp.add_argument("--yaw", type=float, default=0.0)
    sp.add_argument("--pitch", type=float, default=0.0)
    sp.add_argument("--roll", type=float, default=0.0)
    sp = add("eval", cmd_eval, "held-out metrics for a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--frames", default="test")
    sp = add("heatmap", cmd_heatmap, "motion heatmap of canonical-warped frames")
    sp.add_argument("--out", required=True)
    sp.add_argument("--checkpoint")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # argparse uses 2 for usage errors; keep 2 for numerical aborts
        return EXIT_OK if e.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingAborted as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, InferenceError, SyncError, ckpt.CheckpointError, synthdata.SceneError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
