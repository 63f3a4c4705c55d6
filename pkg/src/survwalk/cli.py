"""Command line pipeline: simulate -> train -> embed -> walk -> eval.

Exit codes: 0 success, 1 usage error, 2 data or format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .config import RunConfig, load_config
from .errors import ConfigError, SurvwalkError
from .evalkit import embed, evaluate
from .hazardwalk import WalkConfig, run_walk
from .images import emit_image_grid
from .survdata import SimulationConfig, load_idx, simulate
from .train import train

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _data_file(data_dir: str, split: str) -> Path:
    path = Path(data_dir)
    return path if path.is_file() else path / f"{split}.svhw"


def _test_seed(seed: int) -> int:
    return seed + 1_000_003


def cmd_simulate(args) -> int:
    cfg = load_config(args.config).override(**{"simulation.seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = cfg.simulation
    save_dataset(out / "train.svhw", simulate(sim))
    save_dataset(out / "test.svhw", simulate(replace(sim, seed=_test_seed(sim.seed))))
    print(json.dumps({"train": str(out / "train.svhw"), "test": str(out / "test.svhw")}))
    return 0


def cmd_import_idx(args) -> int:
    cfg = load_config(args.config)
    sim = cfg.simulation if args.seed is None else replace(cfg.simulation, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(out / f"{args.split}.svhw", load_idx(args.images, args.labels, sim))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config).override(
        epochs=args.epochs,
        batch_size=args.batch_size,
        latent_dim=args.latent_dim,
        beta=args.beta,
        tau=args.tau,
        lr_vae=args.lr_vae,
        lr_cox=args.lr_cox,
        seed=args.seed,
    )
    data = load_dataset(_data_file(args.data, "train"))
    resume = load_checkpoint(args.resume) if args.resume else None
    ckpt = train(cfg, data, resume)
    save_checkpoint(args.out, ckpt)
    last = ckpt.history[-1] if ckpt.history else {}
    print(json.dumps({"checkpoint": args.out, "epoch": ckpt.epoch, **{k: v for k, v in last.items() if k != "epoch"}}))
    return 0


def cmd_embed(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    data = load_dataset(_data_file(args.data, args.split))
    embed(ckpt.model, data).to_csv(args.out)
    return 0


def _walk_one(model, data, index, wcfg, out: Path, cohort_mean: float) -> dict:
    traj = run_walk(data.features[index], model, wcfg)
    stem = f"walk_{index}_{wcfg.direction}"
    traj.to_csv(out / f"{stem}.csv")
    emit_image_grid(traj.frames, len(traj.frames), out / f"{stem}.pgm", data.image_shape)
    h = traj.hazards
    first, last = traj.records[0], traj.records[-1]
    return {
        "index": index,
        "direction": wcfg.direction,
        "status": traj.status,
        "iterations": last.iteration,
        "expected_hazard_start": float(h[0]),
        "expected_hazard_end": float(h[-1]),
        # exp(r - mean cohort r): hazard relative to the average subject
        "relative_hazard_start": float(np.exp(model.risk(first.latent.mu.data) - cohort_mean)),
        "relative_hazard_end": float(np.exp(model.risk(last.latent.mu.data) - cohort_mean)),
        "csv": str(out / f"{stem}.csv"),
        "pgm": str(out / f"{stem}.pgm"),
    }


def cmd_walk(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    data = load_dataset(_data_file(args.data, args.split))
    indices = [int(i) for part in args.index for i in part.split(",") if i != ""]
    for i in indices:
        if not 0 <= i < len(data):
            raise UsageError(f"index {i} out of range for {len(data)} records")
    wcfg = WalkConfig(
        iterations=args.iters,
        mc_samples=args.samples,
        step_size=args.step,
        direction=args.direction,
        snapshot_every=args.snapshot_every,
        estimator=args.estimator,
        seed=args.seed,
        sample_frames=args.sample_frames,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cohort_mean = float(np.mean(embed(ckpt.model, data).risk))
    with ThreadPoolExecutor(max_workers=max(1, min(len(indices), args.workers))) as pool:
        summaries = list(
            pool.map(lambda i: _walk_one(ckpt.model, data, i, replace(wcfg, seed=wcfg.seed + i), out, cohort_mean), indices)
        )
    (out / "summary.json").write_text(json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summaries, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    data = load_dataset(_data_file(args.data, args.split))
    print(json.dumps(evaluate(ckpt.model, data), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="survwalk", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="write train/test glyph datasets")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("import-idx", help="convert MNIST IDX files into a dataset")
    s.add_argument("--images", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--split", default="train")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_import_idx)

    s = sub.add_parser("train", help="optimise the Cox-regularised VAE")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--resume")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--latent-dim", type=int)
    s.add_argument("--beta", type=float)
    s.add_argument("--tau", type=float)
    s.add_argument("--lr-vae", type=float)
    s.add_argument("--lr-cox", type=float)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("embed", help="export posterior embeddings as CSV")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("walk", help="run HazardWalk from one or more records")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--index", required=True, action="append", help="record index; repeat or comma-separate")
    s.add_argument("--direction", choices=["increase", "decrease"], default="increase")
    s.add_argument("--iters", type=int, default=1500)
    s.add_argument("--samples", type=int, default=128)
    s.add_argument("--step", type=float, default=1e-2)
    s.add_argument("--snapshot-every", type=int, default=100)
    s.add_argument("--estimator", choices=["closed_form", "monte_carlo"], default="closed_form")
    s.add_argument("--sample-frames", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=4)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_walk)

    s = sub.add_parser("eval", help="print C-index, rank agreement and reconstruction NLL")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"survwalk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"survwalk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SurvwalkError, OSError) as exc:
        print(f"survwalk: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
