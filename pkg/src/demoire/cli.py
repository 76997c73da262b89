"""Command-line entry point: ``demoire <command> [options]``.

Relative paths resolve against ``--workdir``.  Exit status is 0 on success,
1 on a usage error and 2 when the command itself fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2
CONFIG_NAME = "config.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    p.add_argument("--workdir", type=Path, default=Path("."), help="base directory for relative paths")
    p.add_argument("--config", default=CONFIG_NAME, help="experiment config (JSON)")
    return p


def _lengths(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="demoire", description="Toy RAW demoireing experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="build a synthetic paired dataset")
    p.add_argument("--out", default=None, help="dataset root (default: config data root)")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--size", type=int)

    p = sub.add_parser("train", parents=[common], help="train the network or the velocity field")
    p.add_argument("target", choices=("net", "flow"), nargs="?", default="net")
    p.add_argument("--data", default=None, help="dataset root")
    p.add_argument("--out", default=None, help="output directory (default runs/<target>)")
    p.add_argument("--resume", action="store_true", help="continue from <out>/last.ckpt")
    p.add_argument("--epochs-phase1", type=int)
    p.add_argument("--epochs-phase2", type=int)
    p.add_argument("--steps", type=int, help="velocity-field training steps")
    p.add_argument("--max-train", type=int)

    p = sub.add_parser("predict", parents=[common], help="run a trained network on a dataset split")
    p.add_argument("--checkpoint", default="runs/net/best.ckpt")
    p.add_argument("--data", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default="pred")

    p = sub.add_parser("refine", parents=[common], help="flow-prior refinement of a PNG directory")
    p.add_argument("--input", required=True, help="directory of restored PNGs")
    p.add_argument("--flow", default="runs/flow/flow.ckpt")
    p.add_argument("--out", required=True)
    p.add_argument("--t0", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--n-iters", type=int)
    p.add_argument("--n-samples", type=int)

    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM report")
    p.add_argument("--pred", required=True, help="directory of PNGs")
    p.add_argument("--gt", required=True, help="directory of PNGs, or a dataset root")
    p.add_argument("--split", default="test", help="split when --gt is a dataset root")
    p.add_argument("--csv", default=None, help="write per-sample rows here")

    p = sub.add_parser("sweep", parents=[common], help="PSNR against refinement iteration")
    p.add_argument("--input", required=True, help="restored PNG or directory")
    p.add_argument("--reference", required=True, help="clean PNG or directory")
    p.add_argument("--flow", default="runs/flow/flow.ckpt")
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--t0", type=float)
    p.add_argument("--dt", type=float, default=0.001)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--out", default="sweep.csv")

    p = sub.add_parser("bench", parents=[common], help="attention time/state scaling")
    p.add_argument("--lengths", type=_lengths, default=[256, 1024, 4096])
    p.add_argument("--variants", default="softmax,compressed,ttt")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")

    p = sub.add_parser("config", help="experiment config helpers")
    csub = p.add_subparsers(dest="config_command", required=True, parser_class=_Parser)
    c = csub.add_parser("init", parents=[common], help="write a default config")
    c.add_argument("--force", action="store_true")
    return parser


# --- helpers -------------------------------------------------------------------------


def _path(args, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else args.workdir / p


def _load_config(args):
    from .trainer import ExperimentConfig

    path = _path(args, args.config)
    cfg = ExperimentConfig.load(path) if path.exists() else ExperimentConfig()
    if args.seed is not None:
        cfg.network.seed = cfg.train.seed = cfg.flow_train.seed = args.seed
        cfg.refine["seed"] = args.seed
    return cfg


def _data_root(args, cfg) -> Path:
    """``--data`` (``--out`` for synth), else the environment override, else the config."""
    from .synth import DATA_ROOT_ENV, resolve_data_root

    value = args.out if args.command == "synth" else args.data
    if value is None and not os.environ.get(DATA_ROOT_ENV):
        value = cfg.data.root
    return resolve_data_root(value, args.workdir)


def _png_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    files = sorted(directory.glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG files in {directory}")
    return files


def _load_images(path: Path) -> tuple[list[str], np.ndarray]:
    from .synth import load_png

    files = [path] if path.is_file() else _png_files(path)
    return [f.stem for f in files], np.stack([load_png(f) for f in files])


def _refine_config(args, cfg, **overrides):
    from .flow import FlowConfig

    d = dict(cfg.refine)
    for key in ("t0", "dt", "n_iters", "n_samples"):
        if getattr(args, key, None) is not None:
            d[key] = getattr(args, key)
    d.update(overrides)
    return FlowConfig(**d)


# --- commands ------------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synth import build_dataset

    cfg = _load_config(args)
    d = cfg.data
    root = _data_root(args, cfg)
    seed = args.seed if args.seed is not None else 0
    manifest = build_dataset(
        root,
        args.n_train or d.n_train,
        args.n_val or d.n_val,
        args.n_test or d.n_test,
        size=args.size or d.size,
        seed=seed,
    )
    print(f"wrote {len(manifest.samples)} samples to {root}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import TrainConfig, train_flow, train_network

    cfg = _load_config(args)
    root = _data_root(args, cfg)
    out = _path(args, args.out or f"runs/{args.target}")
    if args.target == "net":
        tdict = cfg.train.to_dict()
        for key in ("epochs_phase1", "epochs_phase2", "max_train"):
            if getattr(args, key) is not None:
                tdict[key] = getattr(args, key)
        res = train_network(cfg.network, TrainConfig.from_dict(tdict), root, out, resume=args.resume, log=print)
        print(f"best checkpoint: {res.best_checkpoint}")
    else:
        fcfg = cfg.flow_train
        if args.steps is not None:
            fcfg.steps = args.steps
        if args.max_train is not None:
            fcfg.max_train = args.max_train
        train_flow(fcfg, root, out, log=print)
        print(f"velocity field: {out / 'flow.ckpt'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .synth import DatasetManifest, save_png
    from .trainer import load_network

    cfg = _load_config(args)
    net, _ = load_network(_path(args, args.checkpoint))
    split = DatasetManifest.load(_data_root(args, cfg)).load_split(args.split)
    start = time.perf_counter()
    pred = np.clip(net.predict(split["raw"]), 0.0, 1.0)
    out = _path(args, args.out)
    out.mkdir(parents=True, exist_ok=True)
    for sid, img in zip(split["ids"], pred):
        save_png(out / f"{sid}.png", img)
    print(f"wrote {len(pred)} predictions to {out} ({time.perf_counter() - start:.2f}s)")
    return EXIT_OK


def cmd_refine(args) -> int:
    from .flow import tfmp_refine
    from .synth import save_png
    from .trainer import load_flow

    cfg = _load_config(args)
    fcfg = _refine_config(args, cfg)
    vf = load_flow(_path(args, args.flow))
    ids, images = _load_images(_path(args, args.input))
    out = _path(args, args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = {}
    for sid, img in zip(ids, images):
        refined, trace = tfmp_refine(img, vf, fcfg)
        save_png(out / f"{sid}.png", np.clip(refined, 0.0, 1.0))
        traces[sid] = [{"iteration": e.iteration, "t": e.t, "digest": e.digest} for e in trace.entries]
    (out / "trace.json").write_text(json.dumps(traces, indent=2, sort_keys=True) + "\n")
    print(f"refined {len(ids)} images into {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import MetricsReport
    from .synth import DatasetManifest, load_png

    pred_dir, gt_path = _path(args, args.pred), _path(args, args.gt)
    start = time.perf_counter()
    ids, pred = _load_images(pred_dir)
    if (gt_path / "manifest.json").exists():
        manifest = DatasetManifest.load(gt_path)
        gt = np.stack([load_png(manifest.path(i, "clean")) for i in ids])
    else:
        missing = [i for i in ids if not (gt_path / f"{i}.png").exists()]
        if missing:
            raise FileNotFoundError(f"no reference for {missing[:5]} in {gt_path}")
        gt = np.stack([load_png(gt_path / f"{i}.png") for i in ids])
    report = MetricsReport.compute(ids, pred, gt, time.perf_counter() - start)
    if args.csv:
        report.to_csv(_path(args, args.csv))
    print(json.dumps(report.summary(), sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .flow import sweep_iterations
    from .trainer import load_flow

    cfg = _load_config(args)
    fcfg = _refine_config(args, cfg, n_iters=args.iters)
    vf = load_flow(_path(args, args.flow))
    _, x = _load_images(_path(args, args.input))
    _, ref = _load_images(_path(args, args.reference))
    rows = sweep_iterations(x, vf, fcfg, ref, _path(args, args.out))
    best = max(rows, key=lambda r: r[2])
    print(f"{len(rows)} rows; peak psnr {best[2]:.3f} dB at iteration {best[0]}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .attention import ScalingReport, bench_scaling

    variants = [v for v in args.variants.split(",") if v]
    unknown = sorted(set(variants) - {"softmax", "compressed", "ttt"})
    if unknown:
        raise UsageError(f"unknown variants: {unknown}")
    report = ScalingReport()
    for v in variants:
        bench_scaling(v, args.lengths, repeats=args.repeats, seed=args.seed or 0, report=report)
    text = report.to_csv()
    if args.out:
        _path(args, args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_config(args) -> int:
    from .trainer import ExperimentConfig

    path = _path(args, args.config)
    if path.exists() and not args.force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")
    cfg = ExperimentConfig()
    if args.seed is not None:
        cfg.network.seed = cfg.train.seed = cfg.flow_train.seed = args.seed
        cfg.refine["seed"] = args.seed
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg.save(path)
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
    "config": cmd_config,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return EXIT_OK if not e.code else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"demoire: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # runtime failure: report and exit 2
        print(f"demoire {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
