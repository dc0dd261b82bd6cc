"""Command-line entry point: ``bacnn {train,eval,gradcheck,export-mask}``.

Exit codes: 0 success, 2 input/format error, 3 configuration error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attention import write_mask_csv
from .data import check_pair, extract_patches, file_digest, load_cube, load_labels, normalize_bands
from .errors import ConfigError, ContractError, DataError, FormatError, NumericalError, ShapeError
from .gradcheck import run_suite
from .metrics import aggregate, table_csv
from .model import VARIANTS, NetworkSpec, build
from .seeding import stream
from .tensor import no_grad
from .training import (DatasetSetup, TrainConfig, evaluate, load_training_checkpoint, run_ablation, save_training_checkpoint,
                       train, write_history_csv)

log = logging.getLogger("bacnn")

PRESETS = {
    "indian": {"split": "indian", "replicate": 80, "fraction": 0.10},
    "ksc": {"split": "fraction", "replicate": 0, "fraction": 0.10},
    "custom": {"split": "fraction", "replicate": 0, "fraction": 0.10},
}


def artifact_hash() -> str:
    """SHA-256 over this package's source files, in sorted order."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for path in sorted(root.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def read_kv(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line and "=" in line:
                k, v = line.split("=", 1)
                out[k] = v
    return out


def write_kv(path, items: dict) -> None:
    with open(path, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k}={v}\n")


# ---------------------------------------------------------------------------
# shared pipeline


def _opt_float(v):
    return None if v in (None, "", "None") else float(v)


def prepare_setup(dataset: str, cube_path, labels_path, seed: int, *, fraction=None, replicate=None,
                  train_subsample=None, norm_train_only=False, patch: int = 15) -> DatasetSetup:
    """Load, normalize and patch a dataset; returns the split recipe for ``seed``."""
    if dataset not in PRESETS:
        raise ConfigError(f"unknown dataset {dataset!r}; choose from {sorted(PRESETS)}")
    preset = PRESETS[dataset]
    cube = load_cube(cube_path)
    labels = load_labels(labels_path)
    check_pair(cube, labels, dataset)
    setup = DatasetSetup(
        name=dataset,
        patches=extract_patches(cube, labels, patch),
        split=preset["split"],
        fraction=preset["fraction"] if fraction is None else fraction,
        replicate_target=preset["replicate"] if replicate is None else replicate,
        train_subsample=train_subsample,
    )
    if norm_train_only:
        train_set, _ = setup.make_split(seed)
        pixels = np.unique(train_set.coords, axis=0)
        setup.patches = extract_patches(normalize_bands(cube, pixels), labels, patch)
    else:
        setup.patches = extract_patches(normalize_bands(cube), labels, patch)
    return setup


def _setup_from_manifest(man: dict, cube=None, labels=None) -> DatasetSetup:
    return prepare_setup(
        man["dataset"], cube or man["cube"], labels or man["labels"], int(man["seed"]),
        fraction=float(man["fraction"]), replicate=int(man["replicate"]),
        train_subsample=_opt_float(man.get("train_subsample")),
        norm_train_only=man.get("norm_train_only") == "True", patch=int(man.get("patch", 15)),
    )


def _load_run(run_dir: Path, cube=None, labels=None):
    man = read_kv(run_dir / "manifest.txt")
    spec = NetworkSpec.from_text((run_dir / "network.cfg").read_text())
    setup = _setup_from_manifest(man, cube, labels)
    if setup.patches.num_classes != spec.num_classes:
        raise ConfigError(f"checkpoint has {spec.num_classes} classes, label map has {setup.patches.num_classes}")
    if setup.patches.bands != spec.bands:
        raise ConfigError(f"checkpoint expects {spec.bands} bands, cube has {setup.patches.bands}")
    net = build(spec, stream(int(man["seed"]), "init"))
    load_training_checkpoint(net, run_dir / "model.ckpt")
    return man, spec, setup, net


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    setup = prepare_setup(args.dataset, args.cube, args.labels, args.seed, fraction=args.fraction,
                          replicate=args.replicate, train_subsample=args.train_subsample,
                          norm_train_only=args.norm_train_only)
    train_set, test_set = setup.make_split(args.seed)
    spec = NetworkSpec(args.variant, setup.patches.num_classes, setup.patches.bands, r=args.r,
                       mask_activation=args.mask_activation)
    net = build(spec, stream(args.seed, "init"))
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, seed=args.seed, r=args.r, variant=args.variant,
                      lr=args.lr, mask_activation=args.mask_activation, checkpoint_every=args.checkpoint_every)
    log.info("training %s on %d patches (%d test), %d epochs", args.variant, len(train_set), len(test_set), args.epochs)
    result = train(net, train_set, cfg, checkpoint_dir=out,
                   on_epoch=lambda e, l, a: log.info("epoch %d loss %.6f train_acc %.4f", e, l, a))
    (out / "network.cfg").write_text(spec.to_text())
    save_training_checkpoint(net, result.optimizer, out / "model.ckpt")
    write_history_csv(result.history, out / "history.csv")
    write_kv(out / "manifest.txt", {
        "command": "train",
        "version": __version__,
        "artifact_hash": artifact_hash(),
        "dataset": args.dataset,
        "cube": os.path.abspath(args.cube),
        "labels": os.path.abspath(args.labels),
        "cube_sha256": file_digest(args.cube),
        "labels_sha256": file_digest(args.labels),
        "seed": args.seed,
        "variant": args.variant,
        "r": args.r,
        "mask_activation": args.mask_activation,
        "epochs": args.epochs,
        "batch": args.batch,
        "lr": args.lr,
        "split_rule": setup.split,
        "fraction": setup.fraction,
        "replicate": setup.replicate_target or 0,
        "train_subsample": setup.train_subsample,
        "norm_train_only": bool(args.norm_train_only),
        "patch": setup.patches.size,
        "train_size": len(train_set),
        "test_size": len(test_set),
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
    })
    print(f"wrote {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    if args.run:
        run = Path(args.run)
        man, spec, setup, net = _load_run(run, args.cube, args.labels)
        _, test_set = setup.make_split(int(man["seed"]))
        _, report = evaluate(net, test_set)
        text = table_csv({spec.variant: aggregate([report])})
        dest = Path(args.out) if args.out else run / "metrics.csv"
    else:
        if not (args.cube and args.labels):
            raise ConfigError("eval needs --run DIR, or --cube/--labels with --repeats")
        variants = args.variants.split(",")
        bad = [v for v in variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variants {bad}")
        setup = prepare_setup(args.dataset, args.cube, args.labels, args.seed, fraction=args.fraction,
                              replicate=args.replicate, train_subsample=args.train_subsample,
                              norm_train_only=args.norm_train_only)
        cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, seed=args.seed, r=args.r, lr=args.lr,
                          mask_activation=args.mask_activation)
        report = run_ablation([setup], variants, args.repeats, cfg,
                              progress=lambda rec: log.info("%s seed %d OA %.4f", rec.variant, rec.seed, rec.report.oa))
        text = report.csv(setup.name)
        dest = Path(args.out) if args.out else Path("metrics.csv")
    dest.write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(trials=args.trials, seed=args.seed, tol=args.tol)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.op:<16} max_rel_err={r.max_rel_err:.3e} trials={r.trials}")
    return 0 if all(r.passed for r in results) else 4


def cmd_export_mask(args) -> int:
    run = Path(args.run)
    man, spec, setup, net = _load_run(run, args.cube, args.labels)
    if net.head is None or spec.variant != "bam_cm":
        raise ConfigError(f"export-mask needs a bam_cm checkpoint, this run is {spec.variant}")
    _, test_set = setup.make_split(int(man["seed"]))
    idx = np.arange(min(args.samples, len(test_set))) if args.samples else np.arange(len(test_set))
    total = np.zeros(spec.bands)
    with no_grad():
        for i in range(0, idx.size, 256):
            total += net.mask(test_set.patches(idx[i:i + 256]), "eval").values.sum(axis=0)
    dest = Path(args.out) if args.out else run / "mask.csv"
    write_mask_csv(total / idx.size, dest)
    print(f"wrote {dest}")
    return 0


# ---------------------------------------------------------------------------


def _add_data_flags(p, required=True):
    p.add_argument("--dataset", choices=sorted(PRESETS), default="custom")
    p.add_argument("--cube", required=required)
    p.add_argument("--labels", required=required)
    p.add_argument("--fraction", type=float, default=None, help="training fraction for fraction-rule splits")
    p.add_argument("--replicate", type=int, default=None, help="minority replication target (0 disables)")
    p.add_argument("--train-subsample", type=float, default=None)
    p.add_argument("--norm-train-only", action="store_true", help="band statistics from training pixels only")


def _add_train_flags(p):
    p.add_argument("--r", type=float, default=2.0)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask-activation", choices=("relu", "sigmoid", "softmax"), default="sigmoid")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bacnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one network and write checkpoint, history and manifest")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--variant", choices=VARIANTS, default="bam_cm")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained run, or run a repeated ablation")
    p.add_argument("--run", help="run directory written by train")
    _add_data_flags(p, required=False)
    _add_train_flags(p)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--variants", default="cm,se_cm,bam_cm")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-mask", help="mean band mask of a bam_cm run as band,weight CSV")
    p.add_argument("--run", required=True)
    p.add_argument("--cube")
    p.add_argument("--labels")
    p.add_argument("--samples", type=int, default=0, help="use the first N test patches (0 = all)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_mask)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FormatError, DataError, FileNotFoundError, IsADirectoryError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, ContractError, ShapeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
