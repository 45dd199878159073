"""Command-line entry point.

Every command prints a JSON run report on stdout, ``{"run": ..., "result": ...}``,
and writes the same report to ``--out`` when that flag is given. Tables that
are grids go to CSV files named after ``--out``. Exit status: 0 on success,
1 when inputs fail validation, 2 on usage errors.
"""

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .activation import energy_map
from .classifier import DEFAULT_EPSILON, compare_descriptors, likelihood
from .errors import ActiHueError, ConfigError, ManifestError
from .experiments import energy_summary
from .formats import (
    ManifestRecord,
    read_ahue,
    read_index,
    read_manifest,
    write_ahue,
    write_index,
    write_manifest,
)
from .geometry import angular_bias_report, collect_matches, location_histogram, radial_tangential
from .hueloss import LABEL_MODES, gradcheck
from .memory import DEFAULT_K, MemoryStore
from .synth import ActivationSynthSpec, SynthSpec, synth_activations, synth_generate
from .trainer.train import LOSS_MODES, TrainConfig, compare, train

GRADCHECK_TOL = 1e-5


class UsageError(Exception):
    """Flag combinations argparse cannot express; exits with status 2."""


def _save_csv(grid, path):
    np.savetxt(path, np.asarray(grid), fmt="%.17g", delimiter=",")
    return str(path)


def _sidecar(out, suffix):
    if out is None:
        return None
    out = Path(out)
    return out.with_name(f"{out.stem}.{suffix}.csv")


def _load_queries(manifest):
    return [(read_ahue(r.path), r.class_id, r.image_id) for r in read_manifest(manifest)]


# index build


def cmd_index_build(args):
    records = read_manifest(args.manifest)
    if not records:
        raise ManifestError(f"manifest {args.manifest} is empty")
    store = MemoryStore()
    skipped = 0
    for rec in records:
        skipped += store.insert(read_ahue(rec.path), rec.class_id, rec.image_id)
    store.freeze(args.mode, n_trees=args.trees, leaf_size=args.leaf_size, seed=args.seed, search_k=args.search_k)
    write_index(store, args.index_out)
    return {
        "index": str(args.index_out),
        "entries": len(store),
        "dim": store.dim,
        "mode": args.mode,
        "skipped_zero_pixels": skipped,
        "class_counts": {str(c): n for c, n in sorted(store.class_counts.items())},
    }


# classify


def cmd_classify(args):
    if args.leave_one_out and args.image_id is None:
        raise UsageError("--leave-one-out needs --image-id")
    store = read_index(args.index)
    img = read_ahue(args.query)
    table = likelihood(
        img,
        store,
        args.k,
        args.epsilon,
        mode=args.mode,
        exclude_image=args.image_id if args.leave_one_out else None,
        keep_matches=args.matches_out is not None,
    )
    result = table.to_dict()
    if args.matches_out is not None:
        rows = []
        for m in table.matches:
            for rank, (i, d, kv) in enumerate(zip(m.indices, m.distances, m.kernel_values)):
                rows.append([m.pixel, rank, i, store.class_ids[i], store.image_ids[i], d, kv])
        header = "pixel,rank,entry,class_id,image_id,distance,kernel"
        np.savetxt(args.matches_out, np.array(rows, dtype=np.float64).reshape(-1, 7),
                   fmt=["%d"] * 5 + ["%.17g"] * 2, delimiter=",", header=header, comments="")
        result["per_pixel_matches_path"] = str(args.matches_out)
    return result


# stats


def _records(args, queries):
    store = read_index(args.index)
    return collect_matches(queries, store, args.k, args.epsilon, args.leave_one_out, args.mode)


def cmd_stats(args):
    queries = _load_queries(args.queries)
    if not queries:
        raise ManifestError(f"manifest {args.queries} is empty")
    kind = args.kind
    outputs = {}
    if kind == "energy":
        summary = energy_summary([q[0] for q in queries])
        path = _sidecar(args.out, "energy")
        if path is not None:
            outputs["mean_map"] = _save_csv(summary["mean_map"], path)
        per_image = {str(iid): float(energy_map(img).sum()) for img, _, iid in queries}
        return {**summary, "total_energy": per_image, "outputs": outputs}
    if kind == "descriptors":
        if args.memory is None:
            raise UsageError("stats descriptors needs --memory")
        memory = [(img, c) for img, c, _ in _load_queries(args.memory)]
        table = compare_descriptors(memory, [(img, c) for img, c, _ in queries], args.k, args.epsilon)
        return {"accuracy": table, "n_memory": len(memory), "n_queries": len(queries)}
    if args.index is None:
        raise UsageError(f"stats {kind} needs --index")
    records = _records(args, queries)
    if kind == "matches":
        h, w = queries[0][0].height, queries[0][0].width
        result = {"n_records": len(records), "histograms": {}}
        for which in ("all", "same", "different"):
            grid = location_histogram(records, w, h, which, args.bins)
            result["histograms"][which] = grid.tolist()
            path = _sidecar(args.out, f"hist_{which}")
            if path is not None:
                outputs[which] = _save_csv(grid, path)
        result["outputs"] = outputs
        return result
    if kind == "angular":
        report = angular_bias_report(records, args.weight)
        return {"n_records": len(records), "classes": {str(c): b.to_dict() for c, b in sorted(report.items())}}
    if kind == "radtan":
        out = {}
        for which in ("all", "same", "different"):
            out[which] = radial_tangential(records, which).to_dict()
        return {"n_records": len(records), **out}
    raise UsageError(f"unknown stats kind {kind!r}")


# loss gradcheck


def cmd_gradcheck(args):
    rep = gradcheck(args.trials, args.seed, args.classes, args.mode, args.h, args.exclusion, args.project)
    if not args.per_trial:
        rep.pop("per_trial")
    rep["tolerance"] = GRADCHECK_TOL
    rep["passed"] = rep["max_relative_error"] < GRADCHECK_TOL
    return rep


# train


class _Arrays:
    def __init__(self, images, labels):
        self.images = images
        self.labels = labels


def _training_data(args):
    if args.data == "synth":
        spec = SynthSpec(classes=args.classes, per_class=args.per_class)
        return synth_generate(spec, args.seed)
    records = read_manifest(Path(args.data) / "manifest.jsonl")
    if not records:
        raise ManifestError(f"no records in {args.data}")
    images = [read_ahue(r.path).data for r in records]
    if len({im.shape for im in images}) != 1:
        raise ConfigError("all training images must share one shape")
    return _Arrays(np.stack(images), np.array([r.class_id for r in records], dtype=np.int64))


def cmd_train(args):
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        lr_min=args.lr_min,
        seed=seeds[0],
        loss_mode=args.loss if args.loss != "both" else LOSS_MODES[0],
        label_mode=args.label_mode,
        folds=args.folds,
        hflip=not args.no_hflip,
        random_crop_pad=args.crop_pad,
        hue_weight=args.hue_weight,
        project_prediction=args.project,
        hue_hidden=args.hue_hidden,
    )
    config.validate()
    dataset = _training_data(args)
    if args.loss == "both" or len(seeds) > 1:
        modes = LOSS_MODES if args.loss == "both" else (args.loss,)
        return compare(dataset, config, seeds, modes)
    return train(dataset, config).to_dict()


# synth generate


def cmd_synth(args):
    out = Path(args.out_dir)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"{out} is not a directory")
    if out.exists() and any(out.iterdir()):
        raise ConfigError(f"{out} exists and is not empty")
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "images":
        ds = synth_generate(SynthSpec(classes=args.classes, per_class=args.per_class), args.seed)
        images = ds.activation_images()
        ids = range(args.id_offset, args.id_offset + len(images))
    else:
        spec = ActivationSynthSpec(classes=args.classes, per_class=args.per_class)
        ds = synth_activations(spec, args.seed, args.id_offset)
        images, ids = ds.images, ds.image_ids.tolist()
    records = []
    for img, c, iid in zip(images, ds.labels.tolist(), ids):
        path = out / f"img_{iid:06d}.ahue"
        write_ahue(img, path)
        records.append(ManifestRecord(path, int(c), int(iid)))
    write_manifest(records, out / "manifest.jsonl")
    return {"dir": str(out), "manifest": str(out / "manifest.jsonl"), "n_images": len(records), "kind": args.kind, "spec": asdict(ds.spec)}


# parser


def _add_common(p, seed=True):
    p.add_argument("--out", type=Path, help="also write the JSON run report here")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="single seed for all randomness (default 0)")


def _add_retrieval(p):
    p.add_argument("--k", type=int, default=DEFAULT_K, help="neighbors per query pixel (default 10)")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="kernel bandwidth floor (default 1e-8)")
    p.add_argument("--mode", choices=("exact", "tree"), help="search mode (default: the index's frozen mode)")
    p.add_argument("--leave-one-out", action="store_true", help="exclude the query's own image from its neighbors")


def build_parser():
    parser = argparse.ArgumentParser(prog="actihue", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"actihue {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    idx = sub.add_parser("index", help="memory index operations").add_subparsers(dest="action", required=True)
    p = idx.add_parser("build", help="build and freeze an AHIX index from a manifest of AHUE files")
    p.add_argument("--manifest", required=True, type=Path, help="JSON-lines manifest {path, class_id, image_id}")
    p.add_argument("--index-out", required=True, type=Path, help="AHIX file to write")
    p.add_argument("--mode", choices=("exact", "tree"), default="exact", help="default search mode (default exact)")
    p.add_argument("--trees", type=int, default=32, help="projection trees in tree mode (default 32)")
    p.add_argument("--leaf-size", type=int, default=16, help="max entries per tree leaf (default 16)")
    p.add_argument("--search-k", type=int, help="candidate budget per tree query (default trees*k*8)")
    _add_common(p)
    p.set_defaults(func=cmd_index_build)

    p = sub.add_parser("classify", help="classify one AHUE image against a frozen index")
    p.add_argument("--index", required=True, type=Path, help="frozen AHIX index")
    p.add_argument("--query", required=True, type=Path, help="AHUE query image")
    _add_retrieval(p)
    p.add_argument("--image-id", type=int, help="image id of the query, used with --leave-one-out")
    p.add_argument("--matches-out", type=Path, help="CSV of per-pixel neighbors and kernel values")
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("stats", help="match statistics over a query manifest")
    p.add_argument("kind", choices=("energy", "matches", "angular", "radtan", "descriptors"))
    p.add_argument("--queries", required=True, type=Path, help="manifest of query AHUE files")
    p.add_argument("--index", type=Path, help="frozen AHIX index (matches, angular, radtan)")
    p.add_argument("--memory", type=Path, help="manifest of memory AHUE files (descriptors)")
    _add_retrieval(p)
    p.add_argument("--bins", type=int, help="histogram bins per axis (default: activation resolution)")
    p.add_argument("--weight", choices=("uniform", "kernel"), default="uniform", help="circular mean weighting")
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_stats)

    loss = sub.add_parser("loss", help="hue loss tools").add_subparsers(dest="action", required=True)
    p = loss.add_parser("gradcheck", help="analytic vs finite-difference hue-loss gradients")
    p.add_argument("--classes", type=int, help="class count M (default: random in [2, 10] per trial)")
    p.add_argument("--trials", type=int, default=200, help="random configurations (default 200)")
    p.add_argument("--mode", choices=LABEL_MODES, default="equally_spaced", help="label layout")
    p.add_argument("--h", type=float, default=1e-6, help="finite-difference step (default 1e-6)")
    p.add_argument("--exclusion", type=float, default=1e-4, help="min distance of predictions from labels")
    p.add_argument("--project", action="store_true", help="project predictions onto the unit circle")
    p.add_argument("--per-trial", action="store_true", help="include per-trial errors in the report")
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train TinyNet with one-hot or one-hot + hue loss")
    p.add_argument("--data", default="synth", help="'synth' or a directory holding manifest.jsonl")
    p.add_argument("--loss", choices=(*LOSS_MODES, "both"), default="onehot_hue", help="loss mode")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3, help="initial learning rate")
    p.add_argument("--lr-min", type=float, default=0.0, help="cosine floor")
    p.add_argument("--folds", type=int, default=5, help="stratified folds, 0 trains on everything")
    p.add_argument("--label-mode", choices=LABEL_MODES, default="random_permutation")
    p.add_argument("--hue-weight", type=float, default=1.0)
    p.add_argument("--hue-hidden", type=int, default=0, help="hidden units in the hue head (0 = affine)")
    p.add_argument("--project", action="store_true", help="project hue predictions onto the unit circle")
    p.add_argument("--no-hflip", action="store_true", help="disable horizontal-flip augmentation")
    p.add_argument("--crop-pad", type=int, default=2, help="pad-and-crop augmentation margin")
    p.add_argument("--seeds", help="comma-separated seeds; runs the comparison table")
    p.add_argument("--classes", type=int, default=8, help="synthetic classes (--data synth)")
    p.add_argument("--per-class", type=int, default=100, help="synthetic samples per class (--data synth)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    syn = sub.add_parser("synth", help="synthetic data").add_subparsers(dest="action", required=True)
    p = syn.add_parser("generate", help="write synthetic AHUE files plus manifest.jsonl")
    p.add_argument("--kind", choices=("images", "activations"), default="images",
                   help="RGB blob images for training or planted-angle activations for retrieval")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--id-offset", type=int, default=0, help="first image id, to keep ids unique across sets")
    p.add_argument("--out", dest="out_dir", required=True, type=Path,
                   help="empty or new directory; receives the AHUE files, manifest.jsonl and run.json")
    p.add_argument("--seed", type=int, default=0, help="single seed for all randomness (default 0)")
    p.set_defaults(func=cmd_synth)
    return parser


def _command_name(args):
    action = getattr(args, "action", None) or getattr(args, "kind", None)
    return f"{args.command} {action}" if action else args.command


def _flags(args):
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}


def run_cli(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    start = time.perf_counter()
    try:
        result = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"actihue: error: {exc}", file=sys.stderr)
        return 2
    except (ActiHueError, OSError) as exc:
        print(f"actihue: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    report = {
        "run": {
            "command": _command_name(args),
            "version": __version__,
            "argv": argv,
            "flags": _flags(args),
            "seed": getattr(args, "seed", None),
            "wall_time": time.perf_counter() - start,
        },
        "result": result,
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    out = getattr(args, "out", None)
    if args.command == "synth":
        out = Path(args.out_dir) / "run.json"
    if out is not None:
        try:
            Path(out).write_text(text + "\n")
        except OSError as exc:
            print(f"actihue: IoFailure: cannot write {out}: {exc}", file=sys.stderr)
            return 1
    print(text)
    if args.command == "loss" and not result["passed"]:
        return 1
    return 0


def replay_argv(report: dict, **overrides) -> list:
    """argv that reruns ``report``; ``overrides`` replace flag values, e.g. ``out=...``."""
    argv = list(report["run"]["argv"])
    for name, value in overrides.items():
        flag = "--" + name.replace("_", "-")
        if flag in argv:
            argv[argv.index(flag) + 1] = str(value)
        else:
            argv += [flag, str(value)]
    return argv


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
