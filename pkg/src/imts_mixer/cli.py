"""Command-line entry point: generate | train | eval | gradcheck | ablate-blocks.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command that writes files also writes a manifest JSON with the exact
argument vector, configuration, seeds, input hashes and output paths.
"""
import argparse
import csv
import hashlib
import json
import logging
import os
import statistics
import sys

import numpy as np

from . import __version__
from .config import MHA_HEADS, SEARCH_GRID, ConfigError, TrainConfig, dump_config, load_config
from .data import (NormStats, SchemaError, apply_normalize, fit_normalize, load_jsonl,
                   save_jsonl, split_dataset)
from .datagen import SYSTEMS, GenConfig, generate_dataset, get_system, manifest as gen_manifest
from .model import ImtsMixer
from .training import baseline_carry_forward, baseline_mean, evaluate, train

log = logging.getLogger("imts_mixer")


class UsageError(Exception):
    """Bad arguments or configuration (exit code 2)."""


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(path, command, argv, config=None, seed=None, dataset=None, outputs=None,
                   extra=None):
    doc = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "dataset": None if dataset is None else {"path": dataset, "sha256": sha256_file(dataset)},
        "outputs": outputs or {},
        "version": __version__,
    }
    if extra:
        doc.update(extra)
    write_json(path, doc)


def _load_dataset(path):
    if not os.path.isfile(path):
        raise UsageError(f"dataset not found: {path}")
    data = load_jsonl(path)
    if not data:
        raise UsageError(f"dataset is empty: {path}")
    return data


def _load_config(path):
    if path is None:
        return TrainConfig()
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    return load_config(path)


def prepare_splits(dataset, split_seed=0):
    """60/20/20 split and normalization fitted on the training part."""
    train_set, val_set, test_set = split_dataset(dataset, split_seed)
    if not train_set or not val_set or not test_set:
        raise UsageError(f"dataset of {len(dataset)} instances is too small to split 60/20/20")
    stats = fit_normalize(train_set)
    norm = lambda split: [apply_normalize(inst, stats) for inst in split]
    return norm(train_set), norm(val_set), norm(test_set), stats


def baseline_metrics(train_set, test_set, batch_size=32):
    out = {}
    for name, model in (("mean", baseline_mean(train_set)),
                        ("carry_forward", baseline_carry_forward(train_set))):
        mse, mae = evaluate(model, test_set, batch_size)
        out[name] = {"test_mse": mse, "test_mae": mae}
    return out


def sample_configs(base, n_samples, seed):
    """Random search candidates over the hyperparameter grid."""
    rng = np.random.default_rng(seed)
    picks = []
    for _ in range(n_samples):
        grid = dict(SEARCH_GRID, n_heads=MHA_HEADS) if base.encoder == "mha" else SEARCH_GRID
        changes = {k: type(v[0])(v[int(rng.integers(len(v)))]) for k, v in grid.items()}
        picks.append(base.replace(**changes))
    return picks


def save_model(path, model):
    np.savez(path, **model.state_dict())


def load_model(directory):
    config = load_config(os.path.join(directory, "config.txt"))
    with open(os.path.join(directory, "stats.json"), encoding="utf-8") as fh:
        stats = NormStats.from_json(json.load(fh))
    model = ImtsMixer(config, stats.mean.size)
    with np.load(os.path.join(directory, "model.npz")) as arrays:
        model.load_state_dict({k: arrays[k] for k in arrays.files})
    return model, config, stats


# --- subcommands ---------------------------------------------------------------

def cmd_generate(args, argv):
    try:
        cfg = GenConfig(n_instances=args.instances, drop=args.drop, obs_fraction=args.obs_fraction,
                        sigma=args.sigma, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    spec = get_system(args.system)
    data = generate_dataset(spec, cfg)
    save_jsonl(data, args.out)
    man_path = args.manifest or os.path.splitext(args.out)[0] + ".manifest.json"
    write_manifest(man_path, "generate", argv, config=gen_manifest(spec, cfg), seed=args.seed,
                   outputs={"dataset": args.out, "dataset_sha256": sha256_file(args.out)})
    print(f"wrote {len(data)} instances to {args.out}")
    return 0


def _train_one(config, splits, progress=None):
    train_set, val_set, test_set, _ = splits
    return train(config, train_set, val_set, test_set, progress=progress)


def cmd_train(args, argv):
    config = _load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    dataset = _load_dataset(args.data)
    splits = prepare_splits(dataset, args.split_seed)
    os.makedirs(args.out, exist_ok=True)

    progress = None
    if args.verbose:
        progress = lambda e, r: log.info("epoch %d train %.6f val %.6f", e, r.train_loss[-1], r.val_mse[-1])

    search = []
    if args.search_samples:
        best = None
        for i, cand in enumerate(sample_configs(config, args.search_samples, config.seed)):
            model, report = _train_one(cand, splits, progress)
            search.append({"config": cand.to_dict(), "best_val_mse": report.best_val_mse})
            log.info("search %d/%d val %.6f", i + 1, args.search_samples, report.best_val_mse)
            if best is None or report.best_val_mse < best[2].best_val_mse:
                best = (cand, model, report)
        config, model, report = best
    else:
        model, report = _train_one(config, splits, progress)

    outputs = {name: os.path.join(args.out, name)
               for name in ("model.npz", "stats.json", "report.json", "config.txt", "manifest.json")}
    save_model(outputs["model.npz"], model)
    write_json(outputs["stats.json"], splits[3].to_json())
    doc = report.to_json()
    doc["baselines"] = baseline_metrics(splits[0], splits[2], config.batch_size)
    if search:
        doc["search"] = search
    write_json(outputs["report.json"], doc)
    with open(outputs["config.txt"], "w", encoding="utf-8") as fh:
        fh.write(dump_config(config))
    write_manifest(outputs["manifest.json"], "train", argv, config=config.to_dict(),
                   seed=config.seed, dataset=args.data, outputs=outputs,
                   extra={"split_seed": args.split_seed, "search_samples": args.search_samples})
    print(f"test_mse {report.test_mse:.6g} test_mae {report.test_mae:.6g} "
          f"best_epoch {report.best_epoch} params {report.params}")
    return 0


def cmd_eval(args, argv):
    for name in ("model.npz", "stats.json", "config.txt"):
        if not os.path.isfile(os.path.join(args.model, name)):
            raise UsageError(f"model directory {args.model} lacks {name}")
    model, config, stats = load_model(args.model)
    dataset = _load_dataset(args.data)
    if args.split == "all":
        subset = dataset
    else:
        parts = dict(zip(("train", "val", "test"), split_dataset(dataset, args.split_seed)))
        subset = parts[args.split]
    if subset and subset[0].n_channels != stats.mean.size:
        raise UsageError(f"dataset has {subset[0].n_channels} channels, model expects {stats.mean.size}")
    subset = [apply_normalize(inst, stats) for inst in subset]
    mse, mae = evaluate(model, subset, config.batch_size)
    result = {"split": args.split, "instances": len(subset), "mse": mse, "mae": mae}
    print(json.dumps(result, sort_keys=True))
    if args.out:
        write_json(args.out, result)
        write_manifest(os.path.splitext(args.out)[0] + ".manifest.json", "eval", argv,
                       config=config.to_dict(), seed=config.seed, dataset=args.data,
                       outputs={"metrics": args.out}, extra={"model": args.model})
    return 0


def _corrupt_hook(grads):
    # Test hook: perturb one analytic gradient entry by 1%.
    name = sorted(grads)[0]
    flat = grads[name].reshape(-1)
    flat[0] = flat[0] * 1.01 + 1e-3


def cmd_gradcheck(args, argv):
    from .gradcheck import check_model, sweep, tiny_config

    if not 1 <= args.channels <= 3:
        raise UsageError("gradcheck uses between 1 and 3 channels")
    corrupt = _corrupt_hook if args.corrupt else None
    if args.config is None:
        results = sweep(seed=args.seed, n_channels=args.channels, corrupt=corrupt)
    else:
        config = parse_tiny(_load_config(args.config))
        results = [check_model(config, args.channels, args.seed, corrupt=corrupt)]
    for r in results:
        print(r.line())
    worst = max(results, key=lambda r: r.worst_error)
    ok = all(r.passed for r in results)
    print(f"{'PASS' if ok else 'FAIL'} overall: worst rel. err {worst.worst_error:.3e} ({worst.label}, "
          f"{worst.worst_param}[{worst.worst_index}])")
    return 0 if ok else 1


def parse_tiny(config):
    if config.dim > 16 or config.out_dim > 16 or config.n_blocks > 2:
        raise UsageError("gradcheck configs must have dim <= 16, out_dim <= 16 and n_blocks <= 2")
    return config


def _parse_int_list(text):
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def run_ablation(config, splits, blocks, seeds):
    """Rows ``(L, seed, test_mse, test_mae, best_epoch, status)``, failures included."""
    rows = []
    for L in blocks:
        for seed in seeds:
            try:
                _, report = _train_one(config.replace(n_blocks=L, seed=seed), splits)
                rows.append({"L": L, "seed": seed, "test_mse": report.test_mse,
                             "test_mae": report.test_mae, "best_epoch": report.best_epoch,
                             "status": "ok"})
            except (ArithmeticError, ValueError, RuntimeError) as exc:
                log.warning("cell L=%d seed=%d failed: %s", L, seed, exc)
                rows.append({"L": L, "seed": seed, "test_mse": "", "test_mae": "",
                             "best_epoch": "", "status": f"failed: {type(exc).__name__}: {exc}"})
    return rows


def ablation_summary(rows):
    """Median test metrics per L over the seeds that succeeded."""
    out = []
    for L in dict.fromkeys(r["L"] for r in rows):
        ok = [r for r in rows if r["L"] == L and r["status"] == "ok"]
        out.append({
            "L": L, "seed": "median",
            "test_mse": statistics.median(r["test_mse"] for r in ok) if ok else "",
            "test_mae": statistics.median(r["test_mae"] for r in ok) if ok else "",
            "best_epoch": "", "status": f"summary over {len(ok)} seeds",
        })
    return out


ABLATION_FIELDS = ["L", "seed", "test_mse", "test_mae", "best_epoch", "status"]


def write_ablation_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def cmd_ablate_blocks(args, argv):
    config = _load_config(args.config)
    dataset = _load_dataset(args.data)
    splits = prepare_splits(dataset, args.split_seed)
    rows = run_ablation(config, splits, args.blocks, args.seeds)
    rows += ablation_summary(rows)
    write_ablation_csv(args.out, rows)
    write_manifest(os.path.splitext(args.out)[0] + ".manifest.json", "ablate-blocks", argv,
                   config=config.to_dict(), seed=args.seeds, dataset=args.data,
                   outputs={"table": args.out},
                   extra={"blocks": args.blocks, "split_seed": args.split_seed})
    for row in rows:
        print(",".join(str(row[k]) for k in ABLATION_FIELDS))
    return 1 if any(r["status"].startswith("failed") for r in rows) else 0


# --- argument parsing ----------------------------------------------------------

def _drop_fraction(text):
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"drop fraction must lie strictly between 0 and 1, got {value}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="imts-mixer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic ODE dataset as JSONL")
    p.add_argument("--system", choices=sorted(SYSTEMS), default="lotka_volterra")
    p.add_argument("--instances", type=int, default=2000)
    p.add_argument("--drop", type=_drop_fraction, default=0.8)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--obs-fraction", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model (or a random search)")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--search-samples", type=int, default=0,
                   help="random-search this many grid configurations, keep the best on validation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model directory")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", help="write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare backward() with finite differences")
    p.add_argument("--config", help="tiny config to check (default: sweep all variants)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=2)
    p.add_argument("--corrupt", action="store_true", help="perturb one gradient (harness self-test)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate-blocks", help="test MSE for several mixer block counts")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--blocks", type=_parse_int_list, default=[0, 1, 2, 3])
    p.add_argument("--seeds", type=_parse_int_list, default=[0, 1, 2])
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_ablate_blocks)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args, argv)
    except (UsageError, ConfigError, SchemaError) as exc:
        print(f"imts-mixer {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError, ValueError, OSError) as exc:
        print(f"imts-mixer {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
