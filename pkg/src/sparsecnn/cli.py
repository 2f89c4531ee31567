"""Command-line entry point: ``sparsecnn {train-baseline,sparsify,evaluate,report}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .admm import PathSchedule, accuracy, default_mu_grid, make_row, run_path, train
from .config import RunConfig, load_config, load_data, parse_config_text
from .errors import ConfigError, SparseCNNError
from .mask import Mask
from .report import export_csv, render_table
from .sparsity import LayerGuardPolicy, resolve_include
from .tensor_net import init_network, load_checkpoint, parse_arch, save_checkpoint

log = logging.getLogger("sparsecnn")

MANIFEST_FORMAT = "sparsecnn-manifest-1"


class ManifestError(SparseCNNError):
    pass


def _overrides(args) -> dict:
    return {
        "seed": getattr(args, "seed", None),
        "out": getattr(args, "out", None),
        "penalty": getattr(args, "penalty", None),
    }


def _out_dir(cfg: RunConfig) -> str:
    out = cfg.resolve(cfg.out)
    os.makedirs(out, exist_ok=True)
    return out


def _baseline_path(cfg: RunConfig) -> str:
    return cfg.resolve(cfg.baseline) if cfg.baseline else os.path.join(cfg.resolve(cfg.out), "baseline.ckpt")


def cmd_train_baseline(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    train_ds, test_ds = load_data(cfg)
    spec = parse_arch(cfg.arch, train_ds.sample_shape)
    net = init_network(spec, cfg.seed)
    net = train(net, train_ds, cfg.baseline_epochs, cfg.baseline_lr, cfg.baseline_batch_size,
                cfg.seed, cfg.baseline_momentum)
    _out_dir(cfg)
    path = _baseline_path(cfg)
    save_checkpoint(net, path)
    print(f"checkpoint: {path}")
    print(f"accuracy_pct: {accuracy(net, test_ds):.2f}")
    return 0


def write_manifest(path, entries) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in entries:
            fh.write(f"{key}: {value}\n")


def read_manifest(path) -> dict:
    if not os.path.exists(path):
        raise ManifestError(f"no such manifest {path}")
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if ": " not in line and not line.endswith(":"):
                raise ManifestError(f"{path}:{lineno}: expected 'key: value'")
            key, _, value = line.partition(":")
            entries[key.strip()] = value[1:] if value.startswith(" ") else value
    if entries.get("format") != MANIFEST_FORMAT:
        raise ManifestError(f"{path}: not a {MANIFEST_FORMAT} manifest")
    return entries


def cmd_sparsify(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    train_ds, test_ds = load_data(cfg)
    base_path = _baseline_path(cfg)
    if not os.path.exists(base_path):
        raise ConfigError(f"baseline: no checkpoint at {base_path}; run train-baseline first")
    baseline = load_checkpoint(base_path)
    include = resolve_include(baseline.spec, cfg.include_layers)
    mus = cfg.mu_values or default_mu_grid(baseline, cfg.rho, include, cfg.mu_count)
    schedule = PathSchedule(mus, cfg.delta, cfg.nu, cfg.xi, cfg.epsilon_value, cfg.lr, cfg.batch_size, cfg.momentum)
    guard = LayerGuardPolicy(cfg.guard, cfg.guard_fraction)
    out = _out_dir(cfg)

    entries = [("format", MANIFEST_FORMAT), ("version", __version__), ("seed", cfg.seed),
               ("penalty", cfg.penalty), ("rho", repr(cfg.rho)),
               ("mus", ",".join(repr(m) for m in mus)), ("include", ",".join(map(str, include)))]
    entries += [(f"config.{k}", v) for k, v in cfg.items()]
    entries.append(("config.base_dir", cfg.base_dir))

    def on_point(point):
        idx = len([k for k, _ in entries if k.endswith(".mu")])
        stem = f"mu_{idx:02d}"
        ckpt, mask = os.path.join(out, stem + ".ckpt"), os.path.join(out, stem + ".mask")
        save_checkpoint(point.net, ckpt)
        point.mask.save(mask)
        entries.extend([
            (f"point.{idx}.mu", repr(point.mu)),
            (f"point.{idx}.checkpoint", stem + ".ckpt"),
            (f"point.{idx}.mask", stem + ".mask"),
            (f"point.{idx}.iterations", point.iterations),
            (f"point.{idx}.converged", str(point.converged).lower()),
            (f"point.{idx}.training_epochs", point.row.training_epochs),
        ])

    points = run_path(baseline, train_ds, test_ds, schedule, cfg.penalty, cfg.rho, include, guard,
                      cfg.seed, on_point=on_point)
    rows = [p.row for p in points]
    table = render_table(rows)
    csv_path = os.path.abspath(args.csv) if args.csv else os.path.join(out, "results.csv")
    with open(os.path.join(out, "results.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    export_csv(rows, csv_path)
    entries += [("points", len(points)), ("results_table", "results.txt"), ("results_csv", csv_path)]
    write_manifest(os.path.join(out, "manifest.txt"), entries)
    sys.stdout.write(table)
    if len(points) < len(mus) + 1:
        raise SparseCNNError(f"path aborted after {len(points) - 1} of {len(mus)} mu values")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    train_ds, test_ds = load_data(cfg)
    net = load_checkpoint(args.checkpoint)
    ds = test_ds if args.split == "test" else train_ds
    print(f"accuracy_pct: {accuracy(net, ds):.2f}")
    return 0


def rows_from_manifest(manifest_path) -> list:
    """Recompute every report row from the stored checkpoints and masks."""
    entries = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    cfg_text = "\n".join(f"{k[len('config.'):]} = {v}" for k, v in entries.items()
                         if k.startswith("config.") and k != "config.base_dir")
    cfg = parse_config_text(cfg_text, entries.get("config.base_dir", base))
    _, test_ds = load_data(cfg)
    include = [int(v) for v in entries["include"].split(",") if v]
    rows = []
    for i in range(int(entries["points"])):
        try:
            net = load_checkpoint(os.path.join(base, entries[f"point.{i}.checkpoint"]))
            mask = Mask.load(os.path.join(base, entries[f"point.{i}.mask"]))
            mu = float(entries[f"point.{i}.mu"])
            epochs = int(entries[f"point.{i}.training_epochs"])
        except KeyError as exc:
            raise ManifestError(f"{manifest_path}: missing key {exc}") from None
        rows.append(make_row(mu, net, mask, test_ds, include, epochs))
    return rows


def cmd_report(args) -> int:
    rows = rows_from_manifest(args.manifest)
    if args.csv:
        export_csv(rows, args.csv)
    sys.stdout.write(render_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsecnn", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, penalty=False):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if penalty:
            p.add_argument("--penalty", choices=("l0", "l1"))

    p = sub.add_parser("train-baseline", help="train the dense reference network")
    common(p)
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("sparsify", help="run the ADMM regularization path")
    common(p, penalty=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_sparsify)

    p = sub.add_parser("evaluate", help="score a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="rebuild the results table from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (SparseCNNError, OSError, ValueError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
