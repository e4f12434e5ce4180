"""Experiment runner and command-line interface.

Subcommands:

``run``     execute a configured continual-learning experiment and write
            report.json, cycles.csv and weights.bin into the output
            directory.
``check``   run the built-in oracle/invariant suite and print one
            PASS/FAIL line per check.
``cycles``  print the cost-model table for a given layer shape under
            both cycle models.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import densesim, fxp, kernels, oracle
from .convsim import walk_fetch_total
from .datasets import gen_synthetic, load_cifar10
from .engine import (Device, DeviceConfig, Model, TrainingState, evaluate,
                     run_task)
from .errors import SimulatorError
from .replay import ReplayBuffer, build_task_stream
from .report import CycleReport

REPORT_SCHEMA_VERSION = 1

DEFAULT_CONFIG = {
    "seed": 0,
    "device": {
        "clock_period_ns": 3.87,
        "cycle_model": "calibrated",
        "feature_banks": 8,
        "kernel_banks": 64,
        "gradient_banks": 8,
        "training_data_bytes": 6_144_000,
        "partial_feature_bytes": None,
        "kernel_bytes": None,
        "gradient_bytes": None,
    },
    "model": {
        "rows": 32,
        "cols": 32,
        "channels": 3,
        "conv_filters": [8, 8],
        "init_range": 0.5,
    },
    "cl": {
        "n_tasks": 5,
        "classes_per_task": 2,
        "epochs": 10,
        "lr": 1.0,
        "loss": "mse",
        "weight_reset": "fine_tune",
    },
    "dataset": {
        "kind": "synthetic",
        "n_per_class": 20,
        "eval_per_class": 8,
        "noise": 0.03,
        "path": None,
        "eval_path": None,
    },
}


def merge_config(user: dict) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for section, values in user.items():
        if section not in cfg:
            raise SimulatorError(f"unknown config section {section!r}")
        if isinstance(cfg[section], dict):
            for key, val in values.items():
                if key not in cfg[section]:
                    raise SimulatorError(
                        f"unknown config key {section}.{key}")
                cfg[section][key] = val
        else:
            cfg[section] = values
    return cfg


def _load_datasets(cfg: dict):
    dcfg = cfg["dataset"]
    ccfg = cfg["cl"]
    mcfg = cfg["model"]
    n_classes = ccfg["n_tasks"] * ccfg["classes_per_task"]
    if dcfg["kind"] == "synthetic":
        train = gen_synthetic(n_classes, dcfg["n_per_class"], mcfg["rows"],
                              mcfg["cols"], mcfg["channels"],
                              seed=cfg["seed"], noise=dcfg["noise"])
        test = gen_synthetic(n_classes, dcfg["eval_per_class"], mcfg["rows"],
                             mcfg["cols"], mcfg["channels"],
                             seed=cfg["seed"] + 1, noise=dcfg["noise"])
        return train, test
    if dcfg["kind"] == "cifar10":
        if not dcfg["path"]:
            raise SimulatorError("dataset.path is required for cifar10")
        train = load_cifar10(dcfg["path"])
        test = load_cifar10(dcfg["eval_path"]) if dcfg["eval_path"] else None
        return train, test
    raise SimulatorError(f"unknown dataset kind {dcfg['kind']!r}")


def write_weights(path, model: Model) -> None:
    """Deterministic binary dump: one JSON manifest line, then raw
    little-endian int16 words per layer."""
    manifest = {
        "format": 1,
        "layers": [
            {"name": name,
             "shape": [t.out_channels, t.in_channels, t.k_rows, t.k_cols]}
            for name, t in model.weight_tensors()
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for _, tensor in model.weight_tensors():
            fh.write(tensor.data.astype("<i2").tobytes())


def run_experiment(cfg: dict, out_dir) -> dict:
    """Run the configured task stream; returns the report dict."""
    cfg = merge_config(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    mcfg, ccfg, vcfg = cfg["model"], cfg["cl"], cfg["device"]

    train, test = _load_datasets(cfg)
    tasks = build_task_stream(train.samples, ccfg["n_tasks"],
                              ccfg["classes_per_task"])

    rng = np.random.default_rng(seed)
    model = Model(mcfg["rows"], mcfg["cols"], mcfg["channels"],
                  mcfg["conv_filters"], rng, mcfg["init_range"])
    device = Device(DeviceConfig(**vcfg), model,
                    max_classes=ccfg["n_tasks"] * ccfg["classes_per_task"])
    state = TrainingState(model, lr_raw=fxp.encode(ccfg["lr"]),
                          loss_kind=ccfg["loss"],
                          weight_reset=ccfg["weight_reset"])
    buf = ReplayBuffer(vcfg["training_data_bytes"])

    task_reports = []
    for task in tasks:
        run_task(state, buf, task, device, epochs=ccfg["epochs"], seed=seed,
                 rng=rng)
        seen = [c for t in tasks[:task.index + 1] for c in t.classes]
        entry = {
            "task": task.index,
            "classes": task.classes,
            "samples_offered": len(task.samples),
            "buffer_size": len(buf),
            "buffer_per_class": {str(k): v
                                 for k, v in sorted(buf.per_class_counts.items())},
            "accuracy": None,
            "per_task_accuracy": None,
        }
        if test is not None:
            eval_samples = [s for s in test.samples if s[1] in seen]
            entry["accuracy"] = evaluate(state, eval_samples)["accuracy"]
            per_task = {}
            for prev in tasks[:task.index + 1]:
                subset = [s for s in test.samples if s[1] in prev.classes]
                per_task[str(prev.index)] = (
                    evaluate(state, subset)["accuracy"] if subset else None)
            entry["per_task_accuracy"] = per_task
        task_reports.append(entry)

    report = build_report(cfg, device, task_reports)
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    device.report.write_csv(out / "cycles.csv")
    write_weights(out / "weights.bin", model)
    return report


def build_report(cfg: dict, device: Device, task_reports: list) -> dict:
    rep: CycleReport = device.report
    total = rep.total_cycles
    mem_counters = {
        g.kind.value: {"reads": g.reads, "writes": g.writes,
                       "stalls": g.stalls}
        for g in device.mem.groups.values()
    }
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "backend": kernels.BACKEND,
        "seed": cfg["seed"],
        "cycle_model": device.cycle_model,
        "clock_period_ns": device.config.clock_period_ns,
        "model": cfg["model"],
        "cl": cfg["cl"],
        "dataset": {k: cfg["dataset"][k] for k in
                    ("kind", "path", "n_per_class", "eval_per_class")},
        "tasks": task_reports,
        "cycles": {
            "per_pass": rep.per_pass_totals(),
            "total_cycles": total,
            "total_stalls": rep.total_stalls,
            "total_saturations": rep.total_saturations,
            "update_saturations": device.update_counter.events,
            "memory": mem_counters,
        },
        "wall_time": {
            "total_cycles": total,
            "clock_period_ns": device.config.clock_period_ns,
            "seconds_estimate": rep.wall_time_s(),
            "note": ("derived estimate (total cycles x clock period), "
                     "not a measured latency"),
        },
    }


# ---------------------------------------------------------------------------
# check suite
# ---------------------------------------------------------------------------


def _check_fxp(_seed: int) -> bool:
    ok = fxp.encode(1.0) == 0x1000
    ok &= fxp.encode(100.0) == 0x7FFF
    ok &= fxp.reduce_acc(0x800) == 1
    ok &= fxp.reduce_acc(fxp.mul(fxp.encode(0.5), fxp.encode(0.25))) \
        == fxp.encode(0.125)
    return bool(ok)


def _check_conv_oracle(seed: int) -> bool:
    from .convsim import conv_forward
    from .pu import PuArray
    from .tensors import ConvLayerSpec, FeatureMap, KernelTensor
    rng = np.random.default_rng(seed)
    feats = rng.uniform(-0.2, 0.2, (8, 6, 6))
    kern = rng.uniform(-0.2, 0.2, (8, 8, 3, 3))
    fm = FeatureMap.from_real(feats)
    kt = KernelTensor.from_real(kern)
    spec = ConvLayerSpec(8, 8, 6, 6)
    z, _ = conv_forward(fm, kt, spec, PuArray())
    ref = oracle.conv_forward_ref(fm.to_real(), kt.to_real())
    return bool(np.max(np.abs(z.to_real() - ref)) <= 72 * 2.0 ** -13)


def _check_adjoint(seed: int) -> bool:
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((3, 5, 5))
    kern = rng.standard_normal((4, 3, 3, 3))
    gout = rng.standard_normal((4, 5, 5))
    fwd = oracle.conv_forward_ref(feats, kern)
    din = oracle.conv_input_grad_ref(gout, kern)
    lhs = float(np.sum(fwd * gout))
    rhs = float(np.sum(feats * din))
    return abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))


def _check_finite_diff(seed: int) -> bool:
    rng = np.random.default_rng(seed)
    net = oracle.ReferenceNet(
        [rng.uniform(-0.4, 0.4, (3, 2, 3, 3)),
         rng.uniform(-0.4, 0.4, (2, 3, 3, 3))],
        rng.uniform(-0.4, 0.4, (3, 2 * 4 * 4)))
    image = rng.uniform(0.0, 1.0, (2, 4, 4))
    return oracle.finite_diff_check(net, image, label=1, eps=1e-4) < 1e-5


def _check_cycle_counts(_seed: int) -> bool:
    ok = densesim.dense_cycles("forward", 8192, 10) == 1280
    ok &= densesim.dense_cycles("wgrad", 8192, 10) == 1821
    ok &= densesim.dense_cycles("gprop", 8192, 10) == 1280
    ok &= 32 * 32 * 8 * 1 == 8192
    ok &= walk_fetch_total(32, 32) == 3078
    return bool(ok)


CHECKS = [
    ("fxp encode/reduce spot values", _check_fxp),
    ("conv forward vs float oracle", _check_conv_oracle),
    ("conv adjoint identity", _check_adjoint),
    ("finite-difference gradients", _check_finite_diff),
    ("reference cycle counts", _check_cycle_counts),
]


def run_checks(seed: int = 0) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok = fn(seed)
        except Exception as exc:  # pragma: no cover - defensive
            print(f"FAIL {name}: {exc}")
            all_ok = False
            continue
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        all_ok &= ok
    return all_ok


# ---------------------------------------------------------------------------
# cycles table
# ---------------------------------------------------------------------------


def cycles_table(rows: int, cols: int, channels: int, filters: int,
                 classes: int) -> str:
    chp = -(-channels // 8) * 8
    groups = chp // 8
    conv = rows * cols * filters * groups
    in_features = -(-filters // 8) * 8 * rows * cols
    lines = [
        f"shape: {rows}x{cols}x{channels} -> {filters} filters, "
        f"{classes} classes",
        f"{'pass':<16}{'calibrated':>12}{'formula':>12}",
    ]
    for name in ("forward", "kgrad", "gprop"):
        lines.append(f"conv {name:<11}{conv:>12}{conv:>12}")
    for name in ("forward", "wgrad", "gprop"):
        cal = densesim.dense_cycles(name, in_features, classes, "calibrated")
        frm = densesim.dense_cycles(name, in_features, classes, "formula")
        lines.append(f"dense {name:<10}{cal:>12}{frm:>12}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="claccel",
        description="Cycle-level simulator of a fixed-point "
                    "continual-learning training accelerator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured experiment")
    p_run.add_argument("--config", required=True, help="JSON config file")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out-dir", default="claccel-out")
    p_run.add_argument("--dataset", default=None,
                       help="override dataset.path")
    p_run.add_argument("--cycle-model", choices=densesim.CYCLE_MODELS,
                       default=None)

    p_check = sub.add_parser("check", help="run the self-check suite")
    p_check.add_argument("--seed", type=int, default=0)

    p_cyc = sub.add_parser("cycles", help="print the cost-model table")
    p_cyc.add_argument("--rows", type=int, default=32)
    p_cyc.add_argument("--cols", type=int, default=32)
    p_cyc.add_argument("--channels", type=int, default=8)
    p_cyc.add_argument("--filters", type=int, default=8)
    p_cyc.add_argument("--classes", type=int, default=10)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return 2
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.dataset is not None:
            cfg.setdefault("dataset", {})["path"] = args.dataset
        if args.cycle_model is not None:
            cfg.setdefault("device", {})["cycle_model"] = args.cycle_model
        try:
            report = run_experiment(cfg, args.out_dir)
        except (SimulatorError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(f"report written to {args.out_dir}; estimated wall time "
              f"{report['wall_time']['seconds_estimate']:.6f} s "
              f"({report['wall_time']['total_cycles']} cycles)")
        return 0
    if args.command == "check":
        return 0 if run_checks(args.seed) else 1
    if args.command == "cycles":
        print(cycles_table(args.rows, args.cols, args.channels,
                           args.filters, args.classes))
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
