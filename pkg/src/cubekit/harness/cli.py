"""``cubekit`` command line: group inspection, equivariance audits, training, evaluation, benchmarks.

Exit codes: 0 pass, 1 usage or I/O error, 2 property failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .. import __version__
from ..estimator import CubeNetClassifier
from ..gconv import check_equivariance, conv3d, conv3d_backward, gconv_backward, gconv_hidden, gconv_lift
from ..network.graph import CubeNet, GraphError, LayerGraph
from ..polycube import DatasetError, DatasetManifest, evaluate, generate_dataset, load_dataset, save_dataset
from ..symmetry import (
    GroupKind,
    export_cayley_csv,
    generate_group,
    is_commutative,
    latin_square,
    verify_group_axioms,
)
from ..voxel import apply_group_action, resolve_dtype
from .reports import DEFAULT_CONFIG, ConfigError, RunReport, validate_config

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2
GROUP_CHOICES = ("C1", "V", "T4", "S4")

log = logging.getLogger("cubekit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _group_arg(value: str) -> str:
    try:
        return GroupKind.parse(value).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("CUBEKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"CUBEKIT_THREADS must be an integer, got {env!r}") from None
    return 1


def _args_config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "threads_resolved", "json")}


def _emit(report: RunReport, path) -> None:
    if path:
        report.write(path)
    else:
        report.validate()


# -- group ------------------------------------------------------------------------------------

def cmd_group(args, argv) -> int:
    group = generate_group(args.kind)
    report = RunReport("group", argv, _args_config(args), precision="f64", threads=args.threads_resolved)
    status = EXIT_OK
    if not (args.table or args.verify or args.export):
        args.table = True
    if args.table:
        width = len(str(group.order - 1))
        header = " " * (width + 2) + " ".join(f"{j:>{width}}" for j in range(group.order))
        print(header)
        for i, row in enumerate(group.cayley):
            print(f"{i:>{width}} |" + " ".join(f"{int(v):>{width}}" for v in row))
        report.metric("cayley", group.cayley.tolist())
    if args.verify:
        axioms = verify_group_axioms(group)
        latin = latin_square(group.cayley)
        commutative = is_commutative(group)
        for name in ("closure", "associativity", "identity", "invertibility"):
            print(f"{name:14s} {'pass' if getattr(axioms, name) else 'FAIL'}")
        print(f"{'latin square':14s} {'pass' if latin else 'FAIL'}")
        print(f"{'commutative':14s} {commutative}")
        report.metric("axioms", axioms.as_dict())
        report.metric("commutative", commutative)
        report.flag("axioms", axioms.passed)
        report.flag("latin_square", latin)
        if not (axioms.passed and latin):
            status = EXIT_FAIL
            report.passed = False
    if args.export:
        try:
            export_cayley_csv(group, args.export)
        except OSError as exc:
            print(f"cannot write {args.export}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"wrote {args.export}")
    _emit(report, args.json)
    return status


# -- equivariance ----------------------------------------------------------------------------

def _network_invariance(group_kind: str, trials: int, precision: str, seed: int, size: int):
    """Max |logits(p x) - logits(x)| for a random invariant network, over trials and all p."""
    graph = LayerGraph(group=group_kind, channels=[2, 2, 8], n_classes=4, precision=precision)
    net = CubeNet(graph, seed=seed)
    group = net.group
    dtype = resolve_dtype(precision)
    rng = np.random.default_rng(seed)
    # one train-mode pass so batch-norm running statistics are non-trivial
    net.forward(rng.standard_normal((4, 1, 1, size, size, size)).astype(dtype), train=True)
    max_abs = max_rel = 0.0
    for _ in range(trials):
        x = rng.standard_normal((1, 1, 1, size, size, size)).astype(dtype)
        base = net.forward(x)
        scale = float(np.max(np.abs(base))) or 1.0
        for p in range(group.order):
            err = float(np.max(np.abs(net.forward(apply_group_action(x, group, p)) - base)))
            max_abs = max(max_abs, err)
            max_rel = max(max_rel, err / scale)
    return max_abs, max_rel


def cmd_equivariance(args, argv) -> int:
    report = RunReport("equivariance", argv, _args_config(args), seed=args.seed, precision=args.precision,
                       threads=args.threads_resolved)
    with report.timer("check"):
        if args.layer == "network":
            max_abs, max_rel = _network_invariance(args.group, args.trials, args.precision, args.seed, args.size)
            metrics = {"max_abs_error": max_abs, "max_rel_error": max_rel}
        else:
            res = check_equivariance(args.layer, args.group, trials=args.trials, tol=args.tol,
                                     precision=args.precision, size=args.size, seed=args.seed,
                                     padding=args.padding)
            metrics = res.as_dict()
            max_abs = res.max_abs_error
    ok = max_abs <= args.tol
    for k, v in metrics.items():
        report.metric(k, v)
    report.metric("tol", args.tol)
    report.flag("within_tol", ok)
    report.passed = ok
    print(f"{args.group} {args.layer} {args.precision}: max abs error {max_abs:.3e} "
          f"(tol {args.tol:.1e}) {'PASS' if ok else 'FAIL'}")
    _emit(report, args.json)
    return EXIT_OK if ok else EXIT_FAIL


# -- dataset / train / eval ------------------------------------------------------------------

def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def cmd_dataset(args, argv) -> int:
    overrides = _load_json(args.manifest) if args.manifest else {}
    for key in ("grid", "group", "n_train", "n_test_base", "seed", "max_translation"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    manifest = DatasetManifest(**overrides)
    train, test = generate_dataset(manifest)
    save_dataset(args.out, manifest, train, test)
    report = RunReport("dataset", argv, manifest.to_dict(), seed=manifest.seed, precision="f32",
                       threads=args.threads_resolved)
    report.metric("n_train", len(train))
    report.metric("n_test", len(test))
    _emit(report, args.json)
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out}")
    return EXIT_OK


def _estimator_from_config(cfg: dict) -> CubeNetClassifier:
    keys = ("group", "layers", "channels", "kernel", "epochs", "lr", "lr_step", "noise_std", "seed",
            "precision", "batch_size", "padding", "lr_factor", "beta1", "beta2")
    return CubeNetClassifier(**{k: cfg[k] for k in keys if k in cfg})


def cmd_train(args, argv) -> int:
    cfg = _load_json(args.config) if args.config else dict(DEFAULT_CONFIG)
    try:
        validate_config(cfg)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = RunReport("train", argv, cfg, seed=cfg["seed"], precision=cfg["precision"],
                       threads=args.threads_resolved)
    with report.timer("data"):
        if args.dataset:
            _, train, _ = load_dataset(args.dataset)
        else:
            manifest = DatasetManifest(**cfg.get("dataset", {}))
            train, _ = generate_dataset(manifest)
    est = _estimator_from_config(cfg)
    try:
        with report.timer("fit"):
            est.fit(train.X, train.y)
    except GraphError as exc:
        print(f"invalid config: config.layers: {exc}", file=sys.stderr)
        return EXIT_USAGE
    est.save(args.out)
    curve = [float(v) for v in est.loss_curve_]
    first = curve[:5]
    decreasing = all(b < a for a, b in zip(first, first[1:]))
    report.metric("loss_curve", curve)
    report.metric("train_accuracy", float(np.mean(est.predict(train.X) == train.y)))
    report.metric("n_parameters", est.net_.n_parameters)
    report.flag("loss_decreasing_first_5_epochs", decreasing)
    _emit(report, args.json or Path(args.out) / "report.json")
    print(f"trained {cfg['group']} model: loss {curve[0]:.4f} -> {curve[-1]:.4f}" if curve else "trained (0 epochs)")
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    if not Path(args.checkpoint, "manifest.json").is_file():
        raise UsageError(f"{args.checkpoint}: no checkpoint manifest")
    est = CubeNetClassifier.load(args.checkpoint)
    manifest, _, test = load_dataset(args.dataset)
    report = RunReport("eval", argv, {"checkpoint": str(args.checkpoint), "dataset": manifest.to_dict()},
                       seed=est.seed, precision=est.precision, threads=args.threads_resolved)
    with report.timer("evaluate"):
        res = evaluate(est, test, manifest.group)
    columns_equal = len(set(res.per_rotation)) == 1
    for k, v in res.as_dict().items():
        report.metric(k, v)
    report.flag("per_rotation_equal", columns_equal)
    print(f"group {res.group}: single-view {res.single_view:.4f}  rotation-averaged {res.rotation_averaged:.4f}")
    print(f"canonical {res.canonical:.4f}  rotated {res.rotated:.4f}  per-rotation columns equal: {columns_equal}")
    print("per rotation: " + " ".join(f"{a:.3f}" for a in res.per_rotation))
    _emit(report, args.json)
    return EXIT_OK


# -- bench -------------------------------------------------------------------------------------

def _time(fn, iters: int) -> float:
    fn()  # warm-up
    t0 = time.perf_counter()
    for _ in range(iters):
        fn()
    return (time.perf_counter() - t0) / iters


def bench_group(kind: str, size: int, channels: int, iters: int, seed: int = 0) -> dict:
    """Seconds per forward+backward: group layers vs plain conv3d with matched parameter counts.

    The plain lifting layer maps 1 -> C channels like the group one. The plain
    hidden layer is square with ``round(C * sqrt(|G|))`` channels, the width a
    parameter-matched ordinary CNN would carry between layers.
    """
    group = generate_group(kind)
    G = group.order
    rng = np.random.default_rng(seed)
    C, k = channels, 3
    P = max(1, int(round(C * np.sqrt(G))))
    x_raw = rng.standard_normal((1, 1, 1, size, size, size))
    x_grp = rng.standard_normal((1, C, G, size, size, size))
    w_lift = rng.standard_normal((C, 1, 1, k, k, k))
    w_hid = rng.standard_normal((C, C, G, k, k, k))
    u = rng.standard_normal((1, C, G, size, size, size))
    xp_raw = x_raw[:, :, 0]
    wp_lift = w_lift[:, :, 0]
    up_lift = rng.standard_normal((1, C, size, size, size))
    xp_hid = rng.standard_normal((1, P, size, size, size))
    wp_hid = rng.standard_normal((P, P, k, k, k))
    up_hid = rng.standard_normal((1, P, size, size, size))

    def lift():
        gconv_lift(x_raw, w_lift, group)
        gconv_backward("lift", x_raw, w_lift, u, group)

    def hidden():
        gconv_hidden(x_grp, w_hid, group)
        gconv_backward("hidden", x_grp, w_hid, u, group)

    def plain_lift():
        conv3d(xp_raw, wp_lift)
        conv3d_backward(xp_raw, wp_lift, up_lift)

    def plain_hidden():
        conv3d(xp_hid, wp_hid)
        conv3d_backward(xp_hid, wp_hid, up_hid)

    t = {
        "lift": _time(lift, iters), "plain_lift": _time(plain_lift, iters),
        "hidden": _time(hidden, iters), "plain_hidden": _time(plain_hidden, iters),
    }
    t["ratio_lift"] = t["lift"] / t["plain_lift"]
    t["ratio_hidden"] = t["hidden"] / t["plain_hidden"]
    t["ratio"] = (t["lift"] + t["hidden"]) / (t["plain_lift"] + t["plain_hidden"])
    t["params"] = {"group_hidden": int(w_hid.size), "plain_hidden": int(wp_hid.size), "plain_width": P}
    return t


def cmd_bench(args, argv) -> int:
    kinds = ["V", "T4", "S4"] if args.group == "all" else [_group_arg(args.group)]
    report = RunReport("bench", argv, _args_config(args), seed=0, precision="f64", threads=args.threads_resolved)
    if args.iters > 0:
        for kind in kinds:
            t = bench_group(kind, args.size, args.channels, args.iters)
            report.data["timings"][kind] = t
            print(f"{kind:3s} lift {t['lift'] * 1e3:8.2f} ms  hidden {t['hidden'] * 1e3:8.2f} ms  "
                  f"ratio vs plain {t['ratio']:.2f}")
        if "V" in kinds:
            r = report.data["timings"]["V"]["ratio"]
            report.metric("ratio_V_vs_plain", r)
            report.flag("ratio_V_in_band_2_8", 2.0 <= r <= 8.0)
        if len(kinds) > 1:
            times = [report.data["timings"][k]["lift"] + report.data["timings"][k]["hidden"] for k in kinds]
            report.flag("time_monotonic_in_group_order", all(a < b for a, b in zip(times, times[1:])))
    _emit(report, args.json)
    return EXIT_OK


# -- entry point --------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cubekit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cubekit {__version__}")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $CUBEKIT_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("group", help="print, verify or export a Cayley table")
    g.add_argument("kind", type=_group_arg)
    g.add_argument("--table", action="store_true")
    g.add_argument("--verify", action="store_true")
    g.add_argument("--export", metavar="CSV")
    g.add_argument("--json", metavar="PATH")
    g.set_defaults(func=cmd_group)

    e = sub.add_parser("equivariance", help="audit layer equivariance / network invariance")
    e.add_argument("--group", type=_group_arg, default="V")
    e.add_argument("--layer", choices=("lift", "hidden", "network"), default="hidden")
    e.add_argument("--trials", type=int, default=10)
    e.add_argument("--tol", type=float, default=1e-10)
    e.add_argument("--precision", choices=("f32", "f64"), default="f64")
    e.add_argument("--size", type=int, default=5)
    e.add_argument("--padding", choices=("same", "valid"), default="same")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--json", metavar="PATH")
    e.set_defaults(func=cmd_equivariance)

    d = sub.add_parser("dataset", help="generate a polycube dataset directory")
    d.add_argument("--out", required=True)
    d.add_argument("--manifest", metavar="JSON", help="manifest overrides")
    d.add_argument("--grid", type=int)
    d.add_argument("--group", type=_group_arg)
    d.add_argument("--n-train", dest="n_train", type=int)
    d.add_argument("--n-test-base", dest="n_test_base", type=int)
    d.add_argument("--max-translation", dest="max_translation", type=int)
    d.add_argument("--seed", type=int)
    d.add_argument("--json", metavar="PATH")
    d.set_defaults(func=cmd_dataset)

    t = sub.add_parser("train", help="train on a polycube dataset and write a checkpoint")
    t.add_argument("--config", metavar="JSON")
    t.add_argument("--out", required=True, metavar="DIR")
    t.add_argument("--dataset", metavar="DIR", help="dataset directory (default: generate from config)")
    t.add_argument("--json", metavar="PATH")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="per-rotation accuracy of a checkpoint")
    v.add_argument("--checkpoint", required=True, metavar="DIR")
    v.add_argument("--dataset", required=True, metavar="DIR")
    v.add_argument("--json", metavar="PATH")
    v.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="time group convolutions against plain conv3d")
    b.add_argument("--group", default="V", help="V, T4, S4 or 'all'")
    b.add_argument("--size", type=int, default=16)
    b.add_argument("--channels", type=int, default=8)
    b.add_argument("--iters", type=int, default=5)
    b.add_argument("--json", metavar="PATH")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.threads_resolved = _threads(args)
        if args.threads_resolved < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with threadpool_limits(limits=args.threads_resolved):
            return args.func(args, ["cubekit"] + argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
