"""Command-line entry point: identity verification, exact divergence
evaluation on JSON instances, and the toy adversarial runs.

Exit codes: 0 success, 1 verification failure, 2 input error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__, exactdiv, gan
from .funcspace import FDivGenerator
from .measures import DiscreteMeasure

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_INPUT = 2
EXIT_ABORT = 3

_ALL_FAMILIES = ("lemma1", "lambda", "f", "tv", "w1", "sinkhorn", "mmd", "infconv", "kernel")


@dataclass(frozen=True)
class RunManifest:
    command: str
    config_hash: str
    seed: int
    version: str
    outputs: list[str]

    @staticmethod
    def create(command: str, config_bytes: bytes, seed: int, outputs: list[str]
               ) -> "RunManifest":
        return RunManifest(
            command=command,
            config_hash=hashlib.sha256(config_bytes).hexdigest(),
            seed=seed,
            version=__version__,
            outputs=sorted(os.path.basename(p) for p in outputs),
        )


def _dump_json(obj, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _json_ready(x):
    if isinstance(x, dict):
        return {k: _json_ready(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_ready(v) for v in x]
    if isinstance(x, np.ndarray):
        return _json_ready(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    return x


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    families = [f.strip() for f in args.families.split(",")] if args.families else list(_ALL_FAMILIES)
    bad = [f for f in families if f not in _ALL_FAMILIES]
    if bad:
        print(f"unknown families: {', '.join(bad)}", file=sys.stderr)
        return EXIT_INPUT
    report: dict = {"seed": args.seed, "trials": args.trials, "identities": {}}
    if args.trials > 0:
        rng = np.random.default_rng(args.seed)
        div_families = [f for f in families if f in exactdiv._FAMILY_TOL]
        if "lemma1" in families:
            report["identities"]["lemma1"] = exactdiv.verify_lemma1(rng, max(args.trials, 200))
        if "lambda" in families:
            report["identities"]["lambda"] = exactdiv.verify_lambda(rng, args.trials)
        if div_families:
            t1 = exactdiv.verify_theorem1(rng, args.trials)
            mc = exactdiv.verify_mode_collapse_identity(rng, args.trials)
            for rep, name in ((t1, "theorem1"), (mc, "mode_collapse")):
                kept = {k: v for k, v in rep["families"].items() if k in div_families}
                out = {**rep, "families": kept,
                       "pass": all(v["pass"] for v in kept.values())}
                if name == "mode_collapse":
                    out["pass"] = out["pass"] and rep["degeneracy_witness_pass"]
                report["identities"][name] = out
        if "kernel" in families:
            report["identities"]["kernel"] = exactdiv.verify_kernel_theorem(rng, args.trials)
        if "infconv" in families:
            report["identities"]["infconv"] = exactdiv.verify_infconv(
                rng, min(args.trials, 50))
    ok = all(v["pass"] for v in report["identities"].values())
    report["pass"] = ok
    for name, rep in report["identities"].items():
        print(f"{name:14s} {'PASS' if rep['pass'] else 'FAIL'}")
    if args.json:
        _dump_json(_json_ready(report), args.json)
    return EXIT_OK if ok else EXIT_VERIFY_FAIL


# ---------------------------------------------------------------------------
# exact


def _measure(weights) -> DiscreteMeasure:
    w = np.asarray(weights, dtype=np.float64)
    return DiscreteMeasure(w / w.sum())


def cmd_exact(args) -> int:
    try:
        with open(args.instance) as fh:
            inst = json.load(fh)
        Q = _measure(inst["Q"])
        P = _measure(inst["P"])
        spec = inst["divergence"]
        kind = spec["kind"]
        if kind == "f":
            rep = exactdiv.f_divergence(Q, P, FDivGenerator.from_descriptor(spec))
        elif kind == "tv":
            rep = exactdiv.tv_ipm(Q, P)
        elif kind == "w1":
            metric = exactdiv.MetricSpace(np.asarray(inst["metric"], dtype=np.float64))
            rep = exactdiv.wasserstein1(Q, P, metric, L=float(spec.get("L", 1.0)))
        elif kind == "fgamma":
            metric = exactdiv.MetricSpace(np.asarray(inst["metric"], dtype=np.float64))
            rep = exactdiv.f_gamma_divergence(
                Q, P, FDivGenerator.from_descriptor(spec), metric,
                L=float(spec.get("L", 1.0)))
        elif kind == "sinkhorn":
            cost = np.asarray(inst["metric"], dtype=np.float64)
            rep = exactdiv.sinkhorn_divergence(Q, P, cost, eps=float(spec["eps"]))
        elif kind == "mmd":
            val = exactdiv.mmd(Q, P, np.asarray(inst["kernel"], dtype=np.float64))
            rep = exactdiv.DivergenceReport(val)
        else:
            raise ValueError(f"unknown divergence kind {kind!r}")
    except (OSError, KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"bad instance: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = {"value": rep.value, "gap": rep.gap,
           "witness": _json_ready({k: v for k, v in rep.witness.items()
                                   if isinstance(v, (int, float, np.ndarray))})}
    print(json.dumps(_json_ready(out), sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# toy runs


def scatter_svg(path: str, planar: np.ndarray, centers: np.ndarray,
                clip: float = 40.0, max_points: int = 3000, size: int = 640) -> None:
    """Self-contained SVG scatter in plane coordinates, axes clipped to +-clip."""
    keep = np.all(np.isfinite(planar), axis=1) & np.all(np.abs(planar) <= clip, axis=1)
    pts = planar[keep][:max_points]

    def sx(v):
        return (v + clip) / (2 * clip) * size

    def sy(v):
        return size - (v + clip) / (2 * clip) * size

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="0" y1="{size / 2}" x2="{size}" y2="{size / 2}" stroke="#ddd"/>',
        f'<line x1="{size / 2}" y1="0" x2="{size / 2}" y2="{size}" stroke="#ddd"/>',
    ]
    for x, y in pts:
        parts.append(
            f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="1.6" fill="#1f77b4" '
            f'fill-opacity="0.5"/>')
    for cx, cy in centers:
        parts.append(
            f'<g stroke="#d62728" stroke-width="2">'
            f'<line x1="{sx(cx) - 6:.1f}" y1="{sy(cy):.1f}" x2="{sx(cx) + 6:.1f}" y2="{sy(cy):.1f}"/>'
            f'<line x1="{sx(cx):.1f}" y1="{sy(cy) - 6:.1f}" x2="{sx(cx):.1f}" y2="{sy(cy) + 6:.1f}"/>'
            f"</g>")
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def run_toy(config_dict: dict, out_dir: str) -> dict:
    """One training run; writes metrics.json, samples.csv, scatter.svg.

    Returns the summary row.  Deterministic given the config (all artifact
    bytes depend only on config content).
    """
    os.makedirs(out_dir, exist_ok=True)
    config = gan.config_from_dict(config_dict)
    t0 = time.monotonic()
    state = gan.train(config)
    wall = time.monotonic() - t0

    h = state.history
    metrics_path = os.path.join(out_dir, "metrics.json")
    _dump_json(_json_ready({
        "config": _config_key(config_dict),
        "history": h,
        # final-evaluation snapshot
        "mode_freq": h["mode_freq"][-1],
        "min_mode_freq": h["min_mode_freq"][-1],
        "orth_residual": {"median": h["orth_median"][-1], "p90": h["orth_p90"][-1]},
        "invariance": {"ed": h["inv_ed"][-1], "null_hi": h["inv_null_hi"][-1]},
    }), metrics_path)

    sample_rng = np.random.default_rng((config.seed, 0x5A3))
    samples = gan.snapshot_samples(state, 3000, sample_rng)
    planar = config.data.project(samples.data)
    csv_path = os.path.join(out_dir, "samples.csv")
    np.savetxt(csv_path, samples.data, delimiter=",", fmt="%.8g")
    svg_path = os.path.join(out_dir, "scatter.svg")
    scatter_svg(svg_path, planar, config.data.centers)

    summary = {
        "min_mode_freq": h["min_mode_freq"][-1],
        "orth_median": h["orth_median"][-1],
        "inv_ed": h["inv_ed"][-1],
        "inv_null_hi": h["inv_null_hi"][-1],
        "wall_seconds": wall,
        "out_dir": out_dir,
    }
    with open(os.path.join(out_dir, "run.log"), "w") as fh:
        fh.write(f"wall_seconds={wall:.1f}\n")
    manifest = RunManifest.create(
        "toy", json.dumps(config_dict, sort_keys=True).encode(), config.seed,
        [metrics_path, csv_path, svg_path])
    _dump_json(asdict(manifest), os.path.join(out_dir, "manifest.json"))
    return summary


def _config_key(config_dict: dict) -> dict:
    return {k: v for k, v in sorted(config_dict.items()) if not isinstance(v, np.ndarray)}


def cmd_toy(args) -> int:
    try:
        with open(args.config) as fh:
            config_dict = json.load(fh)
        gan.config_from_dict(config_dict)  # validate early
    except (OSError, TypeError, ValueError, json.JSONDecodeError) as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        summary = run_toy(config_dict, args.out)
    except gan.TrainingAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    print(json.dumps(_json_ready(summary), sort_keys=True))
    return EXIT_OK


_MATRIX_VARIANTS = {
    "eqv": {"generator_variant": "eqv", "loss": {"kind": "lipalpha"}},
    "vanilla": {"generator_variant": "vanilla", "loss": {"kind": "lipalpha"}},
    "ieqv": {"generator_variant": "ieqv", "loss": {"kind": "lipalpha"}},
    "wgan": {"generator_variant": "eqv", "loss": {"kind": "wgan_gp"}},
}


def cmd_toy_matrix(args) -> int:
    variants = list(_MATRIX_VARIANTS) if args.variants == "all" else [
        v.strip() for v in args.variants.split(",")]
    bad = [v for v in variants if v not in _MATRIX_VARIANTS]
    if bad:
        print(f"unknown variants: {', '.join(bad)}", file=sys.stderr)
        return EXIT_INPUT
    tasks = []
    for variant in variants:
        for seed in range(args.seeds):
            cfg = {"discriminator_variant": "inv", "epochs": args.epochs,
                   "seed": seed, **_MATRIX_VARIANTS[variant]}
            tasks.append((variant, seed, cfg, os.path.join(args.out, f"{variant}_s{seed}")))
    workers = int(os.environ.get("SYMDIV_THREADS", os.cpu_count() or 1))
    workers = max(1, min(workers, len(tasks)))
    summary = {}
    try:
        if workers == 1:
            results = [run_toy(cfg, out) for _, _, cfg, out in tasks]
        else:
            with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run_toy, [t[2] for t in tasks],
                                        [t[3] for t in tasks]))
    except gan.TrainingAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    for (variant, seed, _, _), row in zip(tasks, results):
        # keep wall-clock out of the JSON so reruns are byte-identical
        summary.setdefault(variant, {})[str(seed)] = {
            k: v for k, v in row.items() if k != "wall_seconds"}
    os.makedirs(args.out, exist_ok=True)
    _dump_json(_json_ready(summary), os.path.join(args.out, "summary.json"))
    print(f"{'variant':10s} {'seed':4s} {'min_mode':>9s} {'orth_med':>9s} {'inv_ed':>9s}")
    for variant, rows in summary.items():
        for seed, row in rows.items():
            print(f"{variant:10s} {seed:4s} {row['min_mode_freq']:9.3f} "
                  f"{row['orth_median']:9.3f} {row['inv_ed']:9.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symdiv")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the randomized identity verifiers")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--families", type=str, default="",
                   help=f"comma list from: {','.join(_ALL_FAMILIES)}")
    p.add_argument("--json", type=str, default="", help="write the report here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("exact", help="evaluate one divergence instance")
    p.add_argument("--instance", type=str, required=True)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("toy", help="one adversarial training run")
    p.add_argument("--config", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("toy-matrix", help="variant x seed training grid")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--variants", type=str, default="all")
    p.add_argument("--epochs", type=int, default=10_000)
    p.add_argument("--out", type=str, required=True)
    p.set_defaults(func=cmd_toy_matrix)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
