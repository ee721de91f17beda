"""Command-line front end: ``riskcal calibrate | simulate | bench``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, fwer
from .losses import LossFormatError, ParameterGrid, RiskSpec, empirical_risk, load_grid, load_loss, save_grid, save_loss
from .pvalues import combine_max, pvalues_from_tensor
from .selection import Unsatisfiable, preset, select_lexicographic
from .simulation import METHODS, ARConfig, run_benchmark, simulate_ar, trial_rng
from .uniform import Growth, UniformBoundConfig, calibrate_uniform

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVARIANT = 3

PROCEDURES = ("bonferroni", "holm", "fixed-seq", "sgt", "split-fixed-seq", "cascade-2d", "uniform")


class InputError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


def _default_seed() -> int:
    raw = os.environ.get("RISKCAL_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        return 0


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _dump(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# ---------------------------------------------------------------------------
# calibrate


def _testing_order(N: int, direction: str) -> list[int]:
    return list(range(N - 1, -1, -1)) if direction == "descending" else list(range(N))


def _parse_starts(text: str | None, order: list[int], N: int) -> list[int]:
    if text is None:
        return [order[0]]
    if text.startswith("equispaced:"):
        count = int(text.split(":", 1)[1])
        return [order[k] for k in fwer.equispaced_starts(len(order), count)]
    starts = [int(s) for s in text.split(",") if s.strip()]
    if not starts or min(starts) < 0 or max(starts) >= N:
        raise InputError(f"starts {text!r} are not valid grid indices")
    return starts


def _graph(args, grid: ParameterGrid, delta: float) -> fwer.TestGraph:
    if args.graph in (None, "fallback", "hamming"):
        if grid.shape is None or len(grid.shape) != 2:
            raise InputError("built-in graphs need a 2-D grid with shape metadata")
        rows, cols = grid.shape
        if args.graph == "hamming":
            if rows != cols:
                raise InputError("the Hamming graph needs a square grid")
            return fwer.build_hamming_graph(rows, delta)
        return fwer.build_fallback_graph(rows, cols, delta)
    graph = fwer.load_graph(args.graph)
    if graph.n != grid.size:
        raise InputError(f"graph has {graph.n} nodes, grid has {grid.size}")
    if abs(graph.delta - delta) > fwer.BUDGET_TOL:
        raise InputError(f"graph budgets sum to {graph.delta}, --delta is {delta}")
    return graph


def _uniform_config(args, N: int) -> UniformBoundConfig:
    if args.uniform_config:
        return UniformBoundConfig.from_json(json.loads(Path(args.uniform_config).read_text()))
    if args.growth == "finite":
        return UniformBoundConfig(growth=Growth("finite", grid_size=N))
    return UniformBoundConfig(growth=Growth("fdr", m=1))


def _check_rejection(rs: fwer.RejectionSet, N: int) -> None:
    if any(i < 0 or i >= N for i in rs.indices):
        raise InvariantViolation("rejection set contains indices outside the grid")
    if rs.log and rs.replay() != rs.indices:
        raise InvariantViolation("audit log does not replay to the rejection set")


def calibrate(args) -> dict:
    loss = load_loss(args.loss)
    grid = load_grid(args.grid) if args.grid else ParameterGrid(np.arange(1, loss.N + 1)[:, None] / loss.N, (loss.N,))
    if grid.size != loss.N:
        raise LossFormatError(f"dimension mismatch: loss has N={loss.N}, grid has {grid.size} points")
    alphas = args.alpha if len(args.alpha) == loss.m else (args.alpha * loss.m if len(args.alpha) == 1 else None)
    if alphas is None:
        raise InputError(f"need 1 or {loss.m} alpha values, got {len(args.alpha)}")
    spec = RiskSpec(tuple(alphas), args.delta)
    if args.pvalue == "hb" and not all(loss.bounded):
        raise InputError("HB p-values need bounded losses; use --pvalue clt")
    r_hat, sigma = empirical_risk(loss)
    N = loss.N
    extra: dict = {}

    if args.procedure == "uniform":
        if loss.m != 1 or grid.dim != 1:
            raise InputError("uniform calibration needs a single risk on a 1-D grid")
        res = calibrate_uniform(loss, grid, spec.alphas[0], spec.delta, _uniform_config(args, N), eta=args.eta)
        log = tuple({"index": j, "level": spec.alphas[0], "bound": float(res.r_plus[j]), "decision": "reject"} for j in res.certified)
        rs = fwer.RejectionSet(res.certified, "uniform", spec.delta, spec.alphas, log)
        extra["uniform"] = res.to_json()
        pmat = None
    else:
        pmat = pvalues_from_tensor(loss, spec, args.pvalue)
        p = combine_max(pmat)
        order = _testing_order(N, args.direction)
        if args.procedure == "bonferroni":
            rs = fwer.bonferroni(p, spec.delta, spec.alphas)
        elif args.procedure == "holm":
            rs = fwer.holm(p, spec.delta, spec.alphas)
        elif args.procedure == "fixed-seq":
            starts = _parse_starts(args.starts, order, N)
            rs = fwer.fixed_sequence(p, spec.delta, starts=starts, order=order, alphas=spec.alphas)
        elif args.procedure == "sgt":
            rs = fwer.sgt(p, _graph(args, grid, spec.delta), spec.alphas)
        elif args.procedure == "cascade-2d":
            if grid.shape is None or len(grid.shape) != 2:
                raise InputError("cascaded testing needs a 2-D grid with shape metadata")
            rs = fwer.cascaded_2d_fixed_sequence(p.reshape(grid.shape), spec.delta, spec.alphas)
        else:
            if not 0.0 < args.split_frac < 1.0:
                raise InputError("--split-frac must lie in (0, 1)")
            perm = trial_rng(args.seed, 0).permutation(loss.n)
            cut = int(round(args.split_frac * loss.n))
            if cut < 1 or cut >= loss.n:
                raise InputError("split leaves an empty half")
            part_a, part_b = loss.subset(np.sort(perm[:cut])), loss.subset(np.sort(perm[cut:]))
            p_graph = pvalues_from_tensor(part_a, spec, args.pvalue)
            p_test = combine_max(pvalues_from_tensor(part_b, spec, args.pvalue))
            ordering, rs = fwer.split_fixed_sequence(p_graph, p_test, args.split_d, spec.delta, spec.alphas)
            extra["split"] = {"ordering": ordering, "graph_size": cut, "test_size": loss.n - cut}
    _check_rejection(rs, N)
    if pmat is not None and (np.any(pmat < 0) or np.any(pmat > 1)):
        raise InvariantViolation("p-values outside [0, 1]")

    stages = preset(args.selection, grid)
    try:
        selected = select_lexicographic(rs.indices, grid, stages, objective=r_hat)
        selection = {"preset": args.selection, "index": selected, "abstained": selected is None}
    except Unsatisfiable as exc:
        selected = None
        selection = {"preset": args.selection, "index": None, "abstained": True, "reason": str(exc)}
    if selected is not None:
        selection["value"] = grid.values[selected].tolist()

    report = {
        "tool": "riskcal",
        "version": __version__,
        "command": "calibrate",
        "config": {
            "loss": str(args.loss),
            "grid": str(args.grid) if args.grid else None,
            "alphas": list(spec.alphas),
            "delta": spec.delta,
            "pvalue": args.pvalue,
            "procedure": args.procedure,
            "direction": args.direction,
            "starts": args.starts,
            "graph": args.graph,
            "split_frac": args.split_frac,
            "split_d": args.split_d,
            "eta": args.eta,
            "growth": args.growth,
            "selection": args.selection,
            "seed": args.seed,
        },
        "data": {"n": loss.n, "N": N, "m": loss.m, "bounded": list(loss.bounded)},
        "risk_summary": [
            {"min": float(r_hat[:, l].min()), "max": float(r_hat[:, l].max()), "mean": float(r_hat[:, l].mean())}
            for l in range(loss.m)
        ],
        "certified": rs.to_json(),
        "selection": selection,
        **extra,
    }
    if args.emit_pvalues and pmat is not None:
        report["pvalues"] = pmat.tolist()
    return report


def cmd_calibrate(args) -> int:
    report = calibrate(args)
    _dump(report, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / bench


def _read_curve(path: str) -> tuple[float, ...]:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
        values = obj["risk_curve"] if isinstance(obj, dict) else obj
    except json.JSONDecodeError:
        values = text.replace(",", " ").split()
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise InputError(f"risk curve file {path} is not a list of numbers") from exc


def _ar_config(args) -> ARConfig:
    if args.risk_curve:
        curve = _read_curve(args.risk_curve)
        return ARConfig(n=args.n, N=len(curve) if args.N is None else args.N, corr=args.corr, risk_curve=curve, seed=args.seed)
    if len(args.v_shape) != 2:
        raise InputError("--v-shape takes r_end,r_min")
    r_end, r_min = args.v_shape
    return ARConfig(n=args.n, N=1000 if args.N is None else args.N, corr=args.corr, r_end=r_end, r_min=r_min, seed=args.seed)


def cmd_simulate(args) -> int:
    config = _ar_config(args)
    save_loss(simulate_ar(config), args.out)
    if args.grid_out:
        save_grid(config.grid(), args.grid_out)
    return EXIT_OK


def _svg(config: ARConfig, report, path: str) -> None:
    W, H, pad = 640, 400, 50
    lam = config.grid().values[:, 0]
    target = config.target()
    r_hat = simulate_ar(config, 0).risk(0).mean(axis=0)
    top = max(float(target.max()), float(r_hat.max()), max(report.alphas)) * 1.1

    def xy(x, y):
        return pad + x * (W - 2 * pad), H - pad - y / top * (H - 2 * pad)

    def poly(ys, color, width):
        pts = " ".join("{:.2f},{:.2f}".format(*xy(x, y)) for x, y in zip(lam, ys))
        return f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{pts}"/>'

    colors = {"empirical-baseline": "#7f7f7f", "fixed-sequence": "#1f77b4", "bonferroni": "#ff7f0e", "uniform": "#2ca02c"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        '<line x1="{:.2f}" y1="{:.2f}" x2="{:.2f}" y2="{:.2f}" stroke="black"/>'.format(*xy(0, 0), *xy(1, 0)),
        '<line x1="{:.2f}" y1="{:.2f}" x2="{:.2f}" y2="{:.2f}" stroke="black"/>'.format(*xy(0, 0), *xy(0, top)),
        poly(r_hat, "#d62728", 1),
        poly(target, "black", 2),
    ]
    table = report.table(0)
    for a, alpha in enumerate(report.alphas):
        parts.append('<line x1="{:.2f}" y1="{:.2f}" x2="{:.2f}" y2="{:.2f}" stroke="#999" stroke-dasharray="4 3"/>'.format(*xy(0, alpha), *xy(1, alpha)))
        for m in report.methods:
            end = table[m][a]
            if end is not None:
                cx, cy = xy(end, alpha)
                parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="{colors[m]}"><title>{m} alpha={alpha}</title></circle>')
    for k, m in enumerate(report.methods):
        parts.append(f'<text x="{W - pad - 150}" y="{pad + 16 * k}" font-size="12" fill="{colors[m]}">{m}</text>')
    parts.append(f'<text x="{W / 2:.0f}" y="{H - 12}" font-size="12" text-anchor="middle">lambda</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def cmd_bench(args) -> int:
    config = _ar_config(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise InputError(f"unknown method(s): {', '.join(sorted(unknown))}")
    if args.trials < 1 or args.threads < 1:
        raise InputError("--trials and --threads must be >= 1")
    report = run_benchmark(
        config,
        args.alphas,
        args.delta,
        methods,
        trials=args.trials,
        threads=args.threads,
        fs_start=args.fs_start,
        record_runtime=args.runtime,
    )
    body = {"tool": "riskcal", "version": __version__, "command": "bench", **report.to_json()}
    body["config"]["fs_start"] = args.fs_start
    _dump(body, args.out)
    if args.plot:
        _svg(config, report, args.plot)
    if args.endpoints_csv:
        report.write_endpoints_csv(args.endpoints_csv)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_ar_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--N", type=int, default=None, help="grid size (default 1000, or the risk-curve length)")
    p.add_argument("--corr", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--v-shape", type=_floats, default=[0.25, 0.05], metavar="R_END,R_MIN")
    p.add_argument("--risk-curve", default=None, metavar="FILE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskcal", description=__doc__)
    parser.add_argument("--version", action="version", version=f"riskcal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="certify grid points and select a parameter")
    c.add_argument("--loss", required=True)
    c.add_argument("--grid", default=None)
    c.add_argument("--alpha", type=_floats, required=True, help="one level per risk, comma-separated")
    c.add_argument("--delta", type=float, required=True)
    c.add_argument("--pvalue", choices=("hb", "clt"), default="hb")
    c.add_argument("--procedure", choices=PROCEDURES, default="fixed-seq")
    c.add_argument("--starts", default=None, help="comma-separated grid indices or equispaced:K")
    c.add_argument("--direction", choices=("descending", "ascending"), default="descending")
    c.add_argument("--graph", default=None, help="graph JSON file, 'fallback' or 'hamming'")
    c.add_argument("--split-frac", type=float, default=0.5)
    c.add_argument("--split-d", type=int, default=100)
    c.add_argument("--eta", type=float, default=None)
    c.add_argument("--growth", choices=("fdr", "finite"), default="finite")
    c.add_argument("--uniform-config", default=None, metavar="FILE")
    c.add_argument("--selection", default="sup", help="'sup', 'detection' or a JSON file of stages")
    c.add_argument("--emit-pvalues", action="store_true")
    c.add_argument("--seed", type=int, default=_default_seed())
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("simulate", help="write autoregressive synthetic losses")
    _add_ar_flags(s)
    s.add_argument("--out", required=True)
    s.add_argument("--grid-out", default=None)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="compare methods on synthetic losses")
    _add_ar_flags(b)
    b.add_argument("--alphas", type=_floats, default=[0.1, 0.15, 0.2])
    b.add_argument("--delta", type=float, default=0.1)
    b.add_argument("--methods", default=",".join(METHODS))
    b.add_argument("--trials", type=int, default=1)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--fs-start", choices=("valley", "right"), default="valley")
    b.add_argument("--runtime", action="store_true", help="include wall-clock metadata (breaks byte-identity)")
    b.add_argument("--plot", default=None, metavar="SVG")
    b.add_argument("--endpoints-csv", default=None)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"riskcal: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"riskcal: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, KeyError) as exc:
        print(f"riskcal: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
