"""Synthetic autoregressive losses and Monte Carlo harnesses.

Losses follow ``L_ij = Phi(u_ij + mu_j)`` where ``u_i.`` is a stationary
unit-variance AR(1) chain across the grid. Because ``E[Phi(Z + mu)] =
Phi(mu / sqrt(2))`` for standard normal ``Z``, picking ``mu_j = sqrt(2)
Phi^{-1}(R_j)`` makes the true risk at every grid point exactly ``R_j``, so
null sets are known exactly.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.signal import lfilter
from scipy.special import ndtr, ndtri

from . import fwer
from .losses import LossTensor, ParameterGrid
from .pvalues import hb_pvalue
from .uniform import Growth, SampleSizeError, UniformBoundConfig, optimal_eta, solve_t, upper_confidence_bound

METHODS = ("empirical-baseline", "fixed-sequence", "bonferroni", "uniform")


def canonical_v(N: int, r_end: float = 0.25, r_min: float = 0.05, center: int | None = None) -> np.ndarray:
    """Piecewise-linear V: ``r_end`` at both ends, ``r_min`` at index ``center``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if not (0.0 < r_min < 1.0 and 0.0 < r_end < 1.0):
        raise ValueError("V parameters must lie in (0, 1)")
    if r_min > r_end:
        raise ValueError("r_min must not exceed r_end")
    if N == 1:
        return np.array([r_min])
    center = (N - 1) // 2 if center is None else int(center)
    if not 0 <= center < N:
        raise ValueError("center out of range")
    j = np.arange(N, dtype=float)
    left = r_end + (r_min - r_end) * j / max(center, 1)
    right = r_min + (r_end - r_min) * (j - center) / max(N - 1 - center, 1)
    out = np.where(j <= center, left, right)
    out[center] = r_min
    return out


@dataclass(frozen=True)
class ARConfig:
    n: int = 5000
    N: int = 1000
    corr: float = 0.9
    risk_curve: tuple[float, ...] | None = None
    r_end: float = 0.25
    r_min: float = 0.05
    center: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.N < 1:
            raise ValueError("n and N must be >= 1")
        if not 0.0 <= self.corr < 1.0:
            raise ValueError("corr must lie in [0, 1)")
        if self.risk_curve is not None:
            curve = tuple(float(r) for r in self.risk_curve)
            if len(curve) != self.N:
                raise ValueError(f"risk curve has {len(curve)} points, expected N={self.N}")
            if min(curve) <= 0.0 or max(curve) >= 1.0:
                raise ValueError("target risks must lie strictly inside (0, 1)")
            object.__setattr__(self, "risk_curve", curve)
        else:
            canonical_v(self.N, self.r_end, self.r_min, self.center)

    def target(self) -> np.ndarray:
        if self.risk_curve is not None:
            return np.asarray(self.risk_curve)
        return canonical_v(self.N, self.r_end, self.r_min, self.center)

    def grid(self) -> ParameterGrid:
        """``lambda_j = j / N`` for j = 1..N."""
        return ParameterGrid(np.arange(1, self.N + 1, dtype=float)[:, None] / self.N, (self.N,))

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "N": self.N,
            "corr": self.corr,
            "risk_curve": list(self.risk_curve) if self.risk_curve is not None else None,
            "r_end": self.r_end,
            "r_min": self.r_min,
            "center": self.center,
            "seed": self.seed,
        }


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based generator for one trial, independent of scheduling."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trial)])))


def simulate_ar(config: ARConfig, trial: int = 0) -> LossTensor:
    rng = trial_rng(config.seed, trial)
    z = rng.standard_normal((config.n, config.N))
    scale = math.sqrt(1.0 - config.corr**2)
    # u_1 = z_1, u_j = corr u_{j-1} + scale z_j
    z[:, 0] /= scale
    u = lfilter([scale], [1.0, -config.corr], z, axis=1)
    mu = math.sqrt(2.0) * ndtri(config.target())
    return LossTensor(ndtr(u + mu), True)


# ---------------------------------------------------------------------------
# benchmark


def _endpoint(indices: Sequence[int], grid_values: np.ndarray) -> float | None:
    if len(indices) == 0:
        return None
    return float(grid_values[max(indices)])


def _precede(a: float | None, b: float | None) -> bool:
    if a is None:
        return True
    return b is not None and a <= b


@dataclass
class BenchmarkReport:
    config: ARConfig
    alphas: tuple[float, ...]
    delta: float
    methods: tuple[str, ...]
    endpoints: dict[str, list[list[float | None]]]
    false_rejections: dict[str, list[list[bool]]]
    runtime: dict = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return len(next(iter(self.endpoints.values())))

    def table(self, trial: int = 0) -> dict[str, list[float | None]]:
        return {m: self.endpoints[m][trial] for m in self.methods}

    def fwer(self) -> dict[str, list[dict]]:
        out = {}
        T = self.trials
        for m in self.methods:
            flags = np.asarray(self.false_rejections[m], dtype=float)
            est = flags.mean(axis=0)
            se = np.sqrt(est * (1 - est) / T)
            out[m] = [{"estimate": float(e), "se": float(s)} for e, s in zip(est, se)]
        return out

    def dominance(self) -> list[float]:
        """Per-alpha fraction of trials with uniform <= bonferroni <= fixed-sequence <= baseline."""
        chain = [m for m in ("uniform", "bonferroni", "fixed-sequence", "empirical-baseline") if m in self.methods]
        fracs = []
        for a in range(len(self.alphas)):
            ok = 0
            for t in range(self.trials):
                ends = [self.endpoints[m][t][a] for m in chain]
                ok += all(_precede(x, y) for x, y in zip(ends, ends[1:]))
            fracs.append(ok / self.trials)
        return fracs

    def to_json(self) -> dict:
        out = {
            "config": self.config.to_json(),
            "alphas": list(self.alphas),
            "delta": self.delta,
            "methods": list(self.methods),
            "trials": self.trials,
            "table": self.table(0),
            "fwer": self.fwer(),
            "dominance": self.dominance(),
        }
        if self.runtime:
            out["runtime"] = self.runtime
        return out

    def write_endpoints_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "method", "alpha", "endpoint"])
            for t in range(self.trials):
                for m in self.methods:
                    for a, e in zip(self.alphas, self.endpoints[m][t]):
                        w.writerow([t, m, repr(a), "" if e is None else repr(e)])


def _run_trial(trial, config, alphas, delta, methods, uniform_params, fs_start, grid_values, target):
    loss = simulate_ar(config, trial).risk(0)
    n, N = loss.shape
    r_hat = loss.mean(axis=0)
    ends, bad = {m: [] for m in methods}, {m: [] for m in methods}
    for a, alpha in enumerate(alphas):
        nulls = target > alpha
        p = None
        if "fixed-sequence" in methods or "bonferroni" in methods:
            p = hb_pvalue(r_hat, n, alpha)
        for m in methods:
            if m == "empirical-baseline":
                idx = np.flatnonzero(r_hat < alpha).tolist()
                idx = idx[-1:]  # only the endpoint matters; the baseline certifies nothing
                ends[m].append(_endpoint(idx, grid_values))
                bad[m].append(bool(idx and nulls[idx[0]]))
                continue
            if m == "fixed-sequence":
                if fs_start == "valley":
                    start = int(np.argmin(target))
                    order = list(range(start, N))
                else:
                    order = list(range(N - 1, -1, -1))
                idx = fwer.fixed_sequence(p, delta, starts=[order[0]], order=order).indices
            elif m == "bonferroni":
                idx = fwer.bonferroni(p, delta).indices
            else:
                eta, t_star = uniform_params[a]
                if t_star is None:
                    idx = ()
                else:
                    r_plus = upper_confidence_bound(r_hat, t_star, eta)
                    ok = r_plus[::-1] <= alpha
                    run = N if ok.all() else int(np.argmin(ok))
                    idx = tuple(range(N - run, N))
            ends[m].append(_endpoint(idx, grid_values))
            bad[m].append(bool(np.any(nulls[list(idx)])) if len(idx) else False)
    return ends, bad


def run_benchmark(
    config: ARConfig,
    alphas: Sequence[float] = (0.1, 0.15, 0.2),
    delta: float = 0.1,
    methods: Sequence[str] = METHODS,
    trials: int = 1,
    threads: int = 1,
    uniform_config: UniformBoundConfig | None = None,
    fs_start: str = "valley",
    record_runtime: bool = False,
) -> BenchmarkReport:
    """Simulate, compute HB p-values and report each method's rightmost certified endpoint.

    ``fs_start='valley'`` starts the fixed-sequence walk at the design minimum
    of the risk curve and walks towards larger parameters; ``'right'`` starts
    at the largest parameter and walks down.
    """
    methods = tuple(methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown method(s): {sorted(unknown)}")
    if fs_start not in ("valley", "right"):
        raise ValueError("fs_start must be 'valley' or 'right'")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    alphas = tuple(float(a) for a in alphas)
    start = time.perf_counter()
    uniform_config = uniform_config or UniformBoundConfig(growth=Growth("finite", grid_size=config.N))
    uniform_params = []
    if "uniform" in methods:
        for alpha in alphas:
            try:
                eta, _ = optimal_eta(alpha, delta, config.n, uniform_config)
                uniform_params.append((eta, solve_t(eta, delta, config.n, uniform_config)))
            except SampleSizeError:
                uniform_params.append((None, None))
    grid_values = config.grid().values[:, 0]
    target = config.target()
    args = (config, alphas, delta, methods, uniform_params, fs_start, grid_values, target)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda t: _run_trial(t, *args), range(trials)))
    else:
        results = [_run_trial(t, *args) for t in range(trials)]
    endpoints = {m: [r[0][m] for r in results] for m in methods}
    false_rej = {m: [r[1][m] for r in results] for m in methods}
    runtime = {"seconds": time.perf_counter() - start, "threads": threads} if record_runtime else {}
    return BenchmarkReport(config, alphas, delta, methods, endpoints, false_rej, runtime)


# ---------------------------------------------------------------------------
# FWER harness

Procedure = Callable[[LossTensor, float, float], Sequence[int]]


def pvalue_procedure(fn: Callable[[np.ndarray, float], "fwer.RejectionSet"]) -> Procedure:
    """Adapt ``fn(p, delta) -> RejectionSet`` to run on HB p-values of a loss tensor."""

    def run(loss: LossTensor, alpha: float, delta: float):
        p = hb_pvalue(loss.risk(0).mean(axis=0), loss.n, alpha)
        return fn(p, delta).indices

    return run


@dataclass(frozen=True)
class FWEREstimate:
    estimate: float
    se: float
    trials: int
    first_null_rate: float | None = None
    first_null_se: float | None = None

    def within(self, delta: float, k: float = 3.0) -> bool:
        return self.estimate <= delta + k * self.se


def _binomial_se(count: int, trials: int) -> tuple[float, float]:
    est = count / trials
    return est, math.sqrt(est * (1 - est) / trials)


def fwer_monte_carlo(
    procedure: Procedure,
    null_config: ARConfig,
    alpha: float,
    delta: float,
    trials: int = 2000,
    first_null: int | None = None,
    threads: int = 1,
) -> FWEREstimate:
    """Frequency of any false rejection over independent simulated datasets.

    The null set is ``{j : R_j > alpha}`` under the configured target curve.
    With ``first_null`` the run also counts ``{p_first_null <= delta}`` using
    the same datasets.
    """
    if trials < 100:
        raise ValueError("trials must be >= 100 for a meaningful standard error")
    nulls = null_config.target() > alpha
    if first_null is not None and not nulls[first_null]:
        raise ValueError("first_null is not a null index")
    if not nulls.any():
        return FWEREstimate(0.0, 0.0, trials, 0.0 if first_null is not None else None, 0.0 if first_null is not None else None)

    def one(trial: int) -> tuple[bool, bool]:
        loss = simulate_ar(null_config, trial)
        idx = list(procedure(loss, alpha, delta))
        hit = bool(np.any(nulls[idx])) if idx else False
        dual = False
        if first_null is not None:
            r = float(loss.risk(0)[:, first_null].mean())
            dual = hb_pvalue(r, loss.n, alpha) <= delta
        return hit, dual

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outcomes = list(pool.map(one, range(trials)))
    else:
        outcomes = [one(t) for t in range(trials)]
    est, se = _binomial_se(sum(o[0] for o in outcomes), trials)
    if first_null is None:
        return FWEREstimate(est, se, trials)
    d_est, d_se = _binomial_se(sum(o[1] for o in outcomes), trials)
    return FWEREstimate(est, se, trials, d_est, d_se)
