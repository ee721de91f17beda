"""Uniform concentration baseline.

Self-normalized empirical-process tail bounds give a simultaneous upper
confidence bound ``R+`` on the risk over the whole grid. Calibration then
descends the grid while ``R+ <= alpha``. The approach is valid but far more
conservative than the multiple-testing procedures in :mod:`riskcal.fwer`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import ndtr

from .losses import LossTensor, ParameterGrid

C1 = 1.0 / (4.0 * (1.0 - float(ndtr(math.sqrt(2.0)))))
C2 = 5.0 * math.sqrt(math.e) * (2.0 * float(ndtr(1.0)) - 1.0)

T_CAP = 2.0
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class VacuousBoundError(ValueError):
    pass


class SampleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class Growth:
    """The growth function ``Delta(n)``: number of distinct loss patterns on n points.

    kinds: ``fdr`` gives ``n*m + 1``; ``finite`` gives the grid size; ``table``
    looks up the smallest tabulated sample size at or above ``n``.
    """

    kind: str = "fdr"
    m: int = 1
    grid_size: int | None = None
    table: Mapping[int, float] | None = None

    def __post_init__(self):
        if self.kind not in ("fdr", "finite", "table"):
            raise ValueError(f"unknown growth kind {self.kind!r}")
        if self.kind == "finite" and (self.grid_size is None or self.grid_size < 1):
            raise ValueError("finite growth needs grid_size >= 1")
        if self.kind == "table" and not self.table:
            raise ValueError("table growth needs a non-empty table")

    def __call__(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        if self.kind == "finite":
            return np.full_like(n, float(self.grid_size))
        if self.kind == "fdr":
            out = n * self.m + 1.0
            if self.grid_size is not None:
                out = np.minimum(out, float(self.grid_size))
            return out
        keys = np.array(sorted(self.table), dtype=float)
        vals = np.array([self.table[int(k)] for k in sorted(self.table)], dtype=float)
        pos = np.searchsorted(keys, n, side="left")
        if np.any(pos >= keys.size):
            raise ValueError(f"growth table does not reach n={n.max():.0f}")
        return vals[pos]

    def to_json(self) -> dict:
        out = {"kind": self.kind, "m": self.m, "grid_size": self.grid_size}
        if self.table is not None:
            out["table"] = {str(k): v for k, v in sorted(self.table.items())}
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "Growth":
        table = obj.get("table")
        if table is not None:
            table = {int(k): float(v) for k, v in table.items()}
        return cls(obj.get("kind", "fdr"), int(obj.get("m", 1)), obj.get("grid_size"), table)


def _default_gammas() -> tuple[float, ...]:
    return tuple(round(0.01 * k, 2) for k in range(1, 100))


@dataclass(frozen=True)
class UniformBoundConfig:
    growth: Growth = field(default_factory=Growth)
    gammas: tuple[float, ...] = field(default_factory=_default_gammas)
    nprime_factors: tuple[float, ...] = (1 / 8, 1 / 4, 1 / 2, 1, 2, 4, 8)
    tol: float = 1e-6
    eta_grid: tuple[float, ...] = tuple(np.logspace(-4, 0, 25).tolist())
    golden_iters: int = 20

    def __post_init__(self):
        g = np.asarray(self.gammas, dtype=float)
        if g.size == 0 or np.any(g <= 0.0) or np.any(g >= 1.0):
            raise ValueError("gamma grid must be a non-empty subset of (0, 1)")
        if not self.nprime_factors or min(self.nprime_factors) <= 0:
            raise ValueError("n' factors must be positive")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if not self.eta_grid or min(self.eta_grid) < 0:
            raise ValueError("eta grid must be non-empty and nonnegative")

    def nprimes(self, n: int) -> np.ndarray:
        return np.unique(np.maximum(1, np.ceil(np.asarray(self.nprime_factors) * n))).astype(float)

    def to_json(self) -> dict:
        return {
            "growth": self.growth.to_json(),
            "gammas": list(self.gammas),
            "nprime_factors": list(self.nprime_factors),
            "tol": self.tol,
            "eta_grid": list(self.eta_grid),
            "golden_iters": self.golden_iters,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "UniformBoundConfig":
        base = cls()
        return cls(
            growth=Growth.from_json(obj.get("growth", {})),
            gammas=tuple(obj.get("gammas", base.gammas)),
            nprime_factors=tuple(obj.get("nprime_factors", base.nprime_factors)),
            tol=float(obj.get("tol", base.tol)),
            eta_grid=tuple(obj.get("eta_grid", base.eta_grid)),
            golden_iters=int(obj.get("golden_iters", base.golden_iters)),
        )


# ---------------------------------------------------------------------------
# bound ingredients


def g1(t, nprime, gamma, kappa):
    t, nprime, gamma, kappa = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, nprime, gamma, kappa)))
    with np.errstate(divide="ignore", invalid="ignore"):
        first = np.where(kappa > 0, nprime * t**2 / 2 * gamma**2 / (1 + gamma**2 * t**2 / (36 * kappa)), 0.0)
        gap = (np.sqrt(1 + kappa) - np.sqrt(kappa)) ** 2
        second = np.log(nprime * t**2 * gamma**2 / gap)
    return np.maximum(first, second)


def g2(t, n, nprime, gamma, kappa):
    t, nprime, gamma, kappa = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, nprime, gamma, kappa)))
    share = nprime / (n + nprime)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(
            kappa > 0,
            n * t**2 / 2 * share**2 * (1 - gamma) ** 2 / (1 + (1 - gamma) ** 2 * t**2 / (36 * kappa)),
            0.0,
        )


def kappa_plus(t, eta):
    return eta + t**2 / 2 + t * np.sqrt(t**2 / 4 + eta)


def kappa_minus(t, eta, n, nprime, gamma):
    return eta + (n + gamma * nprime) / (n + nprime) * t * np.sqrt(kappa_plus(t, eta))


def g_tilde(x):
    x = np.asarray(x, dtype=float)
    tail = ndtr(-x)
    gauss = np.exp(-(x**2) / 2)
    return np.minimum.reduce([C1 * tail, tail + C2 / (9 + x**2) * gauss, gauss])


def _ratio(log_num, g1_val):
    """``exp(log_num) / (1 - exp(-g1))``, NaN where the denominator is not positive."""
    with np.errstate(over="ignore", invalid="ignore"):
        denom = -np.expm1(-g1_val)
        return np.where(denom > 0, np.exp(log_num) / np.where(denom > 0, denom, 1.0), np.nan)


def _tail_bound(t: float, n: int, eta: float, config: UniformBoundConfig) -> float:
    gam = np.asarray(config.gammas, dtype=float)[:, None]
    npr = config.nprimes(n)[None, :]
    growth = config.growth
    # vapnik-type bound over (gamma, n')
    km = kappa_minus(t, eta, n, npr, gam)
    first = _ratio(np.log(growth(n + npr)) - g2(t, n, npr, gam, km), g1(t, npr, gam, eta))
    # rademacher refinement over gamma
    x = math.sqrt(n * (1 + eta) / 2) * (1 - gam[:, 0]) * t
    with np.errstate(divide="ignore"):
        log_num = float(np.log(growth(2 * n))) + np.log(g_tilde(x))
    second = _ratio(log_num, g1(t, n, gam[:, 0], eta))
    cells = np.concatenate([first.ravel(), second.ravel()])
    cells = cells[np.isfinite(cells)]
    if cells.size == 0:
        return 1.0
    return float(min(1.0, max(0.0, cells.min())))


def tail_bound_upper(t: float, n: int, eta: float = 0.0, config: UniformBoundConfig | None = None) -> float:
    """Upper-deviation tail bound ``P(sup (s - s_hat)/sqrt(s + eta) >= t)``.

    The minimum over both bound families of their infimum over the configured
    ``(gamma, n')`` grid, clamped to [0, 1].
    """
    config = config or UniformBoundConfig()
    if t <= 0:
        raise ValueError("t must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    gam = np.asarray(config.gammas, dtype=float)[:, None]
    npr = config.nprimes(n)[None, :]
    vacuous = np.all(g1(t, npr, gam, eta) <= 0) and np.all(g1(t, n, gam[:, 0], eta) <= 0)
    if vacuous:
        raise VacuousBoundError(f"bound vacuous at this t ({t})")
    return _tail_bound(t, n, eta, config)


def solve_t(eta: float, delta: float, n: int, config: UniformBoundConfig | None = None) -> float:
    """The critical value ``t(eta; delta)`` at which the tail bound equals ``delta``.

    Brackets by doubling from 0.01, then bisects until the bound at the upper
    end is within ``tol`` of ``delta``. The upper (conservative) end is returned.
    """
    config = config or UniformBoundConfig()
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = 0.0, 0.01
    while _tail_bound(hi, n, eta, config) >= delta:
        if hi >= T_CAP:
            raise SampleSizeError("sample size too small for uniform certification")
        lo, hi = hi, min(2 * hi, T_CAP)
    for _ in range(200):
        b_hi = _tail_bound(hi, n, eta, config)
        if delta - b_hi <= config.tol or hi - lo <= 1e-15 * max(hi, 1.0):
            break
        mid = 0.5 * (lo + hi)
        if _tail_bound(mid, n, eta, config) >= delta:
            lo = mid
        else:
            hi = mid
    return hi


def upper_confidence_bound(r_hat, t_star: float, eta: float):
    """``R+ = r_hat + t sqrt(r_hat + eta + t^2/4) + t^2/2``."""
    r = np.asarray(r_hat, dtype=float)
    out = r + t_star * np.sqrt(r + eta + t_star**2 / 4) + t_star**2 / 2
    return out if out.ndim else float(out)


def x_of_eta(eta: float, alpha: float, delta: float, n: int, config: UniformBoundConfig) -> float:
    """Largest empirical risk that still certifies ``alpha`` at this ``eta``."""
    try:
        t = solve_t(eta, delta, n, config)
    except SampleSizeError:
        return -math.inf
    return alpha - t * math.sqrt(alpha + eta)


def optimal_eta(alpha: float, delta: float, n: int, config: UniformBoundConfig | None = None) -> tuple[float, float]:
    """Pick ``eta`` making the certifiable empirical risk ``x(eta)`` as large as possible.

    Log-grid search followed by golden-section refinement in ``log(eta)``
    between the neighbours of the best grid point. Returns ``(eta*, x*)``.
    """
    config = config or UniformBoundConfig()
    if not (0.0 < alpha < 1.0 and 0.0 < delta < 1.0):
        raise ValueError("alpha and delta must lie in (0, 1)")
    etas = np.asarray(sorted(config.eta_grid), dtype=float)
    xs = np.array([x_of_eta(e, alpha, delta, n, config) for e in etas])
    k = int(np.argmax(xs))
    best_eta, best_x = float(etas[k]), float(xs[k])
    positive = etas > 0
    if config.golden_iters > 0 and np.isfinite(best_x) and positive[k]:
        lo = math.log(etas[k - 1]) if k > 0 and positive[k - 1] else math.log(etas[k]) - 1.0
        hi = math.log(etas[k + 1]) if k + 1 < etas.size else math.log(etas[k]) + 1.0
        f = lambda u: x_of_eta(math.exp(u), alpha, delta, n, config)  # noqa: E731
        a, b = lo, hi
        c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(config.golden_iters):
            if fc >= fd:
                b, d, fd = d, c, fc
                c = b - GOLDEN * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + GOLDEN * (b - a)
                fd = f(d)
            for u, fu in ((c, fc), (d, fd)):
                if fu > best_x:
                    best_eta, best_x = math.exp(u), fu
    if not best_x > 0:
        raise SampleSizeError("alpha unreachable at this n")
    return best_eta, best_x


@dataclass(frozen=True)
class UniformResult:
    selected: int | None
    certified: tuple[int, ...]
    eta: float | None
    t_star: float | None
    r_plus: np.ndarray | None = None

    def to_json(self) -> dict:
        return {
            "selected": self.selected,
            "certified": list(self.certified),
            "eta": self.eta,
            "t_star": self.t_star,
        }


def calibrate_uniform(
    loss: LossTensor | np.ndarray,
    grid: ParameterGrid | None,
    alpha: float,
    delta: float,
    config: UniformBoundConfig | None = None,
    eta: float | None = None,
) -> UniformResult:
    """Descend the grid from its largest parameter while ``R+ <= alpha``.

    Returns the last grid index reached, or ``selected=None`` when the very
    first point already fails. ``eta`` defaults to the optimised value.
    """
    config = config or UniformBoundConfig()
    if isinstance(loss, LossTensor):
        if loss.m != 1:
            raise ValueError("uniform calibration handles a single risk")
        if not loss.bounded[0]:
            raise ValueError("uniform calibration needs bounded losses")
        matrix = loss.risk(0)
    else:
        matrix = np.asarray(loss, dtype=float)
        if matrix.min() < 0 or matrix.max() > 1:
            raise ValueError("uniform calibration needs losses in [0, 1]")
    n, N = matrix.shape
    if grid is not None:
        if grid.dim != 1:
            raise ValueError("uniform calibration needs a 1-D grid")
        if grid.size != N:
            raise ValueError("grid and loss matrix disagree on N")
        order = np.argsort(grid.values[:, 0], kind="stable")[::-1]
    else:
        order = np.arange(N)[::-1]
    try:
        if eta is None:
            eta, _ = optimal_eta(alpha, delta, n, config)
        t_star = solve_t(eta, delta, n, config)
    except SampleSizeError:
        return UniformResult(None, (), eta, None)
    r_plus = upper_confidence_bound(matrix.mean(axis=0), t_star, eta)
    certified = []
    for j in order:
        if r_plus[j] <= alpha:
            certified.append(int(j))
        else:
            break
    selected = certified[-1] if certified else None
    return UniformResult(selected, tuple(certified), float(eta), float(t_star), np.atleast_1d(r_plus))
