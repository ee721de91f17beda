"""p-values for the nulls ``H_j: R(lambda_j) > alpha``."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, ndtr

from .losses import LossTensor, RiskSpec, empirical_risk

METHODS = ("hb", "clt")


def h1(a, b):
    """Bernoulli KL divergence ``a log(a/b) + (1-a) log((1-a)/(1-b))``.

    Uses ``0 log 0 = 0``. ``b`` must lie strictly inside (0, 1).
    """
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        left = np.where(a > 0.0, a * np.log(np.where(a > 0.0, a, 1.0) / b), 0.0)
        right = np.where(a < 1.0, (1.0 - a) * np.log(np.where(a < 1.0, 1.0 - a, 1.0) / (1.0 - b)), 0.0)
    out = left + right
    return np.maximum(out, 0.0)


@lru_cache(maxsize=64)
def _log_binom_cdf_table(n: int, p: float) -> np.ndarray:
    """``log P(Bin(n, p) <= k)`` for k = 0..n by log-space summation of exact terms."""
    k = np.arange(n + 1, dtype=float)
    log_pmf = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1) + k * math.log(p) + (n - k) * math.log1p(-p)
    table = np.logaddexp.accumulate(log_pmf)
    table = np.minimum(table, 0.0)
    table.setflags(write=False)
    return table


def binom_cdf(k, n: int, p: float):
    """Exact binomial CDF ``P(Bin(n, p) <= k)``; ``k`` may be an array."""
    k = np.asarray(k)
    table = _log_binom_cdf_table(int(n), float(p))
    out = np.where(k < 0, 0.0, np.exp(table[np.clip(k, 0, n).astype(int)]))
    return out if out.ndim else float(out)


def _successes_ceiling(r_hat: np.ndarray, n: int) -> np.ndarray:
    total = r_hat * n
    nearest = np.rint(total)
    # a mean of n losses is often an exact integer / n; rounding noise must not bump the ceiling
    snapped = np.where(np.abs(total - nearest) <= 1e-9 * max(n, 1), nearest, np.ceil(total))
    return snapped.astype(np.int64)


def hb_pvalue(r_hat, n: int, alpha: float):
    """Hoeffding-Bentkus p-value for a mean of ``n`` losses in [0, 1].

    ``min(exp(-n h1(min(r_hat, alpha), alpha)), e * P(Bin(n, alpha) <= ceil(n r_hat)))``
    clamped to [0, 1]. Vectorised over ``r_hat``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha {alpha} outside (0, 1)")
    if n < 1:
        raise ValueError("n must be >= 1")
    r = np.asarray(r_hat, dtype=float)
    if np.any(r < 0.0) or np.any(r > 1.0):
        raise ValueError("r_hat must lie in [0, 1]")
    hoeffding = np.exp(-n * h1(np.minimum(r, alpha), alpha))
    bentkus = math.e * binom_cdf(_successes_ceiling(r, n), n, alpha)
    p = np.clip(np.minimum(hoeffding, bentkus), 0.0, 1.0)
    return p if p.ndim else float(p)


def clt_pvalue(r_hat, sigma_hat, n: int, alpha: float):
    """Asymptotic p-value ``1 - Phi(sqrt(n) (alpha - r_hat) / sigma_hat)``.

    With ``sigma_hat == 0`` the degenerate limit is returned: 0 below alpha,
    1 above, 0.5 at equality.
    """
    if n < 2:
        raise ValueError("CLT p-values need n >= 2")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha {alpha} outside (0, 1)")
    r = np.asarray(r_hat, dtype=float)
    s = np.broadcast_to(np.asarray(sigma_hat, dtype=float), r.shape)
    if np.any(s < 0.0):
        raise ValueError("sigma_hat must be nonnegative")
    gap = alpha - r
    with np.errstate(divide="ignore", invalid="ignore"):
        z = math.sqrt(n) * gap / s
        p = np.where(s > 0.0, ndtr(-z), np.where(gap > 0, 0.0, np.where(gap < 0, 1.0, 0.5)))
    p = np.clip(p, 0.0, 1.0)
    return p if p.ndim else float(p)


def pvalues_from_tensor(loss: LossTensor, spec: RiskSpec, method: str = "hb") -> np.ndarray:
    """Per-cell p-values, shape ``(N, m)``."""
    if len(spec.alphas) != loss.m:
        raise ValueError(f"need {loss.m} risk levels, got {len(spec.alphas)}")
    if method not in METHODS:
        raise ValueError(f"unknown p-value method {method!r}")
    r_hat, sigma = empirical_risk(loss)
    out = np.empty_like(r_hat)
    for l, alpha in enumerate(spec.alphas):
        if method == "hb":
            if not loss.bounded[l]:
                raise ValueError(f"HB p-values need bounded losses; risk {l} is not declared bounded")
            out[:, l] = hb_pvalue(r_hat[:, l], loss.n, alpha)
        else:
            out[:, l] = clt_pvalue(r_hat[:, l], sigma[:, l], loss.n, alpha)
    return out


def combine_max(p: np.ndarray) -> np.ndarray:
    """Collapse per-risk p-values ``(N, m)`` into one p-value per grid point."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return p.copy()
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("p-values must lie in [0, 1]")
    return p.max(axis=1)
