"""Loss matrices, parameter grids and risk reformulations.

Every procedure in the package consumes a :class:`LossTensor` of shape
``(n, N, m)``: ``n`` calibration examples, ``N`` grid points and ``m`` risks.
Indices are 0-based throughout; flat grid order is row-major over ``shape``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class LossFormatError(ValueError):
    """Raised when a loss or grid file does not match the documented layout."""


@dataclass(frozen=True)
class ParameterGrid:
    """A finite set of parameter vectors with an optional rectangular shape."""

    values: np.ndarray
    shape: tuple[int, ...] | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("grid needs at least one parameter vector of dimension >= 1")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.shape is not None:
            shape = tuple(int(s) for s in self.shape)
            if math.prod(shape) != values.shape[0]:
                raise ValueError(f"shape {shape} does not match {values.shape[0]} grid points")
            if len(shape) != values.shape[1]:
                raise ValueError("shape must have one entry per parameter dimension")
            object.__setattr__(self, "shape", shape)
            _check_axes_monotone(values, shape)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def linspace(cls, start: float, stop: float, num: int) -> "ParameterGrid":
        return cls(np.linspace(start, stop, num)[:, None], (num,))

    @classmethod
    def product(cls, *axes: Sequence[float]) -> "ParameterGrid":
        """Cartesian product of 1-D axes in row-major order."""
        mesh = np.meshgrid(*[np.asarray(a, dtype=float) for a in axes], indexing="ij")
        values = np.stack([m.ravel() for m in mesh], axis=1)
        return cls(values, tuple(len(a) for a in axes))

    def axis_values(self, axis: int) -> np.ndarray:
        """Distinct coordinates along ``axis`` (requires shape)."""
        if self.shape is None:
            raise ValueError("grid has no shape metadata")
        idx = [0] * len(self.shape)
        idx[axis] = slice(None)
        return self.values[:, axis].reshape(self.shape)[tuple(idx)]

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "shape": list(self.shape) if self.shape is not None else None,
            "values": self.values.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ParameterGrid":
        try:
            dim = int(obj["dim"])
            values = np.asarray(obj["values"], dtype=float)
            shape = obj.get("shape")
        except (KeyError, TypeError, ValueError) as exc:
            raise LossFormatError(f"malformed grid JSON: {exc}") from exc
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[1] != dim:
            raise LossFormatError(f"grid values do not have dimension {dim}")
        try:
            return cls(values, tuple(shape) if shape is not None else None)
        except ValueError as exc:
            raise LossFormatError(str(exc)) from exc


def _check_axes_monotone(values: np.ndarray, shape: tuple[int, ...]) -> None:
    for axis in range(len(shape)):
        coords = values[:, axis].reshape(shape)
        diffs = np.diff(coords, axis=axis)
        if diffs.size and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValueError(f"grid values are not strictly monotone along axis {axis}")
        # other axes must not vary along this coordinate
        for other in range(len(shape)):
            if other != axis and shape[other] > 1:
                if np.any(np.diff(coords, axis=other) != 0):
                    raise ValueError(f"coordinate {axis} varies along axis {other}; not row-major")


@dataclass(frozen=True)
class LossTensor:
    """Per-example, per-grid-point, per-risk losses, stored as ``(n, N, m)``."""

    data: np.ndarray
    bounded: tuple[bool, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError("loss tensor must be 2-D (n, N) or 3-D (n, N, m)")
        n, N, m = data.shape
        if n < 1 or N < 1 or m < 1:
            raise ValueError("loss tensor needs n >= 1, N >= 1, m >= 1")
        if not np.all(np.isfinite(data)):
            raise ValueError("loss tensor contains non-finite entries")
        bounded = self.bounded
        if bounded is None:
            bounded = (False,) * m
        elif isinstance(bounded, (bool, np.bool_)):
            bounded = (bool(bounded),) * m
        else:
            bounded = tuple(bool(b) for b in bounded)
        if len(bounded) != m:
            raise ValueError(f"need {m} bounded flags, got {len(bounded)}")
        for l, flag in enumerate(bounded):
            if flag:
                s = data[:, :, l]
                if s.min() < 0.0 or s.max() > 1.0:
                    raise LossFormatError(f"entry out of unit interval in risk {l}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "bounded", bounded)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[1]

    @property
    def m(self) -> int:
        return self.data.shape[2]

    def risk(self, l: int) -> np.ndarray:
        """The ``(n, N)`` loss matrix of risk ``l``."""
        return self.data[:, :, l]

    def subset(self, rows) -> "LossTensor":
        return LossTensor(self.data[rows], self.bounded)

    def __eq__(self, other):
        if not isinstance(other, LossTensor):
            return NotImplemented
        return self.bounded == other.bounded and np.array_equal(self.data, other.data)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class RiskSpec:
    alphas: tuple[float, ...]
    delta: float

    def __post_init__(self):
        alphas = tuple(float(a) for a in np.atleast_1d(self.alphas))
        if not alphas:
            raise ValueError("need at least one risk level")
        for a in alphas:
            if not 0.0 < a < 1.0:
                raise ValueError(f"risk level {a} outside (0, 1)")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta {self.delta} outside (0, 1)")
        object.__setattr__(self, "alphas", alphas)


# ---------------------------------------------------------------------------
# file IO


def _parse_header(line: str) -> dict[str, int]:
    if not line.startswith("#"):
        raise LossFormatError("malformed header: first line must start with '#'")
    fields = {}
    for token in line[1:].split():
        key, sep, value = token.partition("=")
        if not sep:
            raise LossFormatError(f"malformed header token {token!r}")
        try:
            fields[key] = int(value)
        except ValueError as exc:
            raise LossFormatError(f"malformed header value {token!r}") from exc
    missing = {"n", "N", "m", "bounded"} - fields.keys()
    if missing:
        raise LossFormatError(f"malformed header: missing {sorted(missing)}")
    if fields["bounded"] not in (0, 1):
        raise LossFormatError("malformed header: bounded must be 0 or 1")
    return fields


def save_loss(tensor: LossTensor, path: str | Path) -> None:
    """Write the CSV layout: a header line then ``n*m`` rows, risk-major.

    Floats are written with ``repr`` so every value round-trips bit-exactly.
    """
    path = Path(path)
    bounded = int(all(tensor.bounded))
    with path.open("w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# n={tensor.n} N={tensor.N} m={tensor.m} bounded={bounded}\n")
        for l in range(tensor.m):
            for row in tensor.risk(l).tolist():
                fh.write(",".join(map(repr, row)))
                fh.write("\n")


def load_loss(path: str | Path, grid: ParameterGrid | None = None) -> LossTensor:
    """Read a loss file (CSV layout, or JSON with ``bounded`` and ``losses``)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix.lower() == ".json":
        tensor = _load_loss_json(path)
    else:
        tensor = _load_loss_csv(path)
    if grid is not None and grid.size != tensor.N:
        raise LossFormatError(f"dimension mismatch: loss has N={tensor.N}, grid has {grid.size} points")
    return tensor


def _load_loss_csv(path: Path) -> LossTensor:
    with path.open("r", encoding="ascii") as fh:
        header = _parse_header(fh.readline().strip())
        n, N, m = header["n"], header["N"], header["m"]
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != N:
                raise LossFormatError(f"line {lineno}: expected {N} values, got {len(cells)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise LossFormatError(f"line {lineno}: non-numeric cell ({exc})") from exc
    if len(rows) != n * m:
        raise LossFormatError(f"expected {n * m} rows, got {len(rows)}")
    flat = np.asarray(rows, dtype=np.float64).reshape(m, n, N)
    return LossTensor(np.moveaxis(flat, 0, -1), (bool(header["bounded"]),) * m)


def _load_loss_json(path: Path) -> LossTensor:
    try:
        obj = json.loads(path.read_text())
        arr = np.asarray(obj["losses"], dtype=np.float64)
        bounded = obj.get("bounded", False)
    except (KeyError, TypeError, ValueError) as exc:
        raise LossFormatError(f"malformed loss JSON: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise LossFormatError("losses must be nested as [risk][example][grid point]")
    return LossTensor(np.moveaxis(arr, 0, -1), bounded)


def load_grid(path: str | Path) -> ParameterGrid:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise LossFormatError(f"malformed grid JSON: {exc}") from exc
    return ParameterGrid.from_json(obj)


def save_grid(grid: ParameterGrid, path: str | Path) -> None:
    Path(path).write_text(json.dumps(grid.to_json()) + "\n")


# ---------------------------------------------------------------------------
# transforms and summaries


def pfdr_transform(numerator: np.ndarray, nonempty: np.ndarray, alpha: float) -> np.ndarray:
    """Turn a conditional (positive) FDR into an unconditional bounded loss.

    With ``v`` the false-discovery proportion on non-empty predictions and
    ``r`` the non-empty indicator, returns ``v - alpha * r + alpha``. Its mean
    is at most ``alpha`` exactly when ``mean(v) / mean(r) <= alpha``.
    """
    v = np.asarray(numerator, dtype=float)
    r = np.asarray(nonempty, dtype=float)
    if v.shape != r.shape:
        raise ValueError(f"shape mismatch {v.shape} vs {r.shape}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not np.all((r == 0.0) | (r == 1.0)):
        raise ValueError("indicator entries must be 0 or 1")
    if np.any(v < 0.0) or np.any(v > r):
        raise ValueError("numerator must satisfy 0 <= v <= r elementwise")
    out = v - alpha * r + alpha
    # v <= r guarantees out in [alpha*(1-r), 1]; clip removes -0.0/rounding noise
    return np.clip(out, 0.0, 1.0)


def empirical_risk(loss: LossTensor) -> tuple[np.ndarray, np.ndarray]:
    """Column means and sample standard deviations, each of shape ``(N, m)``.

    The standard deviation uses divisor ``n - 1`` and is defined as 0 for n = 1.
    """
    r_hat = loss.data.mean(axis=0)
    if loss.n == 1:
        sigma = np.zeros_like(r_hat)
    else:
        sigma = loss.data.std(axis=0, ddof=1)
    return r_hat, sigma
