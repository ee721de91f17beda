"""Choosing the deployed parameter from a certified set.

Every element of the certified set carries the same guarantee, so any rule,
including data-driven ones, may be used to pick among them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .losses import ParameterGrid


class Unsatisfiable(ValueError):
    """A selection stage removed every remaining candidate."""


@dataclass(frozen=True)
class Stage:
    """One restriction step.

    op: ``min``/``max`` keep candidates extremal on ``axis``; ``filter`` keeps
    those with a linear predicate ``coef . lambda + const  cmp  0`` satisfied
    by *some* (``exists``) or the candidate itself; ``objective`` keeps the
    candidates minimising column ``column`` of a supplied objective matrix.
    """

    op: str
    axis: int | None = None
    coef: tuple[float, ...] | None = None
    const: float = 0.0
    cmp: str = "<"
    column: int | None = None

    def __post_init__(self):
        if self.op not in ("min", "max", "filter", "objective"):
            raise ValueError(f"unknown stage op {self.op!r}")
        if self.op in ("min", "max") and self.axis is None:
            raise ValueError(f"{self.op} stage needs an axis")
        if self.op == "filter":
            if self.coef is None:
                raise ValueError("filter stage needs coefficients")
            if self.cmp not in ("<", "<=", ">", ">="):
                raise ValueError(f"unknown comparison {self.cmp!r}")
            object.__setattr__(self, "coef", tuple(float(c) for c in self.coef))
        if self.op == "objective" and self.column is None:
            raise ValueError("objective stage needs a column")

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_json(cls, obj: dict) -> "Stage":
        coef = obj.get("coef")
        return cls(
            obj["op"],
            obj.get("axis"),
            tuple(coef) if coef is not None else None,
            float(obj.get("const", 0.0)),
            obj.get("cmp", "<"),
            obj.get("column"),
        )


_CMP = {
    "<": np.less,
    "<=": np.less_equal,
    ">": np.greater,
    ">=": np.greater_equal,
}


def _candidates(indices: Iterable[int], grid: ParameterGrid) -> np.ndarray:
    idx = np.unique(np.asarray(list(indices), dtype=int))
    if idx.size == 0:
        return idx
    if idx.min() < 0 or idx.max() >= grid.size:
        raise ValueError("certified indices out of grid range")
    return idx


def select_sup(indices: Iterable[int], grid: ParameterGrid, axis: int = 0) -> int | None:
    """Flat index of the certified point with the largest ``axis`` coordinate.

    Returns ``None`` (abstain) when nothing was certified.
    """
    idx = _candidates(indices, grid)
    if idx.size == 0:
        return None
    if not 0 <= axis < grid.dim:
        raise ValueError(f"axis {axis} out of range for a {grid.dim}-D grid")
    coord = grid.values[idx, axis]
    return int(idx[np.flatnonzero(coord == coord.max())[0]])


def apply_stage(stage: Stage, idx: np.ndarray, grid: ParameterGrid, objective: np.ndarray | None = None) -> np.ndarray:
    vals = grid.values[idx]
    if stage.op in ("min", "max"):
        if not 0 <= stage.axis < grid.dim:
            raise ValueError(f"axis {stage.axis} out of range for a {grid.dim}-D grid")
        col = vals[:, stage.axis]
        target = col.min() if stage.op == "min" else col.max()
        return idx[col == target]
    if stage.op == "filter":
        if len(stage.coef) != grid.dim:
            raise ValueError("filter coefficients must match the grid dimension")
        keep = _CMP[stage.cmp](vals @ np.asarray(stage.coef) + stage.const, 0.0)
        return idx[keep]
    if objective is None:
        raise ValueError("objective stage needs an objective matrix")
    objective = np.asarray(objective, dtype=float)
    if objective.ndim == 1:
        objective = objective[:, None]
    col = objective[idx, stage.column]
    return idx[col == col.min()]


def select_lexicographic(
    indices: Iterable[int],
    grid: ParameterGrid,
    stages: Sequence[Stage],
    objective: np.ndarray | None = None,
) -> int | None:
    """Restrict the certified set stage by stage; the lowest flat index breaks final ties.

    Returns ``None`` when nothing was certified; raises :class:`Unsatisfiable`
    when a stage empties a non-empty candidate set.
    """
    idx = _candidates(indices, grid)
    if idx.size == 0:
        return None
    for k, stage in enumerate(stages):
        idx = apply_stage(stage, idx, grid, objective)
        if idx.size == 0:
            raise Unsatisfiable(f"selection constraints unsatisfiable within the certified set (stage {k})")
    return int(idx.min())


def detection_preset() -> list[Stage]:
    """Three-parameter detection rule on ``(lambda1, lambda2, lambda3)``.

    Keep points with ``1 - lambda1 < lambda3``, take the smallest ``lambda3``,
    then the largest ``lambda1``, then minimise the second objective column
    and prefer the largest ``lambda2``.
    """
    return [
        Stage("filter", coef=(-1.0, 0.0, -1.0), const=1.0, cmp="<"),
        Stage("min", axis=2),
        Stage("max", axis=0),
        Stage("objective", column=1),
        Stage("max", axis=1),
    ]


def preset(name: str, grid: ParameterGrid) -> list[Stage]:
    if name == "sup":
        return [Stage("max", axis=0)]
    if name == "detection":
        if grid.dim != 3:
            raise ValueError("the detection preset needs a 3-D grid")
        return detection_preset()
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        obj = json.loads(path.read_text())
        return [Stage.from_json(s) for s in obj.get("stages", obj if isinstance(obj, list) else [])]
    raise ValueError(f"unknown selection preset {name!r}")
