"""Grid partition of the environment box used by the shrinking step."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import InvalidParam, SamplerExhausted
from .geometry import HyperRect

__all__ = ["EnvGrid"]


@dataclass
class EnvGrid:
    """Regular grid over ``bounds`` with per-cell status and statistics.

    Cells are addressed by flat index in C order over ``resolution``. The
    cell holding ``nominal`` can never be removed. Removal is one way: a
    grid only ever loses cells.
    """

    bounds: HyperRect
    resolution: tuple
    nominal: tuple
    active: np.ndarray = field(default=None)
    conformance: np.ndarray = field(default=None)
    samples_seen: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        self.resolution = tuple(int(r) for r in np.broadcast_to(self.resolution, (self.bounds.ndim,)))
        if any(r < 1 for r in self.resolution):
            raise InvalidParam("grid resolution must be at least 1 per dim")
        self.nominal = tuple(float(v) for v in self.nominal)
        if len(self.nominal) != self.bounds.ndim or not self.bounds.contains(np.asarray(self.nominal)):
            raise InvalidParam("nominal environment must lie inside the grid bounds")
        n = self.n_cells
        if self.active is None:
            self.active = np.ones(n, dtype=bool)
        if self.conformance is None:
            self.conformance = np.full(n, np.nan)
        if self.samples_seen is None:
            self.samples_seen = np.zeros(n, dtype=np.int64)
        if not self.active[self.nominal_cell]:
            raise InvalidParam("the nominal cell must be active")

    @classmethod
    def uniform(cls, bounds: HyperRect, resolution, nominal: Sequence[float]) -> "EnvGrid":
        return cls(bounds, resolution, tuple(nominal))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def cell_width(self) -> np.ndarray:
        return self.bounds.width / np.asarray(self.resolution)

    def cell_multi_index(self, idx: int) -> tuple:
        return np.unravel_index(idx, self.resolution)

    def cell_index(self, e: Sequence[float]) -> int:
        """Flat index of the cell holding ``e``; shared faces go to the upper cell."""
        frac = (np.asarray(e, dtype=float) - self.bounds.lo) / np.where(self.bounds.width > 0, self.bounds.width, 1.0)
        k = np.clip(np.floor(frac * np.asarray(self.resolution)).astype(int), 0, np.asarray(self.resolution) - 1)
        return int(np.ravel_multi_index(tuple(k), self.resolution))

    @property
    def nominal_cell(self) -> int:
        return self.cell_index(self.nominal)

    def cell_box(self, idx: int) -> HyperRect:
        k = np.asarray(self.cell_multi_index(idx))
        w = self.cell_width
        lo = self.bounds.lo + k * w
        hi = np.where(k == np.asarray(self.resolution) - 1, self.bounds.hi, lo + w)
        return HyperRect(lo, hi)

    def cell_center(self, idx: int) -> np.ndarray:
        return self.cell_box(idx).center

    def cell_centers(self) -> np.ndarray:
        k = np.stack(np.unravel_index(np.arange(self.n_cells), self.resolution), axis=1)
        return self.bounds.lo + (k + 0.5) * self.cell_width

    def active_cells(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def iter_cells(self) -> Iterator[tuple]:
        for idx in range(self.n_cells):
            yield idx, self.cell_box(idx), bool(self.active[idx])

    def copy(self) -> "EnvGrid":
        return EnvGrid(self.bounds, self.resolution, self.nominal, self.active.copy(),
                       self.conformance.copy(), self.samples_seen.copy())

    def remove(self, cells: Sequence[int]) -> "EnvGrid":
        """New grid with ``cells`` marked removed (the nominal cell is kept)."""
        g = self.copy()
        cells = [c for c in cells if c != self.nominal_cell]
        g.active[list(cells)] = False
        return g

    def contains(self, e: Sequence[float]) -> bool:
        e = np.asarray(e, dtype=float)
        if not self.bounds.contains(e):
            return False
        return bool(self.active[self.cell_index(e)])

    def sample(self, rng: np.random.Generator, n: int, cells: Optional[np.ndarray] = None) -> np.ndarray:
        """``n`` points uniform over the union of the given (default: active) cells.

        All cells have equal volume, so a uniform cell pick followed by a
        uniform point inside it is uniform over the union.
        """
        cells = self.active_cells() if cells is None else np.asarray(cells)
        if cells.size == 0:
            raise SamplerExhausted("environment grid has no active cells")
        pick = cells[rng.integers(0, cells.size, size=n)]
        k = np.stack(np.unravel_index(pick, self.resolution), axis=1)
        u = rng.random((n, self.bounds.ndim))
        return self.bounds.lo + (k + u) * self.cell_width

    def normalized_distance(self, idx: np.ndarray) -> np.ndarray:
        """Euclidean distance from cell centers to ``nominal`` in unit-box coordinates."""
        w = np.where(self.bounds.width > 0, self.bounds.width, 1.0)
        c = self.cell_centers()[np.asarray(idx)]
        return np.sqrt(np.sum(((c - np.asarray(self.nominal)) / w) ** 2, axis=-1))

    def bounding_box(self) -> HyperRect:
        boxes = [self.cell_box(i) for i in self.active_cells()]
        return functools.reduce(HyperRect.hull, boxes)

    def table(self) -> list:
        """Rows ``(index, lo..., hi..., status, conformance, samples)``."""
        rows = []
        for idx, box, act in self.iter_cells():
            rows.append((idx, *box.lo.tolist(), *box.hi.tolist(), "active" if act else "removed",
                         float(self.conformance[idx]), int(self.samples_seen[idx])))
        return rows
