"""Periodic phase-space grids and their Fourier-dual momentum grids.

Every axis is periodic with period ``extent`` and ``levels`` equally spaced
nodes starting at ``x_min``.  Flat indices are row-major with axis 0 varying
slowest, which is also the serialization order used by the CLI.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GridError


@dataclass(frozen=True)
class AxisSpec:
    label: str
    levels: int
    extent: float
    x_min: float = 0.0

    def __post_init__(self):
        if int(self.levels) != self.levels or self.levels < 4:
            raise GridError(f"axis {self.label!r}: levels must be >= 4 (got {self.levels})")
        if not (self.extent > 0 and math.isfinite(self.extent)):
            raise GridError(f"axis {self.label!r}: extent must be positive (got {self.extent})")

    @property
    def dx(self) -> float:
        return self.extent / self.levels


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Tensor-product periodic grid.

    Attributes
    ----------
    axes : tuple of AxisSpec
    hbar : float
        Reduced Planck constant; the momentum spacing is ``2*pi*hbar/extent``.
    """

    axes: tuple[AxisSpec, ...]
    hbar: float = 1.0
    _points: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.axes) == 0:
            raise GridError("grid needs at least one axis")
        if not (self.hbar > 0 and math.isfinite(self.hbar)):
            raise GridError(f"hbar must be positive (got {self.hbar})")
        pts = tuple(a.x_min + a.dx * np.arange(a.levels) for a in self.axes)
        for p in pts:
            p.setflags(write=False)
        object.__setattr__(self, "_points", pts)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.levels for a in self.axes)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def h(self) -> float:
        return 2.0 * math.pi * self.hbar

    @property
    def dx(self) -> np.ndarray:
        return np.array([a.dx for a in self.axes])

    @property
    def dP(self) -> np.ndarray:
        return np.array([self.h / a.extent for a in self.axes])

    @property
    def extents(self) -> np.ndarray:
        return np.array([a.extent for a in self.axes])

    @property
    def x_min(self) -> np.ndarray:
        return np.array([a.x_min for a in self.axes])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(a.label for a in self.axes)

    @property
    def n_qubits(self) -> int | None:
        """log2(N) when every axis has a power-of-two level count, else None."""
        if all(L & (L - 1) == 0 for L in self.shape):
            return sum(L.bit_length() - 1 for L in self.shape)
        return None

    def positions(self, axis: int) -> np.ndarray:
        self._check_axis(axis)
        return self._points[axis]

    def mesh(self) -> np.ndarray:
        """Coordinates of every node, shape ``(ndim, *shape)``."""
        return np.stack(np.meshgrid(*self._points, indexing="ij"))

    def flat_points(self) -> np.ndarray:
        """Coordinates of every node in flat-index order, shape ``(ndim, N)``."""
        return self.mesh().reshape(self.ndim, -1)

    def coordinates_of(self, flat_index: int) -> np.ndarray:
        if not 0 <= flat_index < self.size:
            raise GridError(f"flat index {flat_index} out of range [0, {self.size})")
        multi = np.unravel_index(flat_index, self.shape)
        return np.array([self._points[j][k] for j, k in enumerate(multi)])

    def index_of(self, point: Sequence[float]) -> int:
        """Flat index of the node nearest to ``point`` (periodic)."""
        point = np.asarray(point, dtype=float)
        if point.shape != (self.ndim,):
            raise GridError(f"point must have {self.ndim} coordinates")
        k = np.rint((point - self.x_min) / self.dx).astype(int) % np.array(self.shape)
        return int(np.ravel_multi_index(tuple(k), self.shape))

    def momentum_grid(self, axis: int) -> np.ndarray:
        """Conjugate momenta for ``axis`` in standard DFT ordering.

        The unpaired Nyquist bin sits at ``-L/2 * dP``.
        """
        self._check_axis(axis)
        L = self.axes[axis].levels
        return self.dP[axis] * np.fft.fftfreq(L, d=1.0 / L)

    def wrap(self, x: np.ndarray, axis: int) -> np.ndarray:
        """Map coordinates back into ``[x_min, x_min + extent)``."""
        a = self.axes[axis]
        return a.x_min + np.mod(x - a.x_min, a.extent)

    def leakage(self, density: np.ndarray, margin: int = 2) -> float:
        """Probability mass within ``margin`` nodes of any box face.

        Flows are periodic; mass near the faces signals that the physical
        support has wrapped around and results are no longer meaningful.
        """
        f = np.asarray(density, dtype=float).reshape(self.shape)
        mask = np.zeros(self.shape, dtype=bool)
        for j, L in enumerate(self.shape):
            idx = [slice(None)] * self.ndim
            idx[j] = np.r_[0:margin, L - margin:L]
            mask[tuple(idx)] = True
        total = f.sum()
        return float(f[mask].sum() / total) if total > 0 else 0.0

    def _check_axis(self, axis: int):
        if not 0 <= axis < self.ndim:
            raise GridError(f"axis {axis} out of range for {self.ndim}-d grid")


def build_grid(axes: Sequence[AxisSpec], hbar: float = 1.0) -> PhaseSpaceGrid:
    return PhaseSpaceGrid(tuple(axes), float(hbar))
