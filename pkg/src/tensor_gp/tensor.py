"""Voxelized design tensors and the canonical flattening order.

A design is a grid of ``v x h x w`` voxels carrying ``p`` material
properties. Every module flattens designs the same way: properties are
outermost, then voxels in row-major ``(i, j, k)`` order with ``k`` fastest,
so the flat position of property ``q`` at voxel ``(i, j, k)`` is
``q * v*h*w + (i*h + j)*w + k``. Indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import DimensionError, ParameterError

__all__ = [
    "GridShape",
    "DesignTensor",
    "canonical_index",
    "voxel_coords",
    "vectorize",
    "stack",
]


@dataclass(frozen=True)
class GridShape:
    """Grid dimensions: vertical ``v``, horizontal ``h``, depth ``w`` and
    property count ``p``."""

    v: int
    h: int
    w: int
    p: int = 1

    def __post_init__(self):
        for name in ("v", "h", "w", "p"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise ParameterError(f"GridShape.{name} must be an integer >= 1, got {val!r}")
            object.__setattr__(self, name, int(val))

    @property
    def n_voxels(self) -> int:
        return self.v * self.h * self.w

    @property
    def size(self) -> int:
        return self.n_voxels * self.p

    @property
    def spatial(self) -> tuple[int, int, int]:
        return (self.v, self.h, self.w)

    @classmethod
    def parse(cls, text: str) -> "GridShape":
        """Parse ``"VxHxWxP"`` (``P`` optional, defaults to 1)."""
        parts = text.lower().replace("×", "x").split("x")
        if len(parts) not in (3, 4):
            raise ParameterError(f"expected VxHxW or VxHxWxP, got {text!r}")
        try:
            dims = [int(s) for s in parts]
        except ValueError as exc:
            raise ParameterError(f"non-integer dimension in {text!r}") from exc
        return cls(*dims)

    def __str__(self) -> str:
        return f"{self.v}x{self.h}x{self.w}x{self.p}"

    def to_dict(self) -> dict:
        return {"v": self.v, "h": self.h, "w": self.w, "p": self.p}


def canonical_index(i: int, j: int, k: int, shape: GridShape) -> int:
    """Flat voxel index ``(i*h + j)*w + k``."""
    if not (0 <= i < shape.v and 0 <= j < shape.h and 0 <= k < shape.w):
        raise IndexError(f"voxel ({i}, {j}, {k}) outside grid {shape}")
    return (i * shape.h + j) * shape.w + k


def voxel_coords(alpha: int, shape: GridShape) -> tuple[int, int, int]:
    """Inverse of :func:`canonical_index`."""
    if not 0 <= alpha < shape.n_voxels:
        raise IndexError(f"flat index {alpha} outside grid {shape}")
    ij, k = divmod(alpha, shape.w)
    i, j = divmod(ij, shape.h)
    return i, j, k


def _voxel_grid_coords(shape: GridShape) -> np.ndarray:
    """``(n_voxels, 3)`` integer coordinates in canonical order."""
    return np.indices(shape.spatial).reshape(3, -1).T


class DesignTensor:
    """An immutable voxel grid of material properties.

    Parameters
    ----------
    shape : GridShape
    values : array_like
        Either ``v*h*w*p`` values in canonical order, or an array of shape
        ``(v, h, w, p)`` indexed as ``x[i, j, k, q]``.
    """

    __slots__ = ("shape", "_values")

    def __init__(self, shape: GridShape, values):
        arr = np.array(values, dtype=float)
        if arr.shape == (shape.v, shape.h, shape.w, shape.p):
            arr = np.moveaxis(arr, -1, 0).reshape(-1)
        elif arr.ndim != 1 or arr.size != shape.size:
            raise DimensionError(
                f"expected {shape.size} values or a {(shape.v, shape.h, shape.w, shape.p)} "
                f"array, got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ParameterError("design tensor values must be finite")
        arr.setflags(write=False)
        self.shape = shape
        self._values = arr

    @classmethod
    def from_array(cls, arr) -> "DesignTensor":
        """Build from a ``(v, h, w, p)`` array."""
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 3:
            arr = arr[..., None]
        if arr.ndim != 4:
            raise DimensionError(f"expected a 3- or 4-d array, got {arr.ndim}-d")
        return cls(GridShape(*arr.shape), arr)

    @property
    def values(self) -> np.ndarray:
        """Flat read-only values in canonical order."""
        return self._values

    def __getitem__(self, idx):
        i, j, k, q = idx
        if not 0 <= q < self.shape.p:
            raise IndexError(f"property {q} out of range")
        return self._values[q * self.shape.n_voxels + canonical_index(i, j, k, self.shape)]

    def to_array(self) -> np.ndarray:
        """Copy as a ``(v, h, w, p)`` array."""
        s = self.shape
        return np.moveaxis(self._values.reshape(s.p, s.v, s.h, s.w), 0, -1).copy()

    def __eq__(self, other):
        return (
            isinstance(other, DesignTensor)
            and self.shape == other.shape
            and np.array_equal(self._values, other._values)
        )

    def __hash__(self):
        return hash((self.shape, self._values.tobytes()))

    def __repr__(self):
        return f"DesignTensor(shape={self.shape})"


def vectorize(x: DesignTensor, prop: int) -> np.ndarray:
    """Flattened voxel values of one material property."""
    if not 0 <= prop < x.shape.p:
        raise IndexError(f"property {prop} out of range for p={x.shape.p}")
    n = x.shape.n_voxels
    return x.values[prop * n:(prop + 1) * n].copy()


TensorBatch = Union[np.ndarray, Sequence[DesignTensor]]


def stack(xs: TensorBatch | Iterable[DesignTensor], shape: GridShape | None = None) -> np.ndarray:
    """Stack designs into an ``(n, p, v*h*w)`` float array.

    Already-stacked arrays (``(n, p, v*h*w)`` or ``(n, v*h*w*p)`` flat
    canonical rows) pass through after a shape check.
    """
    if isinstance(xs, np.ndarray):
        arr = np.asarray(xs, dtype=float)
        if shape is None:
            if arr.ndim != 3:
                raise DimensionError("a grid shape is needed to interpret a 2-d input array")
            return arr
        if arr.ndim == 2 and arr.shape[1] == shape.size:
            return arr.reshape(len(arr), shape.p, shape.n_voxels)
        if arr.ndim == 3 and arr.shape[1:] == (shape.p, shape.n_voxels):
            return arr
        raise DimensionError(f"input array of shape {arr.shape} does not match grid {shape}")
    xs = list(xs)
    if not xs:
        raise DimensionError("empty input list")
    s0 = shape or xs[0].shape
    for x in xs:
        if x.shape != s0:
            raise DimensionError(f"mixed grid shapes: {x.shape} vs {s0}")
    return np.stack([x.values for x in xs]).reshape(len(xs), s0.p, s0.n_voxels)
