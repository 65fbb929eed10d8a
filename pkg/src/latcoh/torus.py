"""Index arithmetic on the discrete torus Z_N^d.

Sites and wavenumbers are multi-indices with coordinates in [0, N-1] and
addition modulo N per coordinate. Enumeration is row-major (last coordinate
fastest) and fixed so that array layouts and golden files are reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError

# Site counts must stay indexable with signed 64-bit integers.
_MAX_SITES = 2**62


@dataclass(frozen=True)
class TorusShape:
    """Spatial dimension d and side length N of the index group Z_N^d."""

    d: int
    N: int

    def __post_init__(self):
        if not isinstance(self.d, int) or self.d < 1:
            raise ConfigError(f"dimension must be a positive integer, got {self.d!r}")
        if not isinstance(self.N, int) or self.N < 2:
            raise ConfigError(f"side length must be an integer >= 2, got {self.N!r}")
        if self.N**self.d > _MAX_SITES:
            raise ConfigError(f"site count {self.N}^{self.d} exceeds exact integer range")

    @property
    def site_count(self) -> int:
        return self.N**self.d

    def index(self, coords: Iterable[int]) -> "MultiIndex":
        """Build a MultiIndex, reducing every coordinate mod N."""
        reduced = tuple(int(c) % self.N for c in coords)
        if len(reduced) != self.d:
            raise ConfigError(f"expected {self.d} coordinates, got {len(reduced)}")
        return MultiIndex(reduced)

    def contains(self, idx: "MultiIndex") -> bool:
        return len(idx.coords) == self.d and all(0 <= c < self.N for c in idx.coords)


@dataclass(frozen=True)
class MultiIndex:
    """Canonical multi-index with every coordinate in [0, N-1]."""

    coords: tuple[int, ...]

    def __iter__(self):
        return iter(self.coords)

    def __len__(self):
        return len(self.coords)


def _check_member(shape: TorusShape, idx: MultiIndex, name: str) -> None:
    if not shape.contains(idx):
        raise ConfigError(f"{name} {idx.coords} is not a valid index for Z_{shape.N}^{shape.d}")


def wrap_add(shape: TorusShape, a: MultiIndex, b: MultiIndex) -> MultiIndex:
    """Componentwise addition modulo N."""
    _check_member(shape, a, "index")
    _check_member(shape, b, "index")
    return MultiIndex(tuple((x + y) % shape.N for x, y in zip(a.coords, b.coords)))


def enumerate_sites(shape: TorusShape) -> Iterator[MultiIndex]:
    """Yield all N^d indices exactly once, in row-major order."""
    for coords in np.ndindex(*(shape.N,) * shape.d):
        yield MultiIndex(tuple(int(c) for c in coords))


def coordinate_sum_parity(n: MultiIndex) -> str:
    """Parity ('even' or 'odd') of the plain integer coordinate sum."""
    return "odd" if sum(n.coords) % 2 else "even"


def site_coords(shape: TorusShape) -> np.ndarray:
    """All site (equivalently wavenumber) coordinates as an (M, d) int array.

    Rows follow the row-major enumeration order, so row index k is the flat
    position of the site in every state array used by this package.
    """
    grids = np.meshgrid(*([np.arange(shape.N)] * shape.d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def fold_coords(shape: TorusShape, coords: np.ndarray) -> np.ndarray:
    """Map coordinates to minimal-magnitude representatives in [-N/2, N/2].

    For even N the ambiguous coordinate N/2 keeps the positive sign.
    """
    coords = np.asarray(coords)
    return np.where(coords > shape.N // 2, coords - shape.N, coords)


def fold_offset(shape: TorusShape, offset: tuple[int, ...]) -> tuple[int, ...]:
    """Minimal-magnitude representative of a single offset tuple."""
    half = shape.N // 2
    return tuple(c - shape.N if c > half else c for c in (int(v) % shape.N for v in offset))


def flat_index(shape: TorusShape, idx: MultiIndex) -> int:
    """Row-major flat position of a multi-index."""
    pos = 0
    for c in idx.coords:
        pos = pos * shape.N + c
    return pos
