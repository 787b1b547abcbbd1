"""Multi-index algebra.

Multi-indices are plain tuples of non-negative ints wrapped in a small
value class so that ``|alpha|`` is cached and the text form ``(a1,...,ad)``
round-trips.  Ordering everywhere is lexicographic *descending*, so for
``d=2, m=2`` the exactly-m set reads ``(2,0), (1,1), (0,2)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

EXACT = "exactly-m"
UP_TO = "up-to-m"


@dataclass(frozen=True, order=False)
class MultiIndex:
    orders: tuple[int, ...]
    order: int = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        orders = tuple(int(a) for a in self.orders)
        if any(a < 0 for a in orders):
            raise ValueError(f"negative component in multi-index {orders}")
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "order", sum(orders))

    @property
    def d(self) -> int:
        return len(self.orders)

    def __len__(self):
        return len(self.orders)

    def __iter__(self):
        return iter(self.orders)

    def __getitem__(self, i):
        return self.orders[i]

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        if len(other) != len(self):
            raise ValueError("dimension mismatch")
        return MultiIndex(tuple(a + b for a, b in zip(self.orders, other.orders)))

    def sort_key(self):
        # lexicographic descending
        return tuple(-a for a in self.orders)

    def __lt__(self, other):
        return self.sort_key() < other.sort_key()

    def __str__(self):
        return "(" + ",".join(str(a) for a in self.orders) + ")"

    @classmethod
    def parse(cls, value) -> "MultiIndex":
        """Accept ``"(1,0)"``, ``"1,0"``, a list/tuple, or a MultiIndex."""
        if isinstance(value, MultiIndex):
            return value
        if isinstance(value, str):
            body = value.strip()
            if not re.fullmatch(r"\(?\s*\d+(\s*,\s*\d+)*\s*,?\s*\)?", body):
                raise ValueError(f"bad multi-index text {value!r}")
            parts = [p for p in body.strip("()").split(",") if p.strip()]
            return cls(tuple(int(p) for p in parts))
        return cls(tuple(int(v) for v in value))


def mi(*orders: int) -> MultiIndex:
    return MultiIndex(tuple(orders))


@dataclass(frozen=True)
class IndexSet:
    d: int
    m: int
    mode: str
    members: tuple[MultiIndex, ...]

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def count(self) -> int:
        return len(self.members)

    def position(self, alpha: MultiIndex) -> int:
        return self.members.index(alpha)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def enumerate_indices(d: int, m: int, mode: str = EXACT) -> IndexSet:
    """All multi-indices of dimension ``d`` with ``|alpha| == m`` or ``<= m``.

    The result is sorted lexicographically descending; for ``up-to-m`` the
    whole set is sorted in that order (not grouped by order).
    """
    if d < 1 or m < 0:
        raise ValueError(f"need d >= 1 and m >= 0, got d={d}, m={m}")
    if mode == EXACT:
        orders = [m]
    elif mode == UP_TO:
        orders = range(m + 1)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    members = sorted(MultiIndex(c) for j in orders for c in _compositions(j, d))
    return IndexSet(d, m, mode, tuple(members))


def monomial(xi: Sequence[float], alpha: MultiIndex) -> float:
    """``xi**alpha`` with ``0**0 == 1``."""
    out = 1.0
    for x, a in zip(xi, alpha):
        if a:
            out *= float(x) ** a
    return out


def monomial_array(points: np.ndarray, alpha: MultiIndex) -> np.ndarray:
    """Vectorized monomial: ``points`` has shape (..., d)."""
    points = np.asarray(points)
    out = np.ones(points.shape[:-1], dtype=points.dtype)
    for j, a in enumerate(alpha):
        if a:
            out = out * points[..., j] ** a
    return out


def lambda_m(n: Sequence[float], m: int) -> float:
    """Sum over ``|gamma| = m`` of ``(n**gamma)**2``."""
    n = tuple(n)
    return float(sum(monomial(n, g) ** 2 for g in enumerate_indices(len(n), m)))


def lambda_m_array(points: np.ndarray, m: int) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    d = points.shape[-1]
    out = np.zeros(points.shape[:-1])
    for g in enumerate_indices(d, m):
        out += monomial_array(points, g) ** 2
    return out


def kronecker(alpha: MultiIndex, beta: MultiIndex) -> int:
    return int(tuple(alpha) == tuple(beta))


def format_index(alpha: Iterable[int]) -> str:
    return "(" + ",".join(str(int(a)) for a in alpha) + ")"
