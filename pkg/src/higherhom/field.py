"""Real 1-periodic trigonometric polynomials.

A :class:`PeriodicField` stores the complex Fourier coefficients ``c_n`` for
``|n_j| <= N`` in a centered array of shape ``(2N+1,)*d`` (index ``n + N``).
The same class serves the reference cell ``Y = [-1/2, 1/2]^d`` and the unit
torus; sample grids are the points ``j/R`` of ``[0, 1)^d``, which is a full
period of either.

All operations are exact on the truncated representation: derivatives,
Steklov averaging and norms are Fourier multipliers, and products are formed
on a grid large enough that the convolution of the two spectra is not aliased.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.fft as sfft

from .multiindex import MultiIndex, enumerate_indices, lambda_m_array

TWO_PI = 2.0 * math.pi


class ShapeError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


def wavenumbers(d: int, cutoff: int) -> np.ndarray:
    """Integer wavenumbers on the centered layout, shape ``(2N+1,)*d + (d,)``."""
    axis = np.arange(-cutoff, cutoff + 1)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack(mesh, axis=-1)


def derivative_multiplier(d: int, cutoff: int, alpha: MultiIndex) -> np.ndarray:
    """``(2 pi i n)^alpha`` on the centered layout."""
    axis = np.arange(-cutoff, cutoff + 1)
    out = np.ones((2 * cutoff + 1,) * d, dtype=complex)
    for j, a in enumerate(alpha):
        if a:
            shape = [1] * d
            shape[j] = -1
            out = out * ((1j * TWO_PI * axis) ** a).reshape(shape)
    return out


def sinc(t):
    """``sin(t)/t`` with a series branch near zero."""
    t = np.asarray(t, dtype=float)
    small = np.abs(t) < 1e-4
    safe = np.where(small, 1.0, t)
    t2 = t * t
    return np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(safe) / safe)


def coeffs_to_grid(coeffs: np.ndarray, samples: int) -> np.ndarray:
    """Synthesize the real samples on a uniform grid with ``samples`` points per axis."""
    d = coeffs.ndim
    cutoff = (coeffs.shape[0] - 1) // 2
    if samples < 2 * cutoff + 1:
        raise ShapeError(f"grid of {samples} points cannot hold cutoff {cutoff}")
    full = np.zeros((samples,) * d, dtype=complex)
    start = samples // 2 - cutoff
    full[(slice(start, start + 2 * cutoff + 1),) * d] = coeffs
    return sfft.ifftn(sfft.ifftshift(full), norm="forward").real


def grid_to_coeffs(values: np.ndarray, cutoff: int) -> np.ndarray:
    """Fourier coefficients ``|n_j| <= cutoff`` of uniform real samples."""
    values = np.asarray(values, dtype=float)
    samples = values.shape[0]
    if any(s != samples for s in values.shape):
        raise ShapeError(f"grid must be uniform, got shape {values.shape}")
    if 2 * cutoff + 1 > samples:
        raise ShapeError(f"grid of {samples} points cannot resolve cutoff {cutoff}")
    full = sfft.fftshift(sfft.fftn(values, norm="forward"))
    start = samples // 2 - cutoff
    return full[(slice(start, start + 2 * cutoff + 1),) * values.ndim]


def resize_coeffs(coeffs: np.ndarray, cutoff: int) -> np.ndarray:
    """Zero-pad or truncate a centered coefficient array to a new cutoff."""
    d = coeffs.ndim
    old = (coeffs.shape[0] - 1) // 2
    if cutoff == old:
        return coeffs.copy()
    if cutoff < old:
        s = slice(old - cutoff, old + cutoff + 1)
        return coeffs[(s,) * d].copy()
    out = np.zeros((2 * cutoff + 1,) * d, dtype=complex)
    s = slice(cutoff - old, cutoff + old + 1)
    out[(s,) * d] = coeffs
    return out


def hermitian_part(coeffs: np.ndarray) -> np.ndarray:
    flipped = np.conj(coeffs[(slice(None, None, -1),) * coeffs.ndim])
    return 0.5 * (coeffs + flipped)


def product_grid_size(total_cutoff: int, keep_cutoff: int | None = None) -> int:
    """Smallest fast grid on which a product of total degree ``total_cutoff``
    has unaliased coefficients up to ``keep_cutoff``."""
    keep = total_cutoff if keep_cutoff is None else keep_cutoff
    return sfft.next_fast_len(total_cutoff + keep + 1)


@dataclass(frozen=True, eq=False)
class PeriodicField:
    """Real periodic field given by its centered Fourier coefficients."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim < 1 or any(s != c.shape[0] for s in c.shape) or c.shape[0] % 2 == 0:
            raise ShapeError(f"coefficients must have shape (2N+1,)*d, got {c.shape}")
        c = hermitian_part(c)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # construction -------------------------------------------------------
    @classmethod
    def zeros(cls, d: int, cutoff: int) -> "PeriodicField":
        return cls(np.zeros((2 * cutoff + 1,) * d, dtype=complex))

    @classmethod
    def constant(cls, d: int, cutoff: int, value: float) -> "PeriodicField":
        c = np.zeros((2 * cutoff + 1,) * d, dtype=complex)
        c[(cutoff,) * d] = value
        return cls(c)

    @classmethod
    def from_modes(cls, d: int, terms: Iterable, cutoff: int | None = None) -> "PeriodicField":
        """Build from ``(n, coefficient)`` pairs listed once per Hermitian pair.

        Each term adds ``c`` at ``n`` and ``conj(c)`` at ``-n``; a term at
        ``n = 0`` must be real.
        """
        terms = [(tuple(int(v) for v in n), complex(c)) for n, c in terms]
        for n, _ in terms:
            if len(n) != d:
                raise ShapeError(f"wavenumber {n} has wrong dimension for d={d}")
        needed = max([max(abs(v) for v in n) for n, _ in terms] + [0])
        if cutoff is None:
            cutoff = needed
        elif needed > cutoff:
            raise ShapeError(f"mode {needed} exceeds cutoff {cutoff}")
        arr = np.zeros((2 * cutoff + 1,) * d, dtype=complex)
        for n, c in terms:
            idx = tuple(v + cutoff for v in n)
            if all(v == 0 for v in n):
                if abs(c.imag) > 0:
                    raise ValueError("zero mode of a real field must be real")
                arr[idx] += c.real
            else:
                arr[idx] += c
                arr[tuple(cutoff - v for v in n)] += np.conj(c)
        return cls(arr)

    @classmethod
    def from_samples(cls, samples, cutoff: int | None = None) -> "PeriodicField":
        values = np.asarray(samples, dtype=float)
        if values.ndim < 1 or any(s != values.shape[0] for s in values.shape):
            raise ShapeError(f"grid must be uniform, got shape {values.shape}")
        if values.shape[0] < 3:
            raise ShapeError("need at least 3 samples per axis")
        if cutoff is None:
            cutoff = (values.shape[0] - 1) // 2
        return cls(grid_to_coeffs(values, cutoff))

    @classmethod
    def from_function(cls, func, d: int, cutoff: int, samples: int | None = None) -> "PeriodicField":
        """Sample ``func(*coords)`` on ``[0,1)^d`` and truncate."""
        samples = samples or 2 * cutoff + 1
        pts = grid_points(d, samples)
        return cls.from_samples(func(*pts), cutoff)

    # views --------------------------------------------------------------
    @property
    def d(self) -> int:
        return self.coeffs.ndim

    @property
    def cutoff(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def modes(self) -> int:
        return self.cutoff

    def coefficient(self, n: Sequence[int]) -> complex:
        N = self.cutoff
        if any(abs(v) > N for v in n):
            return 0j
        return complex(self.coeffs[tuple(v + N for v in n)])

    def grid(self, samples: int | None = None) -> np.ndarray:
        samples = samples or 2 * self.cutoff + 1
        return coeffs_to_grid(self.coeffs, samples)

    def resized(self, cutoff: int) -> "PeriodicField":
        return PeriodicField(resize_coeffs(self.coeffs, cutoff))

    def degree(self, rtol: float = 0.0) -> int:
        """Largest ``|n|_inf`` carrying a coefficient above ``rtol * max|c|``."""
        mag = np.abs(self.coeffs)
        top = mag.max()
        if top == 0:
            return 0
        n = np.abs(wavenumbers(self.d, self.cutoff)).max(axis=-1)
        return int(n[mag > rtol * top].max())

    def sup(self, samples: int | None = None) -> float:
        samples = samples or max(4 * self.cutoff + 1, 33)
        return float(np.abs(self.grid(samples)).max())

    # arithmetic ---------------------------------------------------------
    def _match(self, other: "PeriodicField"):
        if other.d != self.d:
            raise ShapeError("dimension mismatch")
        N = max(self.cutoff, other.cutoff)
        return resize_coeffs(self.coeffs, N), resize_coeffs(other.coeffs, N)

    def __add__(self, other):
        if isinstance(other, PeriodicField):
            a, b = self._match(other)
            return PeriodicField(a + b)
        c = np.array(self.coeffs)
        c[(self.cutoff,) * self.d] += float(other)
        return PeriodicField(c)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return PeriodicField(-self.coeffs)

    def __mul__(self, scalar):
        if isinstance(scalar, PeriodicField):
            return product(self, scalar)
        return PeriodicField(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return PeriodicField(self.coeffs / float(scalar))

    def allclose(self, other: "PeriodicField", atol: float = 1e-12) -> bool:
        a, b = self._match(other)
        return bool(np.max(np.abs(a - b), initial=0.0) <= atol)

    def __repr__(self):
        return f"PeriodicField(d={self.d}, cutoff={self.cutoff})"

    # serialization ------------------------------------------------------
    def to_dict(self, rtol: float = 0.0) -> dict:
        """JSON dump ``{d, modes, coeffs: [[n...], re, im]...}``.

        Only the representative of each Hermitian pair (first nonzero
        component positive) and the zero mode are written.
        """
        N = self.cutoff
        n_all = wavenumbers(self.d, N).reshape(-1, self.d)
        c_all = self.coeffs.reshape(-1)
        floor = rtol * (np.abs(c_all).max() if c_all.size else 0.0)
        rows = []
        for n, c in zip(n_all, c_all):
            nz = n[n != 0]
            if nz.size and nz[0] < 0:
                continue
            if abs(c) <= floor or c == 0:
                continue
            rows.append([[int(v) for v in n], float(c.real), float(c.imag) if nz.size else 0.0])
        return {"d": self.d, "modes": N, "coeffs": rows}

    @classmethod
    def from_dict(cls, data: dict) -> "PeriodicField":
        d = int(data["d"])
        terms = [(n, complex(re, im)) for n, re, im in data["coeffs"]]
        return cls.from_modes(d, terms, cutoff=int(data.get("modes", 0)) or None)


def grid_points(d: int, samples: int) -> list[np.ndarray]:
    axis = np.arange(samples) / samples
    return np.meshgrid(*([axis] * d), indexing="ij")


def mean(f: PeriodicField) -> float:
    return float(f.coeffs[(f.cutoff,) * f.d].real)


def derivative(f: PeriodicField, alpha: MultiIndex) -> PeriodicField:
    if len(alpha) != f.d:
        raise ShapeError(f"multi-index {alpha} does not match d={f.d}")
    return PeriodicField(f.coeffs * derivative_multiplier(f.d, f.cutoff, alpha))


def product(f: PeriodicField, g: PeriodicField, cutoff: int | None = None) -> PeriodicField:
    """Exact product of two trigonometric polynomials, truncated to ``cutoff``.

    ``cutoff`` defaults to the larger input cutoff; pass
    ``f.cutoff + g.cutoff`` to keep the full spectrum.
    """
    if f.d != g.d:
        raise ShapeError("dimension mismatch")
    keep = max(f.cutoff, g.cutoff) if cutoff is None else cutoff
    total = f.cutoff + g.cutoff
    samples = product_grid_size(total, min(keep, total))
    values = coeffs_to_grid(f.coeffs, samples) * coeffs_to_grid(g.coeffs, samples)
    c = grid_to_coeffs(values, min(keep, total))
    return PeriodicField(resize_coeffs(c, keep))


def rescale(f: PeriodicField, k: int, samples: int | None = None) -> PeriodicField:
    """``x -> f(k x)``: coefficient ``c_n`` moves to wavenumber ``k n``.

    If a target sample grid is given it must be divisible by ``k`` so that the
    fine grid contains the cell grid points exactly.
    """
    k = int(k)
    if k < 1:
        raise ValueError("k must be a positive integer")
    if samples is not None and samples % k:
        raise AlignmentError(f"grid of {samples} points is not divisible by k={k}")
    if k == 1:
        return f
    N = f.cutoff
    out = np.zeros((2 * k * N + 1,) * f.d, dtype=complex)
    s = slice(0, 2 * k * N + 1, k)
    out[(s,) * f.d] = f.coeffs
    return PeriodicField(out)


def steklov_multiplier(d: int, cutoff: int, k: int) -> np.ndarray:
    axis = sinc(math.pi * np.arange(-cutoff, cutoff + 1) / k)
    out = np.ones((2 * cutoff + 1,) * d)
    for j in range(d):
        shape = [1] * d
        shape[j] = -1
        out = out * axis.reshape(shape)
    return out


def steklov(f: PeriodicField, k: int) -> PeriodicField:
    """Average of ``f(x + omega/k)`` over ``omega`` in the unit cell (``eps = 1/k``)."""
    return PeriodicField(f.coeffs * steklov_multiplier(f.d, f.cutoff, k))


@dataclass(frozen=True)
class FieldNorms:
    l2: float
    seminorms: tuple[float, ...]
    hm: float


def seminorm_weights(d: int, cutoff: int, j: int) -> np.ndarray:
    """``sum_{|alpha|=j} |(2 pi n)^alpha|^2`` on the centered layout."""
    n = wavenumbers(d, cutoff).astype(float)
    return TWO_PI ** (2 * j) * lambda_m_array(n, j)


def norms(f: PeriodicField, m: int) -> FieldNorms:
    power = np.abs(f.coeffs) ** 2
    semis = tuple(
        math.sqrt(float(np.sum(power * seminorm_weights(f.d, f.cutoff, j)))) for j in range(m + 1)
    )
    hm = math.sqrt(sum(s * s for s in semis))
    return FieldNorms(l2=semis[0], seminorms=semis, hm=hm)


def l2_norm(f: PeriodicField) -> float:
    return math.sqrt(float(np.sum(np.abs(f.coeffs) ** 2)))


def hm_norm(f: PeriodicField, m: int) -> float:
    return norms(f, m).hm


def inner(f: PeriodicField, g: PeriodicField) -> float:
    """L2 inner product over one period (Parseval)."""
    a, b = f._match(g)
    return float(np.sum(a * np.conj(b)).real)


def all_derivatives(f: PeriodicField, m: int) -> dict[MultiIndex, PeriodicField]:
    from .multiindex import UP_TO

    return {a: derivative(f, a) for a in enumerate_indices(f.d, m, UP_TO)}
