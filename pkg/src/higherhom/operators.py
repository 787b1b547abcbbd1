"""Divergence-form operators of order 2m with periodic trig-polynomial coefficients.

The operator is ``A u = sum_{a,b} (-1)^{|a|} D^a (a_ab(k x) D^b u)`` acting on
trigonometric polynomials of a fixed cutoff.  ``apply`` returns the Galerkin
projection of ``A u`` onto that cutoff, so ``<apply(a, u), phi>`` equals the
weak form for every ``phi`` of the same cutoff.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.fft as sfft
import scipy.linalg
from scipy.stats import norm as _normal
from scipy.stats import qmc

from . import field as fld
from .field import PeriodicField, ShapeError
from .multiindex import (
    EXACT,
    UP_TO,
    MultiIndex,
    enumerate_indices,
    format_index,
    lambda_m_array,
    mi,
    monomial_array,
)


class SolverError(RuntimeError):
    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = list(history or [])


class PreconditionError(ValueError):
    pass


Pair = tuple[MultiIndex, MultiIndex]


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    """Sparse map ``(alpha, beta) -> a_ab(y)``; missing entries are zero."""

    d: int
    m: int
    entries: Mapping[Pair, PeriodicField]
    lambda0: float
    lambda1: float
    name: str = ""

    def __post_init__(self):
        clean = {}
        for (alpha, beta), f in self.entries.items():
            alpha, beta = MultiIndex.parse(alpha), MultiIndex.parse(beta)
            if alpha.d != self.d or beta.d != self.d or f.d != self.d:
                raise ShapeError(f"entry {alpha},{beta} does not match d={self.d}")
            if alpha.order > self.m or beta.order > self.m:
                raise ValueError(f"entry {alpha},{beta} exceeds order m={self.m}")
            key = (alpha, beta)
            clean[key] = clean[key] + f if key in clean else f
        ordered = dict(sorted(clean.items(), key=lambda kv: (kv[0][0].sort_key(), kv[0][1].sort_key())))
        object.__setattr__(self, "entries", ordered)

    def entry(self, alpha: MultiIndex, beta: MultiIndex) -> PeriodicField:
        f = self.entries.get((alpha, beta))
        return f if f is not None else PeriodicField.zeros(self.d, 0)

    def has(self, alpha: MultiIndex, beta: MultiIndex) -> bool:
        return (alpha, beta) in self.entries

    @property
    def cutoff(self) -> int:
        return max((f.cutoff for f in self.entries.values()), default=0)

    @property
    def degree(self) -> int:
        return max((f.degree() for f in self.entries.values()), default=0)

    def is_constant(self, atol: float = 0.0) -> bool:
        return all(f.degree(rtol=atol) == 0 for f in self.entries.values())

    def principal(self) -> "CoefficientMatrix":
        keep = {k: f for k, f in self.entries.items() if k[0].order == self.m and k[1].order == self.m}
        return CoefficientMatrix(self.d, self.m, keep, self.lambda0, self.lambda1, self.name)

    def has_lower_order(self) -> bool:
        return any(a.order + b.order < 2 * self.m for a, b in self.entries)

    def scale_lower(self, s: float) -> "CoefficientMatrix":
        out = {}
        for (a, b), f in self.entries.items():
            out[(a, b)] = f if a.order == self.m and b.order == self.m else f * s
        return CoefficientMatrix(self.d, self.m, out, self.lambda0, self.lambda1, self.name)

    def means(self) -> "CoefficientMatrix":
        """Matrix of cell averages (the naive, uncorrected effective matrix)."""
        out = {k: PeriodicField.constant(self.d, 0, fld.mean(f)) for k, f in self.entries.items()}
        return CoefficientMatrix(self.d, self.m, out, self.lambda0, self.lambda1, self.name + "/mean")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "d": self.d,
            "m": self.m,
            "lambda0": self.lambda0,
            "lambda1": self.lambda1,
            "entries": [
                {"alpha": str(a), "beta": str(b), "field": f.to_dict()["coeffs"]}
                for (a, b), f in self.entries.items()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CoefficientMatrix":
        d, m = int(data["d"]), int(data["m"])
        entries = {}
        for e in data["entries"]:
            alpha, beta = MultiIndex.parse(e["alpha"]), MultiIndex.parse(e["beta"])
            terms = [(n, complex(re, im)) for n, re, im in e["field"]]
            f = PeriodicField.from_modes(d, terms)
            key = (alpha, beta)
            entries[key] = entries[key] + f if key in entries else f
        return cls(d, m, entries, float(data["lambda0"]), float(data["lambda1"]), data.get("name", ""))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def constant_matrix(d: int, m: int, values: Mapping, lambda0: float = 1.0, lambda1: float | None = None,
                    name: str = "") -> CoefficientMatrix:
    entries = {
        (MultiIndex.parse(a), MultiIndex.parse(b)): PeriodicField.constant(d, 0, float(v))
        for (a, b), v in values.items()
    }
    if lambda1 is None:
        lambda1 = max((abs(float(v)) for v in values.values()), default=0.0)
    return CoefficientMatrix(d, m, entries, lambda0, lambda1, name)


def identity_principal(d: int, m: int) -> CoefficientMatrix:
    return constant_matrix(d, m, {(a, a): 1.0 for a in enumerate_indices(d, m)}, 1.0, 1.0, "identity")


def from_plate_tensor(d: int, tensor, lambda0: float, lambda1: float | None = None,
                      name: str = "") -> CoefficientMatrix:
    """Collect a fourth-order tensor ``a_ijsh(y)`` into multi-index form.

    ``sum_ijsh D_i D_j (a_ijsh D_s D_h)`` becomes ``a_ab = sum a_ijsh`` over all
    ordered pairs with ``e_i + e_j = alpha`` and ``e_s + e_h = beta``.  ``tensor``
    maps ``(i, j, s, h)`` to a PeriodicField; missing keys are zero.
    """
    entries: dict[Pair, PeriodicField] = {}
    for (i, j, s, h), f in tensor.items():
        ai = [0] * d
        ai[i] += 1
        ai[j] += 1
        bi = [0] * d
        bi[s] += 1
        bi[h] += 1
        key = (MultiIndex(tuple(ai)), MultiIndex(tuple(bi)))
        entries[key] = entries[key] + f if key in entries else f
    entries = {k: v for k, v in entries.items() if np.any(v.coeffs != 0)}
    if lambda1 is None:
        lambda1 = max(f.sup() for f in entries.values())
    return CoefficientMatrix(d, 2, entries, lambda0, lambda1, name)


# -- built-in families -----------------------------------------------------

def _harmonic_1d(m: int) -> CoefficientMatrix:
    a = PeriodicField.from_modes(1, [((0,), 2.0), ((1,), -0.5j)])  # 2 + sin 2 pi y
    return CoefficientMatrix(1, m, {(mi(m), mi(m)): a}, 1.0, 3.0, f"1d-m{m}-harmonic")


def _isotropic_2d() -> CoefficientMatrix:
    # 2 + sin 2 pi y1 + 0.5 cos 2 pi (y1 + y2)
    a = PeriodicField.from_modes(2, [((0, 0), 2.0), ((1, 0), -0.5j), ((1, 1), 0.25)])
    entries = {(mi(1, 0), mi(1, 0)): a, (mi(0, 1), mi(0, 1)): a}
    return CoefficientMatrix(2, 1, entries, 0.5, 3.5, "2d-m1-isotropic")


def _bilaplacian() -> CoefficientMatrix:
    # Delta(alpha(y) Delta) with alpha = 2 + cos 2 pi y1
    alpha = PeriodicField.from_modes(2, [((0, 0), 2.0), ((1, 0), 0.5)])
    lap = [mi(2, 0), mi(0, 2)]
    entries = {(p, q): alpha for p in lap for q in lap}
    return CoefficientMatrix(2, 2, entries, 1.0, 3.0, "bilaplacian")


def _plate_tensor() -> CoefficientMatrix:
    # a_ijsh = s(y) (d_is d_jh + d_ih d_js) / 2, s = 2 + sin 2 pi y1 cos 2 pi y2
    s = PeriodicField.from_modes(2, [((0, 0), 2.0), ((1, 1), -0.25j), ((1, -1), -0.25j)])
    tensor = {}
    for i in range(2):
        for j in range(2):
            for p in range(2):
                for q in range(2):
                    w = 0.5 * ((i == p) * (j == q) + (i == q) * (j == p))
                    if w:
                        key = (i, j, p, q)
                        tensor[key] = tensor[key] + s * w if key in tensor else s * w
    return from_plate_tensor(2, tensor, lambda0=1.0, lambda1=6.0, name="plate-tensor")


def _lower_1d() -> CoefficientMatrix:
    # nonsymmetric second-order operator with oscillating lower-order terms
    a11 = PeriodicField.from_modes(1, [((0,), 2.0), ((1,), -0.5j)])
    a10 = PeriodicField.from_modes(1, [((1,), 0.25)])
    a01 = PeriodicField.from_modes(1, [((0,), 0.2), ((1,), -0.15j)])
    a00 = PeriodicField.from_modes(1, [((0,), 0.5), ((2,), 0.25)])
    entries = {(mi(1), mi(1)): a11, (mi(1), mi(0)): a10, (mi(0), mi(1)): a01, (mi(0), mi(0)): a00}
    return CoefficientMatrix(1, 1, entries, 1.0, 3.0, "1d-m1-lower")


def _constant_1d() -> CoefficientMatrix:
    return constant_matrix(1, 1, {((1,), (1,)): 1.5}, 1.5, 1.5, "1d-m1-constant")


BUILTINS = {
    "1d-m1-harmonic": lambda: _harmonic_1d(1),
    "1d-m2-harmonic": lambda: _harmonic_1d(2),
    "2d-m1-isotropic": _isotropic_2d,
    "bilaplacian": _bilaplacian,
    "plate-tensor": _plate_tensor,
    "1d-m1-lower": _lower_1d,
    "1d-m1-constant": _constant_1d,
}


def builtin(name: str) -> CoefficientMatrix:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise KeyError(f"unknown built-in problem {name!r}; known: {sorted(BUILTINS)}") from None


def load_problem(source) -> CoefficientMatrix:
    """A built-in family name, a JSON problem file path, or an already-parsed dict."""
    if isinstance(source, CoefficientMatrix):
        return source
    if isinstance(source, dict):
        return CoefficientMatrix.from_dict(source)
    if str(source) in BUILTINS:
        return builtin(str(source))
    with open(source) as fh:
        return CoefficientMatrix.from_dict(json.load(fh))


def save_problem(a: CoefficientMatrix, path) -> None:
    Path(path).write_text(json.dumps(a.to_dict(), indent=2))


# -- ellipticity ----------------------------------------------------------

def sphere_samples(d: int, count: int = 256) -> np.ndarray:
    """Deterministic, well-spread unit vectors in R^d (unscrambled Halton)."""
    if d == 1:
        return np.where(np.arange(count) % 2 == 0, 1.0, -1.0).reshape(-1, 1)
    if d == 2:
        t = 2 * math.pi * ((np.arange(count) * (math.sqrt(5) - 1) / 2) % 1.0)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    pts = qmc.Halton(d=d, scramble=False).random(count + 1)[1:]
    z = _normal.ppf(np.clip(pts, 1e-12, 1 - 1e-12))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


@dataclass
class EllipticityReport:
    sup_bound_ok: bool
    sup_max: float
    symbol_min: float
    lambda0: float
    lambda1: float
    lambda2_estimate: float | None = None
    suggested_lambda: float | None = None
    tolerance: float = 1e-9
    verdict: str = field(init=False)

    def __post_init__(self):
        self.verdict = "ok" if self.ok else "fail"

    @property
    def ok(self) -> bool:
        return self.sup_bound_ok and self.symbol_min >= self.lambda0 - self.tolerance

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "sup_bound_ok": self.sup_bound_ok,
            "sup_max": self.sup_max,
            "lambda0": self.lambda0,
            "lambda1": self.lambda1,
            "symbol_min": self.symbol_min,
            "lambda2_estimate": self.lambda2_estimate,
            "suggested_lambda": self.suggested_lambda,
        }


def principal_symbol_ratio(a: CoefficientMatrix, y_samples: int, xi: np.ndarray) -> np.ndarray:
    """Ratio ``sum a_ab(y) xi^b xi^a / sum (xi^a)^2`` over the grid x xi samples."""
    idx = enumerate_indices(a.d, a.m, EXACT)
    mono = {g: monomial_array(xi, g) for g in idx}
    denom = lambda_m_array(xi, a.m)
    num = 0.0
    for (alpha, beta), f in a.principal().entries.items():
        vals = f.grid(y_samples).reshape(-1, 1)
        num = num + vals * (mono[alpha] * mono[beta]).reshape(1, -1)
    if np.isscalar(num):
        return np.zeros((y_samples ** a.d, len(xi)))
    return num / denom.reshape(1, -1)


def validate_ellipticity(a: CoefficientMatrix, y_samples: int | None = None, xi_samples=None,
                         tol: float = 1e-9, garding_cutoff: int | None = None) -> EllipticityReport:
    """Check the sup bound on every entry and the pointwise principal-symbol
    inequality; failures go into the verdict instead of raising."""
    if y_samples is None:
        y_samples = max(4 * a.cutoff + 1, 64 if a.d == 1 else 32)
    xi = sphere_samples(a.d) if xi_samples is None else np.asarray(xi_samples, dtype=float).reshape(-1, a.d)
    if len(xi) == 0 or np.any(np.linalg.norm(xi, axis=1) == 0):
        raise ValueError("xi samples must be nonempty and nonzero")
    sup_max = max((f.sup(y_samples) for f in a.entries.values()), default=0.0)
    ratio = principal_symbol_ratio(a, y_samples, xi)
    report = EllipticityReport(
        sup_bound_ok=sup_max <= a.lambda1 * (1 + tol) + tol,
        sup_max=sup_max,
        symbol_min=float(ratio.min()) if ratio.size else 0.0,
        lambda0=a.lambda0,
        lambda1=a.lambda1,
        tolerance=tol,
    )
    if report.ok and garding_cutoff is not False:
        lam2 = estimate_garding(a, garding_cutoff)
        report.lambda2_estimate = lam2
        report.suggested_lambda = default_lambda(lam2)
    return report


def default_lambda(lambda2: float) -> float:
    return 1.0 + 2.0 * lambda2


# -- dense Galerkin assembly ------------------------------------------------

def _mode_list(d: int, cutoff: int) -> np.ndarray:
    return fld.wavenumbers(d, cutoff).reshape(-1, d)


def galerkin_matrix(a: CoefficientMatrix, cutoff: int, k: int = 1, principal_only: bool = False) -> np.ndarray:
    """Dense Galerkin matrix in the Fourier basis, built by direct coefficient lookup.

    ``M[i, j] = sum_ab c_ab[(n_i - n_j)/k] (2 pi i n_j)^b (-2 pi i n_i)^a`` with
    modes in C order of the centered layout; entries with ``n_i - n_j`` not a
    multiple of ``k`` vanish.
    """
    modes = _mode_list(a.d, cutoff)
    diff = modes[:, None, :] - modes[None, :, :]
    aligned = np.all(diff % k == 0, axis=-1)
    q = diff // k
    out = np.zeros((len(modes), len(modes)), dtype=complex)
    src = a.principal() if principal_only else a
    twopi_i = 2j * math.pi
    for (alpha, beta), f in src.entries.items():
        N = f.cutoff
        inside = aligned & np.all(np.abs(q) <= N, axis=-1)
        idx = tuple(np.where(inside, q[..., j] + N, 0) for j in range(a.d))
        coef = np.where(inside, f.coeffs[idx], 0.0)
        right = monomial_array(twopi_i * modes, beta)
        left = monomial_array(-twopi_i * modes, alpha)
        out += coef * left[:, None] * right[None, :]
    return out


def estimate_garding(a: CoefficientMatrix, cutoff: int | None = None, max_iter: int = 2000,
                     rtol: float = 1e-12) -> float:
    """Smallest shift making ``<Au,u> + s|u|^2 >= (lambda0/2) |u|_m^2`` on the
    truncated space.

    The minimum eigenvalue of the Hermitian part of ``M - (lambda0/2) K`` is
    found by shifted inverse iteration, the shift being a Gershgorin lower bound.
    """
    if not a.has_lower_order():
        return 0.0
    if cutoff is None:
        cutoff = 24 if a.d == 1 else (8 if a.d == 2 else 3)
    M = galerkin_matrix(a, cutoff)
    modes = _mode_list(a.d, cutoff).astype(float)
    K = (2 * math.pi) ** (2 * a.m) * lambda_m_array(modes, a.m)
    H = 0.5 * (M + M.conj().T) - np.diag(0.5 * a.lambda0 * K)
    lam_min = _min_eig_inverse_iteration(H, max_iter, rtol)
    return max(0.0, -lam_min)


def _min_eig_inverse_iteration(H: np.ndarray, max_iter: int, rtol: float) -> float:
    radius = np.sum(np.abs(H), axis=1) - np.abs(np.diag(H))
    shift = float(np.min(np.diag(H).real - radius)) - 1.0
    lu = scipy.linalg.lu_factor(H - shift * np.eye(len(H)))
    rng = np.random.default_rng(12345)
    x = rng.standard_normal(len(H)) + 0j
    x /= np.linalg.norm(x)
    rq = float(np.vdot(x, H @ x).real)
    history = [rq]
    for _ in range(max_iter):
        y = scipy.linalg.lu_solve(lu, x)
        x = y / np.linalg.norm(y)
        new = float(np.vdot(x, H @ x).real)
        history.append(new)
        resid = np.linalg.norm(H @ x - new * x)
        if abs(new - rq) <= rtol * max(1.0, abs(new)) and resid <= 1e-6 * max(1.0, abs(shift)):
            return new
        rq = new
    raise SolverError("inverse iteration did not converge", residual=resid, history=history)


# -- spectral application ---------------------------------------------------

class SpectralOperator:
    """Fast Galerkin application of ``A^(1/k)`` (+ ``lam``) on a fixed cutoff.

    Coefficients are rescaled to ``a(k x)`` and sampled once on a grid large
    enough that ``a(kx) D^b u`` has unaliased modes up to the cutoff.
    """

    def __init__(self, a: CoefficientMatrix, cutoff: int, k: int = 1, lam: float = 0.0,
                 principal_only: bool = False):
        self.a = a.principal() if principal_only else a
        self.d, self.m = a.d, a.m
        self.cutoff = cutoff
        self.k = int(k)
        self.lam = float(lam)
        self.shape = (2 * cutoff + 1,) * self.d
        kN = self.k * self.a.cutoff
        self.samples = sfft.next_fast_len(2 * cutoff + kN + 1)
        self.coef_grids: dict[Pair, np.ndarray] = {}
        for key, f in self.a.entries.items():
            if f.degree() == 0:
                self.coef_grids[key] = np.asarray(fld.mean(f))
            else:
                self.coef_grids[key] = fld.coeffs_to_grid(fld.rescale(f, self.k).coeffs, self.samples)
        self.betas = sorted({b for _, b in self.coef_grids})
        self.alphas = sorted({a_ for a_, _ in self.coef_grids})
        self._mult = {g: fld.derivative_multiplier(self.d, cutoff, g) for g in set(self.betas) | set(self.alphas)}

    def _to_grid(self, c: np.ndarray) -> np.ndarray:
        full = np.zeros((self.samples,) * self.d, dtype=complex)
        start = self.samples // 2 - self.cutoff
        full[(slice(start, start + 2 * self.cutoff + 1),) * self.d] = c
        return sfft.ifftn(sfft.ifftshift(full), norm="forward")

    def _from_grid(self, g: np.ndarray) -> np.ndarray:
        full = sfft.fftshift(sfft.fftn(g, norm="forward"))
        start = self.samples // 2 - self.cutoff
        return full[(slice(start, start + 2 * self.cutoff + 1),) * self.d]

    def apply_coeffs(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=complex).reshape(self.shape)
        db = {b: self._to_grid(c * self._mult[b]) for b in self.betas}
        out = self.lam * c
        for alpha in self.alphas:
            gamma = None
            for (a_, b), vals in self.coef_grids.items():
                if a_ != alpha:
                    continue
                term = vals * db[b]
                gamma = term if gamma is None else gamma + term
            sign = -1.0 if alpha.order % 2 else 1.0
            out = out + sign * self._mult[alpha] * self._from_grid(gamma)
        return out

    def __call__(self, u: PeriodicField) -> PeriodicField:
        return PeriodicField(self.apply_coeffs(fld.resize_coeffs(u.coeffs, self.cutoff)))

    def diagonal_weight(self, lam: float | None = None) -> np.ndarray:
        """``(2 pi)^{2m} lambda0 Lambda_m(n) + lam`` on the centered layout."""
        lam = self.lam if lam is None else lam
        modes = fld.wavenumbers(self.d, self.cutoff).astype(float)
        return (2 * math.pi) ** (2 * self.m) * self.a.lambda0 * lambda_m_array(modes, self.m) + lam


def apply(a: CoefficientMatrix, u: PeriodicField, k: int = 1) -> PeriodicField:
    """Galerkin projection of ``A^eps u`` (``eps = 1/k``) onto the cutoff of ``u``."""
    return SpectralOperator(a, u.cutoff, k)(u)


def generalized_gradients(a: CoefficientMatrix, u: PeriodicField, k: int = 1) -> dict[MultiIndex, PeriodicField]:
    """``Gamma_alpha = sum_b a_ab(kx) D^b u`` for every ``|alpha| <= m`` (exact, unprojected)."""
    out = {}
    for alpha in enumerate_indices(a.d, a.m, UP_TO):
        acc = None
        for (a_, b), f in a.entries.items():
            if a_ != alpha:
                continue
            fk = fld.rescale(f, k)
            term = fld.product(fk, fld.derivative(u, b), cutoff=fk.cutoff + u.cutoff)
            acc = term if acc is None else acc + term
        out[alpha] = acc if acc is not None else PeriodicField.zeros(a.d, u.cutoff)
    return out


def weak_form(a: CoefficientMatrix, u: PeriodicField, phi: PeriodicField, k: int = 1) -> float:
    """``sum_ab int a_ab(kx) D^b u D^a phi dx`` by exact spectral quadrature."""
    grads = generalized_gradients(a, u, k)
    total = 0.0
    for alpha, gam in grads.items():
        total += fld.inner(gam, fld.derivative(phi, alpha))
    return total


def symbol(a: CoefficientMatrix, n: np.ndarray) -> np.ndarray:
    """Fourier symbol ``sum_ab <a_ab> (2 pi i n)^b (-2 pi i n)^a`` of the averaged matrix.

    For a constant matrix this is the exact per-mode multiplier of ``A``.
    """
    n = np.asarray(n, dtype=float)
    out = np.zeros(n.shape[:-1], dtype=complex)
    for (alpha, beta), f in a.entries.items():
        out += fld.mean(f) * monomial_array(2j * math.pi * n, beta) * monomial_array(-2j * math.pi * n, alpha)
    return out


def describe_index_pairs(a: CoefficientMatrix) -> list[str]:
    return [f"{format_index(x)}{format_index(y)}" for x, y in a.entries]
