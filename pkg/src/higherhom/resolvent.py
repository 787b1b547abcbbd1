"""The eps-problem and the homogenized problem on the unit torus, first
approximations with and without Steklov smoothing, and the error norms.

``eps = 1/k``; fields live on the torus with a cutoff that is a multiple of
``k`` so that ``N(x/eps)`` and the Steklov multipliers are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import field as fld
from .cell import CellSolutionSet, HomogenizedMatrix, verify_homogenized
from .field import AlignmentError, PeriodicField
from .operators import (
    CoefficientMatrix,
    PreconditionError,
    SolverError,
    SpectralOperator,
    default_lambda,
    estimate_garding,
)
from .solvers import SolveInfo, scaled_gmres

DEFAULT_TOL = 1e-10


def random_trig_poly(d: int, degree: int = 4, seed: int = 0, unit: bool = True) -> PeriodicField:
    """Random real trigonometric polynomial with a nonzero mean, unit L2 norm by default."""
    rng = np.random.default_rng(seed)
    terms = []
    for n in fld.wavenumbers(d, degree).reshape(-1, d):
        nz = n[n != 0]
        if nz.size and nz[0] < 0:
            continue
        if nz.size == 0:
            terms.append((tuple(n), complex(1.0 + abs(rng.standard_normal()))))
        else:
            w = 1.0 / (1.0 + float(np.abs(n).sum()))
            terms.append((tuple(n), complex(rng.standard_normal(), rng.standard_normal()) * w))
    f = PeriodicField.from_modes(d, terms, cutoff=degree)
    return f / fld.l2_norm(f) if unit else f


def make_rhs(spec, d: int) -> PeriodicField:
    """Right-hand side from a spec: ``None`` (default random), a dict with
    ``kind`` in {random, modes, dump}, or a PeriodicField."""
    if isinstance(spec, PeriodicField):
        return spec
    spec = dict(spec or {})
    kind = spec.get("kind", "random")
    if kind == "random":
        return random_trig_poly(d, int(spec.get("degree", 4)), int(spec.get("seed", 0)))
    if kind == "modes":
        terms = [(n, complex(re, im)) for n, re, im in spec["terms"]]
        f = PeriodicField.from_modes(d, terms)
        return f / fld.l2_norm(f) if spec.get("normalize") else f
    if kind == "dump":
        return PeriodicField.from_dict(spec["field"])
    raise ValueError(f"unknown right-hand side kind {kind!r}")


@dataclass
class TorusProblem:
    a: CoefficientMatrix
    k: int
    lam: float
    f: PeriodicField
    cutoff: int
    tol: float = DEFAULT_TOL
    lambda2: float | None = None
    lambda_override: bool = False
    l2_residual: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.cutoff % self.k:
            raise AlignmentError(f"torus cutoff {self.cutoff} is not a multiple of k={self.k}")
        if self.f.d != self.a.d:
            raise ValueError("right-hand side dimension does not match the problem")
        if self.f.degree() > self.cutoff:
            raise ValueError("right-hand side does not fit the torus cutoff")
        if self.lambda2 is None:
            self.lambda2 = estimate_garding(self.a)
        if self.lam < self.lambda_floor and not self.lambda_override:
            raise PreconditionError(f"lambda={self.lam} below the floor 1 + lambda2 = {self.lambda_floor:.6g}")

    @property
    def eps(self) -> float:
        return 1.0 / self.k

    @property
    def lambda_floor(self) -> float:
        return 1.0 + float(self.lambda2)

    @classmethod
    def build(cls, a, k, f, cell_cutoff, lam=None, tol=DEFAULT_TOL, lambda2=None, l2_residual=False):
        lambda2 = estimate_garding(a) if lambda2 is None else lambda2
        override = lam is not None
        lam = default_lambda(lambda2) if lam is None else float(lam)
        return cls(a, int(k), lam, f, int(k) * int(cell_cutoff), tol, lambda2, override, l2_residual)


def _solve_epsilon(p: TorusProblem) -> tuple[PeriodicField, SolveInfo]:
    op = SpectralOperator(p.a, p.cutoff, p.k, p.lam)
    rhs = fld.resize_coeffs(p.f.coeffs, p.cutoff)
    x, info = scaled_gmres(op.apply_coeffs, rhs, op.diagonal_weight(), tol=p.tol)
    if not p.l2_residual:
        return PeriodicField(x), info
    # the plain L2 residual is up to (2 pi N)^m larger than the scaled one: tighten until it meets tol
    target = p.tol * np.linalg.norm(rhs)
    inner = p.tol
    while True:
        res = float(np.linalg.norm(op.apply_coeffs(x) - rhs))
        if res <= target:
            return PeriodicField(x), SolveInfo(res / np.linalg.norm(rhs), info.iterations, info.history)
        inner *= 0.1
        if inner < 1e-16:
            raise SolverError(f"L2 residual {res / np.linalg.norm(rhs):.3e} above {p.tol:.1e} at the "
                              "round-off limit of the scaled system", residual=res, history=info.history)
        x, info = scaled_gmres(op.apply_coeffs, rhs, op.diagonal_weight(), tol=inner)


def solve_epsilon(p: TorusProblem) -> PeriodicField:
    """Galerkin solution of ``A^eps u + lam u = f`` on the torus cutoff."""
    return _solve_epsilon(p)[0]


def homogenized_denominator(hat: HomogenizedMatrix, lam: float, d: int, cutoff: int) -> np.ndarray:
    return hat.symbol(fld.wavenumbers(d, cutoff)) + lam


def solve_homogenized(hat: HomogenizedMatrix, lam: float, f: PeriodicField, cutoff: int | None = None) -> PeriodicField:
    """Exact per-mode solve of ``A^ u + lam u = f``."""
    cutoff = f.cutoff if cutoff is None else cutoff
    denom = homogenized_denominator(hat, lam, f.d, cutoff)
    c = fld.resize_coeffs(f.coeffs, cutoff)
    live = c != 0
    if np.any(np.abs(denom[live]) <= 1e-14 * max(1.0, abs(lam))):
        raise PreconditionError("homogenized symbol + lambda vanishes on a mode of f; increase lambda")
    out = np.zeros_like(c)
    out[live] = c[live] / denom[live]
    return PeriodicField(out)


def _check_alignment(u: PeriodicField, k: int):
    if u.cutoff % k:
        raise AlignmentError(f"cutoff {u.cutoff} is not divisible by k={k}")


def _assemble(u: PeriodicField, cells: CellSolutionSet, k: int, smooth: bool) -> PeriodicField:
    _check_alignment(u, k)
    m = cells.gamma_index.m
    corr = PeriodicField.zeros(u.d, u.cutoff)
    for gamma, N in cells.solutions.items():
        if not np.any(N.coeffs):
            continue
        du = fld.derivative(u, gamma)
        if smooth:
            du = fld.steklov(du, k)
        corr = corr + fld.product(fld.rescale(N, k), du, cutoff=u.cutoff)
    return u + corr * (float(k) ** -m)


def first_approximation(u: PeriodicField, cells: CellSolutionSet, k: int) -> PeriodicField:
    """``u + eps^m sum_gamma N_gamma(x/eps) D^gamma u``."""
    return _assemble(u, cells, k, smooth=False)


def smoothed_first_approximation(u: PeriodicField, cells: CellSolutionSet, k: int) -> PeriodicField:
    """``u + eps^m sum_gamma N_gamma(x/eps) S^eps(D^gamma u)``."""
    return _assemble(u, cells, k, smooth=True)


def corrector_apply(f: PeriodicField, hat: HomogenizedMatrix, cells: CellSolutionSet, k: int, lam: float,
                    cutoff: int | None = None) -> PeriodicField:
    """Correcting operator applied to ``f``: ``v^eps - u`` with ``u = (A^ + lam)^-1 f``."""
    cutoff = k * cells.cutoff if cutoff is None else cutoff
    u = solve_homogenized(hat, lam, f, cutoff)
    return smoothed_first_approximation(u, cells, k) - u


@dataclass
class ApproximationBundle:
    u: PeriodicField
    u_eps: PeriodicField
    v_eps: PeriodicField
    v_hat: PeriodicField
    s_u_eps: PeriodicField
    f: PeriodicField
    k: int
    m: int
    lam: float
    info: dict = field(default_factory=dict)


@dataclass
class ErrorReport:
    eps: float
    l2_u: float
    hm_vhat: float
    hm_steklov: float
    f_norm: float
    hm_v: float = float("nan")
    ratios: dict = field(default_factory=dict)

    def __post_init__(self):
        scale = self.eps * self.f_norm
        self.ratios = {
            name: (getattr(self, name) / scale if scale > 0 else float("nan"))
            for name in ("l2_u", "hm_vhat", "hm_steklov")
        }

    def as_dict(self) -> dict:
        return {
            "eps": self.eps,
            "l2_u": self.l2_u,
            "hm_vhat": self.hm_vhat,
            "hm_steklov": self.hm_steklov,
            "hm_v": self.hm_v,
            "f_norm": self.f_norm,
            "ratios": dict(self.ratios),
        }


def build_bundle(p: TorusProblem, hat: HomogenizedMatrix, cells: CellSolutionSet) -> ApproximationBundle:
    check = verify_homogenized(hat, p.a.lambda0)
    if check["verdict"] != "ok":
        raise PreconditionError(f"homogenized matrix fails the symbol check: {check}")
    u_eps, info = _solve_epsilon(p)
    u = solve_homogenized(hat, p.lam, p.f, p.cutoff)
    return ApproximationBundle(
        u=u,
        u_eps=u_eps,
        v_eps=first_approximation(u, cells, p.k),
        v_hat=smoothed_first_approximation(u, cells, p.k),
        s_u_eps=fld.steklov(u_eps, p.k),
        f=p.f,
        k=p.k,
        m=p.a.m,
        lam=p.lam,
        info={
            "residual": info.residual,
            "iterations": info.iterations,
            "energy_ratio": fld.hm_norm(u_eps, p.a.m) / fld.l2_norm(p.f),
            "h2m_ratio": fld.hm_norm(u, 2 * p.a.m) / fld.l2_norm(p.f),
        },
    )


def error_report(bundle: ApproximationBundle, m: int | None = None, k: int | None = None) -> ErrorReport:
    m = bundle.m if m is None else m
    k = bundle.k if k is None else k
    return ErrorReport(
        eps=1.0 / k,
        l2_u=fld.l2_norm(bundle.u_eps - bundle.u),
        hm_vhat=fld.hm_norm(bundle.u_eps - bundle.v_hat, m),
        hm_steklov=fld.hm_norm(bundle.s_u_eps - bundle.u, m),
        f_norm=fld.l2_norm(bundle.f),
        hm_v=fld.hm_norm(bundle.u_eps - bundle.v_eps, m),
    )


def resolvent_bound(lam: float, lambda2: float) -> float:
    """``1 / (lam - lambda2)``, the L2 -> L2 bound used for the monotone check."""
    return 1.0 / (lam - lambda2) if lam > lambda2 else math.inf
