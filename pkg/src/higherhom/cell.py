"""Cell problems, the homogenized matrix and its checks.

For every ``|gamma| <= m`` the cell function ``N_gamma`` is the mean-zero
periodic solution of

    sum_{|a|=|b|=m} D^a (a_ab D^b N_gamma) = - sum_{|a|=m} D^a a_{a gamma}

and the effective matrix is the cell average of

    a~_ab = a_ab + sum_{|g|=m} a_ag D^g N_b.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import field as fld
from .field import PeriodicField
from .multiindex import EXACT, UP_TO, IndexSet, MultiIndex, enumerate_indices, lambda_m_array, monomial_array
from .operators import (
    CoefficientMatrix,
    PreconditionError,
    SolverError,
    SpectralOperator,
    constant_matrix,
    sphere_samples,
    validate_ellipticity,
)
from .solvers import scaled_gmres

DEFAULT_TOL = 1e-10


def default_cell_cutoff(a: CoefficientMatrix) -> int:
    return 4 * a.degree + 8


@dataclass
class CellSolutionSet:
    gamma_index: IndexSet
    solutions: dict[MultiIndex, PeriodicField]
    residuals: dict[MultiIndex, float]
    cutoff: int
    tol: float
    digest: str
    iterations: dict[MultiIndex, int] = field(default_factory=dict)

    def __getitem__(self, gamma) -> PeriodicField:
        return self.solutions[MultiIndex.parse(gamma)]

    def __len__(self):
        return len(self.solutions)

    def decay(self) -> dict[str, float]:
        """Ratio of the largest outer-shell coefficient to the largest coefficient."""
        out = {}
        for g, f in self.solutions.items():
            mag = np.abs(f.coeffs)
            top = mag.max()
            shell = np.abs(fld.wavenumbers(f.d, f.cutoff)).max(axis=-1) == f.cutoff
            out[str(g)] = float(mag[shell].max() / top) if top > 0 else 0.0
        return out


@dataclass
class HomogenizedMatrix:
    d: int
    m: int
    entries: dict[tuple[MultiIndex, MultiIndex], float]
    lambda0_check: dict | None = None

    def __getitem__(self, key) -> float:
        a, b = key
        return self.entries.get((MultiIndex.parse(a), MultiIndex.parse(b)), 0.0)

    def as_coefficient_matrix(self, lambda0: float, lambda1: float | None = None, atol: float = 0.0) -> CoefficientMatrix:
        vals = {k: v for k, v in self.entries.items() if abs(v) > atol}
        return constant_matrix(self.d, self.m, vals, lambda0, lambda1, "homogenized")

    def symbol(self, n: np.ndarray) -> np.ndarray:
        """``sum_ab a^_ab (2 pi i n)^b (-2 pi i n)^a``."""
        n = np.asarray(n, dtype=float)
        out = np.zeros(n.shape[:-1], dtype=complex)
        for (alpha, beta), v in self.entries.items():
            if v:
                out += v * monomial_array(2j * math.pi * n, beta) * monomial_array(-2j * math.pi * n, alpha)
        return out

    def principal_table(self) -> list[list]:
        idx = enumerate_indices(self.d, self.m, EXACT)
        return [[self[(a, b)] for b in idx] for a in idx]

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "m": self.m,
            "entries": [{"alpha": str(a), "beta": str(b), "value": v} for (a, b), v in self.entries.items()],
            "lambda0_check": self.lambda0_check,
        }


def _check_principal(a: CoefficientMatrix):
    report = validate_ellipticity(a.principal(), garding_cutoff=False)
    if not report.ok:
        raise PreconditionError(
            f"principal part is not elliptic: symbol_min={report.symbol_min:.4g} < lambda0={a.lambda0}"
            f" or sup {report.sup_max:.4g} > lambda1={a.lambda1}"
        )


def cell_rhs(a: CoefficientMatrix, gamma: MultiIndex, cutoff: int) -> np.ndarray:
    """Coefficients of ``-sum_{|a|=m} (-1)^m D^a a_{a gamma}`` (the strong form of
    the right-hand side functional, sign-matched to the Galerkin operator)."""
    out = np.zeros((2 * cutoff + 1,) * a.d, dtype=complex)
    for alpha in enumerate_indices(a.d, a.m, EXACT):
        if not a.has(alpha, gamma):
            continue
        c = fld.resize_coeffs(a.entry(alpha, gamma).coeffs, cutoff)
        sign = -1.0 if alpha.order % 2 else 1.0
        out -= sign * fld.derivative_multiplier(a.d, cutoff, alpha) * c
    return out


def weak_residual(r: np.ndarray, d: int, m: int, cutoff: int) -> float:
    """``sup_n |r_n| / ||e_n||_W`` over nonzero modes, ``||e_n||_W = (2 pi)^m Lambda_m(n)^1/2``."""
    modes = fld.wavenumbers(d, cutoff).astype(float)
    w = (2 * math.pi) ** m * np.sqrt(lambda_m_array(modes, m))
    nz = w > 0
    return float(np.max(np.abs(r[nz]) / w[nz], initial=0.0))


def _solve_cell(a, gamma, cutoff, tol, op=None):
    gamma = MultiIndex.parse(gamma)
    if gamma.order > a.m or gamma.d != a.d:
        raise ValueError(f"gamma={gamma} is not a multi-index with |gamma| <= {a.m} in d={a.d}")
    rhs = cell_rhs(a, gamma, cutoff)
    scale = weak_residual(rhs, a.d, a.m, cutoff)
    if scale == 0.0:
        return PeriodicField.zeros(a.d, cutoff), 0.0, 0
    op = op or SpectralOperator(a, cutoff, principal_only=True)
    mask = np.ones(rhs.shape, dtype=bool)
    mask[(cutoff,) * a.d] = False
    weight = op.diagonal_weight(lam=0.0)
    weight[(cutoff,) * a.d] = 1.0
    # the solver's dual-norm target is tightened until the sup-norm residual meets tol
    inner_tol = tol
    for _ in range(4):
        x, info = scaled_gmres(op.apply_coeffs, rhs, weight, mask=mask, tol=inner_tol)
        x[(cutoff,) * a.d] = 0.0
        res = weak_residual(op.apply_coeffs(x) - rhs, a.d, a.m, cutoff) / scale
        if res <= tol:
            return PeriodicField(x), res, info.iterations
        inner_tol *= 0.1
    raise SolverError(f"cell problem {gamma} residual {res:.3e} above {tol:.1e}", residual=res,
                      history=info.history)


def solve_cell(a: CoefficientMatrix, gamma, cutoff: int | None = None, tol: float = DEFAULT_TOL) -> PeriodicField:
    """Mean-zero solution ``N_gamma`` of one cell problem on the truncated space."""
    _check_principal(a)
    cutoff = default_cell_cutoff(a) if cutoff is None else cutoff
    return _solve_cell(a, gamma, cutoff, tol)[0]


def solve_all_cells(a: CoefficientMatrix, cutoff: int | None = None, tol: float = DEFAULT_TOL) -> CellSolutionSet:
    _check_principal(a)
    cutoff = default_cell_cutoff(a) if cutoff is None else cutoff
    index = enumerate_indices(a.d, a.m, UP_TO)
    op = SpectralOperator(a, cutoff, principal_only=True)
    sols, res, its = {}, {}, {}
    errors = {}
    for gamma in index:
        try:
            sols[gamma], res[gamma], its[gamma] = _solve_cell(a, gamma, cutoff, tol, op)
        except SolverError as exc:
            errors[gamma] = exc
    if errors:
        msg = "; ".join(f"{g}: {e}" for g, e in errors.items())
        raise SolverError(f"cell solves failed: {msg}", history=[e.residual for e in errors.values()])
    return CellSolutionSet(index, sols, res, cutoff, tol, a.digest(), its)


def _check_consistent(a: CoefficientMatrix, cells: CellSolutionSet):
    if cells.digest != a.digest():
        raise ValueError("cell solutions were computed for a different coefficient matrix")


def tilde_matrix(a: CoefficientMatrix, cells: CellSolutionSet) -> dict:
    """``a~_ab(y) = a_ab + sum_{|g|=m} a_ag D^g N_b`` for all ``|a|, |b| <= m``,
    truncated to the cell cutoff."""
    _check_consistent(a, cells)
    N = cells.cutoff
    exact = enumerate_indices(a.d, a.m, EXACT)
    dN = {(g, b): fld.derivative(cells.solutions[b], g) for g in exact for b in cells.solutions}
    out = {}
    for alpha in enumerate_indices(a.d, a.m, UP_TO):
        for beta in enumerate_indices(a.d, a.m, UP_TO):
            acc = a.entry(alpha, beta).resized(N)
            for g in exact:
                if a.has(alpha, g):
                    acc = acc + fld.product(a.entry(alpha, g), dN[(g, beta)], cutoff=N)
            out[(alpha, beta)] = acc
    return out


def homogenize(a: CoefficientMatrix, cells: CellSolutionSet, check: bool = True) -> HomogenizedMatrix:
    tilde = tilde_matrix(a, cells)
    entries = {key: fld.mean(f) for key, f in tilde.items()}
    hat = HomogenizedMatrix(a.d, a.m, entries)
    if check:
        hat.lambda0_check = verify_homogenized(hat, a.lambda0)
    return hat


def verify_homogenized(hat: HomogenizedMatrix, lambda0: float, xi_samples=None, tol: float = 1e-9) -> dict:
    """Constant-matrix symbol inequality with constant ``lambda0`` on sampled directions."""
    xi = sphere_samples(hat.d) if xi_samples is None else np.asarray(xi_samples, dtype=float).reshape(-1, hat.d)
    exact = enumerate_indices(hat.d, hat.m, EXACT)
    num = np.zeros(len(xi))
    for a_ in exact:
        for b in exact:
            v = hat[(a_, b)]
            if v:
                num += v * monomial_array(xi, a_) * monomial_array(xi, b)
    ratio = num / lambda_m_array(xi, hat.m)
    smin = float(ratio.min())
    return {"verdict": "ok" if smin >= lambda0 - tol else "fail", "symbol_min": smin, "lambda0": lambda0}


def cell_orthogonality_check(a: CoefficientMatrix, cells: CellSolutionSet, beta, delta) -> float:
    """``< sum_{|a|=m} a~_{a beta} D^a N_delta >``; zero when the cell problems are solved."""
    beta, delta = MultiIndex.parse(beta), MultiIndex.parse(delta)
    if delta.order != a.m:
        raise ValueError("delta must have order m")
    tilde = tilde_matrix(a, cells)
    total = 0.0
    for alpha in enumerate_indices(a.d, a.m, EXACT):
        total += fld.inner(tilde[(alpha, beta)], fld.derivative(cells.solutions[delta], alpha))
    return total


# -- cache ----------------------------------------------------------------

def cache_root() -> Path:
    return Path(os.environ.get("HIGHERHOM_CACHE_DIR", Path.home() / ".cache" / "higherhom"))


def cache_key(a: CoefficientMatrix, cutoff: int, tol: float) -> str:
    blob = json.dumps({"problem": a.to_dict(), "cutoff": cutoff, "tol": tol}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def save_cells(cells: CellSolutionSet, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "digest": cells.digest,
        "cutoff": cells.cutoff,
        "tol": cells.tol,
        "d": cells.gamma_index.d,
        "m": cells.gamma_index.m,
        "residuals": {str(g): r for g, r in cells.residuals.items()},
        "iterations": {str(g): i for g, i in cells.iterations.items()},
        "coefficient_decay": cells.decay(),
        "files": {},
    }
    for i, (g, f) in enumerate(cells.solutions.items()):
        name = f"N_{i:03d}.json"
        (directory / name).write_text(json.dumps(f.to_dict()))
        manifest["files"][str(g)] = name
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def load_cells(directory) -> CellSolutionSet:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    d, m = manifest["d"], manifest["m"]
    index = enumerate_indices(d, m, UP_TO)
    sols, res = {}, {}
    for key, name in manifest["files"].items():
        g = MultiIndex.parse(key)
        f = PeriodicField.from_dict(json.loads((directory / name).read_text()))
        sols[g] = f.resized(manifest["cutoff"])
        res[g] = manifest["residuals"][key]
    its = {MultiIndex.parse(k): v for k, v in manifest.get("iterations", {}).items()}
    return CellSolutionSet(index, sols, res, manifest["cutoff"], manifest["tol"], manifest["digest"], its)


def cached_cells(a: CoefficientMatrix, cutoff: int | None = None, tol: float = DEFAULT_TOL,
                 root=None) -> tuple[CellSolutionSet, Path]:
    cutoff = default_cell_cutoff(a) if cutoff is None else cutoff
    directory = Path(root or cache_root()) / cache_key(a, cutoff, tol)
    if (directory / "manifest.json").exists():
        cells = load_cells(directory)
        if cells.digest == a.digest():
            return cells, directory
    cells = solve_all_cells(a, cutoff, tol)
    save_cells(cells, directory)
    return cells, directory
