"""Potentials for order-m solenoidal vectors, and the g-matrix of the corrector.

A family ``{g_a}_{|a|=m}`` of mean-zero periodic fields with
``sum_a D^a g_a = 0`` is written as ``g_a = sum_{|c|=m} D^c G_ac`` with a
skew-symmetric ``G``.  Per nonzero mode

    G^n_ab = (g^n_a n^b - g^n_b n^a) / (Lambda_m(n) (2 pi i)^m)

which is exact once ``sum_a n^a g^n_a = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import field as fld
from .cell import CellSolutionSet, HomogenizedMatrix, tilde_matrix
from .field import PeriodicField
from .multiindex import EXACT, UP_TO, MultiIndex, enumerate_indices, lambda_m_array, monomial_array
from .operators import CoefficientMatrix, PreconditionError

INPUT_TOL = 1e-9
OUTPUT_TOL = 1e-10


class UnderResolvedError(RuntimeError):
    pass


@dataclass
class SolenoidalVector:
    m: int
    components: dict[MultiIndex, PeriodicField]

    def __post_init__(self):
        self.components = {MultiIndex.parse(k): v for k, v in self.components.items()}
        ds = {f.d for f in self.components.values()}
        if len(ds) != 1:
            raise ValueError("components must share one dimension")
        d = ds.pop()
        N = max(f.cutoff for f in self.components.values())
        full = {}
        for alpha in enumerate_indices(d, self.m, EXACT):
            f = self.components.get(alpha)
            full[alpha] = (f if f is not None else PeriodicField.zeros(d, N)).resized(N)
        extra = set(self.components) - set(full)
        if extra:
            raise ValueError(f"components {sorted(map(str, extra))} do not have order {self.m}")
        self.components = full

    @property
    def d(self) -> int:
        return next(iter(self.components.values())).d

    @property
    def cutoff(self) -> int:
        return next(iter(self.components.values())).cutoff

    def norm(self) -> float:
        return math.sqrt(sum(fld.l2_norm(f) ** 2 for f in self.components.values()))

    def mean_defect(self, scale: float = 0.0) -> float:
        top = max(self.norm(), scale)
        worst = max(abs(fld.mean(f)) for f in self.components.values())
        return worst / top if top else 0.0

    def divergence_defect(self, scale: float = 0.0) -> float:
        """``(sum_n |sum_a n^a g^n_a|^2 / Lambda_m(n))^1/2 / max(||g||, scale)``.

        At most 1 when ``scale`` is 0.  A reference ``scale`` keeps round-off
        sized inputs (e.g. an identically vanishing g-matrix column) from
        reading as large relative defects.
        """
        modes = fld.wavenumbers(self.d, self.cutoff).astype(float)
        lam = lambda_m_array(modes, self.m)
        acc = np.zeros(modes.shape[:-1], dtype=complex)
        power = 0.0
        for alpha, g in self.components.items():
            acc += monomial_array(modes, alpha) * g.coeffs
            power += float(np.sum(np.abs(g.coeffs) ** 2))
        nz = lam > 0
        num = math.sqrt(float(np.sum(np.abs(acc[nz]) ** 2 / lam[nz])))
        top = max(math.sqrt(power), scale)
        return num / top if top else 0.0

    def validate(self, tol: float = INPUT_TOL, scale: float = 0.0):
        if self.mean_defect(scale) > tol:
            raise PreconditionError(f"mean constraint violated: relative mean {self.mean_defect(scale):.3e}")
        if self.divergence_defect(scale) > tol:
            raise PreconditionError(
                f"Fourier divergence constraint violated: relative defect {self.divergence_defect(scale):.3e}")

    def to_dict(self) -> dict:
        return {"m": self.m, "components": [{"alpha": str(a), "field": f.to_dict()} for a, f in self.components.items()]}

    @classmethod
    def from_dict(cls, data: dict) -> "SolenoidalVector":
        comps = {MultiIndex.parse(c["alpha"]): PeriodicField.from_dict(c["field"]) for c in data["components"]}
        return cls(int(data["m"]), comps)


@dataclass
class SkewPotential:
    m: int
    components: dict[tuple[MultiIndex, MultiIndex], PeriodicField]
    bound_ratio: float = float("nan")
    report: dict = field(default_factory=dict)

    def __getitem__(self, key) -> PeriodicField:
        a, b = key
        return self.components[(MultiIndex.parse(a), MultiIndex.parse(b))]

    def skew_defect(self) -> float:
        return max(float(np.max(np.abs(G.coeffs + self.components[(b, a)].coeffs), initial=0.0))
                   for (a, b), G in self.components.items())

    def divergence(self) -> dict[MultiIndex, PeriodicField]:
        idx = sorted({a for a, _ in self.components})
        out = {}
        for alpha in idx:
            acc = None
            for gamma in idx:
                term = fld.derivative(self.components[(alpha, gamma)], gamma)
                acc = term if acc is None else acc + term
            out[alpha] = acc
        return out

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "components": [{"alpha": str(a), "beta": str(b), "field": f.to_dict()}
                           for (a, b), f in self.components.items()],
            "bound_ratio": self.bound_ratio,
            "report": self.report,
        }


def divergence_residual(G: SkewPotential, g: SolenoidalVector, scale: float = 0.0) -> float:
    """L2 defect of ``sum_c D^c G_ac = g_a`` over all components, relative to ``max(||g||, scale)``."""
    div = G.divergence()
    num = math.sqrt(sum(fld.l2_norm(div[a] - g.components[a]) ** 2 for a in g.components))
    den = math.sqrt(sum(fld.l2_norm(f) ** 2 for f in g.components.values()))
    den = max(den, scale)
    return num / den if den else num


def skew_potential(g: SolenoidalVector, tol: float = INPUT_TOL, scale: float = 0.0) -> SkewPotential:
    """Skew potential by the per-mode formula; ``scale`` is passed to input validation."""
    g.validate(tol, scale)
    d, m, N = g.d, g.m, g.cutoff
    modes = fld.wavenumbers(d, N).astype(float)
    lam = lambda_m_array(modes, m)
    nz = lam > 0
    factor = np.zeros_like(lam, dtype=complex)
    factor[nz] = 1.0 / (lam[nz] * (2j * math.pi) ** m)
    mono = {a: monomial_array(modes, a) for a in g.components}
    comps = {}
    for a in g.components:
        for b in g.components:
            if a == b:
                comps[(a, b)] = PeriodicField.zeros(d, N)
                continue
            c = (g.components[a].coeffs * mono[b] - g.components[b].coeffs * mono[a]) * factor
            comps[(a, b)] = PeriodicField(c)
    G = SkewPotential(m, comps)
    gsum = sum(fld.l2_norm(f) for f in g.components.values())
    G.bound_ratio = max(fld.hm_norm(f, m) for f in comps.values()) / gsum if gsum else 0.0
    G.report = {
        "skew_defect": G.skew_defect(),
        "divergence_residual": divergence_residual(G, g, scale),
        "input_mean_defect": g.mean_defect(scale),
        "input_divergence_defect": g.divergence_defect(scale),
        "bound_ratio": G.bound_ratio,
    }
    return G


def scalar_potential(g: PeriodicField, tol: float = 1e-12) -> list[PeriodicField]:
    """``G = grad U`` with ``Delta U = g``; requires a mean-zero ``g``."""
    scale = max(fld.l2_norm(g), 1e-300)
    if abs(fld.mean(g)) > tol * scale:
        raise PreconditionError(f"scalar potential needs mean zero, got mean {fld.mean(g):.3e}")
    modes = fld.wavenumbers(g.d, g.cutoff).astype(float)
    k2 = np.sum(modes ** 2, axis=-1)
    U = np.zeros_like(g.coeffs)
    nz = k2 > 0
    U[nz] = g.coeffs[nz] / (-4 * math.pi ** 2 * k2[nz])
    Uf = PeriodicField(U)
    out = []
    for j in range(g.d):
        e = [0] * g.d
        e[j] = 1
        out.append(fld.derivative(Uf, MultiIndex(tuple(e))))
    return out


def divergence(G: list[PeriodicField]) -> PeriodicField:
    acc = None
    for j, comp in enumerate(G):
        e = [0] * comp.d
        e[j] = 1
        term = fld.derivative(comp, MultiIndex(tuple(e)))
        acc = term if acc is None else acc + term
    return acc


def g_matrix(a: CoefficientMatrix, cells: CellSolutionSet, hat: HomogenizedMatrix,
             tol: float = 1e-8) -> dict[tuple[MultiIndex, MultiIndex], PeriodicField]:
    """``g_ab = a~_ab - a^_ab``, checking for each ``beta`` that ``{g_ab}_{|a|=m}`` is solenoidal."""
    tilde = tilde_matrix(a, cells)
    out = {key: f - hat[key] for key, f in tilde.items()}
    exact = enumerate_indices(a.d, a.m, EXACT)
    for beta in enumerate_indices(a.d, a.m, UP_TO):
        vec = SolenoidalVector(a.m, {alpha: out[(alpha, beta)] for alpha in exact})
        defect = vec.divergence_defect(tilde_scale(tilde, exact))
        if defect > tol:
            raise UnderResolvedError(f"g-matrix column {beta} is not solenoidal (defect {defect:.3e}); "
                                     "the cell solve looks under-resolved")
    return out


def tilde_scale(tilde, exact) -> float:
    """L2 size of the rows ``|a| = m`` of ``a~``: the reference for column defects,
    so that a column which vanishes up to round-off passes."""
    return math.sqrt(sum(fld.l2_norm(f) ** 2 for (alpha, _), f in tilde.items() if alpha in exact))


def g_potentials(a, cells, hat) -> dict[MultiIndex, SkewPotential]:
    """Skew potential ``G_{.,.,beta}`` of every g-matrix column."""
    g = g_matrix(a, cells, hat)
    tilde = tilde_matrix(a, cells)
    exact = enumerate_indices(a.d, a.m, EXACT)
    return {
        beta: skew_potential(SolenoidalVector(a.m, {alpha: g[(alpha, beta)] for alpha in exact}),
                             scale=tilde_scale(tilde, exact))
        for beta in enumerate_indices(a.d, a.m, UP_TO)
    }


def zero_functional_check(G: SkewPotential, u_factor: PeriodicField, phi: PeriodicField, k: int) -> float:
    """``sum_{|a|=|c|=m} int eps^m G_ac(kx) u(x) D^a D^c phi(x) dx`` with ``eps = 1/k``."""
    total = 0.0
    for (alpha, gamma), Gac in G.components.items():
        if not np.any(Gac.coeffs):
            continue
        Gk = fld.rescale(Gac, k)
        prod = fld.product(Gk, u_factor, cutoff=Gk.cutoff + u_factor.cutoff)
        total += fld.inner(prod, fld.derivative(phi, alpha + gamma))
    return total * float(k) ** (-G.m)


def zero_functional_scale(G: SkewPotential, u_factor: PeriodicField, phi: PeriodicField, k: int) -> float:
    """Size of the individual terms of the contraction, for relative tolerances."""
    total = 0.0
    for (alpha, gamma), Gac in G.components.items():
        total += Gac.sup() * fld.l2_norm(u_factor) * fld.l2_norm(fld.derivative(phi, alpha + gamma))
    return total * float(k) ** (-G.m)


def symmetrized(G: SkewPotential) -> SkewPotential:
    """Symmetric companion of ``G``: the upper triangle (in index order) mirrored
    onto the lower one.  Used as the negative control for the zero functional."""
    comps = {}
    for (a, b), f in G.components.items():
        comps[(a, b)] = f if not (b < a) else G.components[(b, a)]
    return SkewPotential(G.m, comps)


def random_solenoidal(d: int, m: int, modes: int, seed: int) -> SolenoidalVector:
    """Random solenoidal vector: per mode, project random coefficients onto the
    orthogonal complement of ``(n^a)_{|a|=m}``."""
    rng = np.random.default_rng(seed)
    idx = enumerate_indices(d, m, EXACT)
    arrs = {a: np.zeros((2 * modes + 1,) * d, dtype=complex) for a in idx}
    for n in fld.wavenumbers(d, modes).reshape(-1, d):
        nz = n[n != 0]
        if nz.size == 0 or nz[0] < 0:
            continue
        v = np.array([monomial_array(n.astype(float), a) for a in idx], dtype=float)
        c = rng.standard_normal(len(idx)) + 1j * rng.standard_normal(len(idx))
        c = c - v * (v @ c) / (v @ v)
        pos = tuple(int(x) + modes for x in n)
        neg = tuple(modes - int(x) for x in n)
        for a, val in zip(idx, c):
            arrs[a][pos] = val
            arrs[a][neg] = np.conj(val)
    return SolenoidalVector(m, {a: PeriodicField(arr) for a, arr in arrs.items()})
