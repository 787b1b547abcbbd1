"""Diagonally scaled GMRES for coercive, possibly nonsymmetric Galerkin systems."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .operators import SolverError


@dataclass
class SolveInfo:
    residual: float
    iterations: int
    history: list[float] = field(default_factory=list)


def default_iteration_cap(unknowns: int) -> int:
    return int(10 * math.sqrt(unknowns)) + 200


def scaled_gmres(apply, rhs: np.ndarray, weight: np.ndarray, mask: np.ndarray | None = None,
                 tol: float = 1e-10, max_iter: int | None = None, restart: int = 60,
                 refinements: int = 4) -> tuple[np.ndarray, SolveInfo]:
    """Solve ``apply(x) = rhs`` on the modes selected by ``mask``.

    The unknowns are scaled by ``weight**-1/2`` on both sides, so the residual
    GMRES minimizes is ``|| weight**-1/2 (rhs - A x) ||``, a discrete dual
    (H^-m type) norm.  Convergence is declared when that residual relative to
    ``|| weight**-1/2 rhs ||`` drops below ``tol``; a few restarts from the
    current iterate guard against the inner stopping test being optimistic.
    """
    shape = rhs.shape
    rhs = np.asarray(rhs, dtype=complex).reshape(-1)
    weight = np.asarray(weight, dtype=float).reshape(-1)
    mask = np.ones(rhs.size, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    n = int(mask.sum())
    if not np.all(weight[mask] > 0):
        raise ValueError("diagonal scaling weights must be positive; is lambda below the coercivity floor?")
    scale = 1.0 / np.sqrt(weight[mask])
    b = scale * rhs[mask]
    bnorm = np.linalg.norm(b)
    x = np.zeros(rhs.size, dtype=complex)
    if bnorm == 0:
        return x.reshape(shape), SolveInfo(0.0, 0, [0.0])

    def matvec(y):
        full = np.zeros(rhs.size, dtype=complex)
        full[mask] = scale * y
        return scale * np.asarray(apply(full.reshape(shape))).reshape(-1)[mask]

    op = LinearOperator((n, n), matvec=matvec, dtype=complex)
    cap = max_iter or default_iteration_cap(n)
    restart = min(restart, n)
    history: list[float] = []
    y = np.zeros(n, dtype=complex)
    used = 0
    rel = 1.0
    for _ in range(refinements):
        budget = cap - used
        if budget <= 0:
            break
        counter = []

        def cb(pr, counter=counter):
            counter.append(pr)

        y, _ = gmres(op, b, x0=y, rtol=0.5 * tol, atol=0.0, restart=restart,
                     maxiter=max(1, math.ceil(budget / restart)), callback=cb,
                     callback_type="pr_norm")
        used += len(counter)
        rel = float(np.linalg.norm(b - op.matvec(y)) / bnorm)
        history.append(rel)
        if rel <= tol:
            x[mask] = scale * y
            return x.reshape(shape), SolveInfo(rel, used, history)
    raise SolverError(f"GMRES stopped at relative residual {rel:.3e} > {tol:.1e} after {used} iterations",
                      residual=rel, history=history)
