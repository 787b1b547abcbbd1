import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from higherhom import field as fld
from higherhom.cell import homogenize, solve_all_cells, tilde_matrix
from higherhom.field import PeriodicField
from higherhom.multiindex import EXACT, enumerate_indices, mi
from higherhom.operators import BUILTINS, PreconditionError, builtin, constant_matrix
from higherhom.potential import (
    SkewPotential,
    SolenoidalVector,
    divergence,
    g_matrix,
    g_potentials,
    random_solenoidal,
    scalar_potential,
    skew_potential,
    symmetrized,
    zero_functional_check,
    zero_functional_scale,
)
from higherhom.resolvent import random_trig_poly

TWO_PI = 2 * math.pi


def test_zero_input_gives_zero_potential():
    g = SolenoidalVector(2, {mi(2, 0): PeriodicField.zeros(2, 3)})
    G = skew_potential(g)
    assert all(not np.any(f.coeffs) for f in G.components.values())


def test_first_order_example_by_hand():
    g = SolenoidalVector(1, {mi(1, 0): PeriodicField.from_modes(2, [((0, 1), -0.5j)])})  # sin 2 pi y2
    G = skew_potential(g)
    expect = PeriodicField.from_modes(2, [((0, 1), -0.5 / TWO_PI)])  # -cos(2 pi y2)/(2 pi)
    assert G[("(1,0)", "(0,1)")].allclose(expect, atol=1e-16)
    assert G[("(0,1)", "(1,0)")].allclose(-expect, atol=1e-16)
    assert not np.any(G[("(1,0)", "(1,0)")].coeffs) and not np.any(G[("(0,1)", "(0,1)")].coeffs)
    d2 = fld.derivative(G[("(1,0)", "(0,1)")], mi(0, 1))
    assert d2.allclose(g.components[mi(1, 0)], atol=1e-15)


def test_second_order_single_mode_null_vector():
    # (n^a) at n = (1,1) is (1, 1, 1) over (2,0), (1,1), (0,2); (1, -1, 0) is in its null space
    c = 0.3 + 0.2j
    comps = {mi(2, 0): PeriodicField.from_modes(2, [((1, 1), c)]),
             mi(1, 1): PeriodicField.from_modes(2, [((1, 1), -c)])}
    g = SolenoidalVector(2, comps)
    G = skew_potential(g)
    assert G.skew_defect() == 0.0
    assert G.report["divergence_residual"] <= 1e-14
    for (a, b), f in G.components.items():
        assert f.coefficient((0, 0)) == 0


@pytest.mark.parametrize("m", [1, 2])
@pytest.mark.parametrize("seed", range(5))
def test_random_solenoidal_identities(m, seed):
    g = random_solenoidal(2, m, 6, seed)
    assert g.divergence_defect() <= 1e-14
    G = skew_potential(g)
    assert G.skew_defect() == 0.0
    assert G.report["divergence_residual"] <= 1e-10
    assert 0 < G.bound_ratio < math.inf
    div = G.divergence()
    for a, ga in g.components.items():
        assert div[a].allclose(ga, atol=1e-12)


def test_three_dimensional_potential():
    g = random_solenoidal(3, 2, 2, 3)
    G = skew_potential(g)
    assert G.skew_defect() == 0.0 and G.report["divergence_residual"] <= 1e-10


def test_invalid_inputs_rejected():
    with pytest.raises(PreconditionError, match="mean"):
        skew_potential(SolenoidalVector(1, {mi(1, 0): PeriodicField.constant(2, 1, 1.0)}))
    not_div_free = SolenoidalVector(1, {mi(1, 0): PeriodicField.from_modes(2, [((1, 0), 0.5)])})
    with pytest.raises(PreconditionError, match="divergence"):
        skew_potential(not_div_free)
    with pytest.raises(ValueError):
        SolenoidalVector(2, {mi(1, 0): PeriodicField.zeros(2, 1)})


def test_fourier_constraint_matches_weak_divergence():
    rng = np.random.default_rng(11)
    good = random_solenoidal(2, 2, 4, 0)
    raw = {a: PeriodicField(rng.normal(size=(9, 9)) + 1j * rng.normal(size=(9, 9))) for a in enumerate_indices(2, 2)}
    raw = {a: f - fld.mean(f) for a, f in raw.items()}
    bad = SolenoidalVector(2, raw)
    worst_good = worst_bad = 0.0
    for seed in range(32):
        phi = random_trig_poly(2, 4, seed)
        worst_good = max(worst_good, abs(sum(fld.inner(f, fld.derivative(phi, a)) for a, f in good.components.items())))
        worst_bad = max(worst_bad, abs(sum(fld.inner(f, fld.derivative(phi, a)) for a, f in bad.components.items())))
    assert worst_good <= 1e-10
    assert worst_bad > 1e-2
    assert bad.divergence_defect() > 1e-2


def test_scalar_potential_examples():
    g = PeriodicField.from_modes(2, [((1, 0), 0.5)])
    G = scalar_potential(g)
    assert G[0].allclose(PeriodicField.from_modes(2, [((1, 0), -0.5j / TWO_PI)]), atol=1e-16)
    assert not np.any(G[1].coeffs)
    assert all(not np.any(c.coeffs) for c in scalar_potential(PeriodicField.zeros(2, 2)))
    g = PeriodicField.from_modes(2, [((1, 1), 0.5)])
    G = scalar_potential(g)
    expect = PeriodicField.from_modes(2, [((1, 1), -0.5j / (2 * TWO_PI))])  # sin 2 pi (y1+y2)/(4 pi)
    assert G[0].allclose(expect, atol=1e-16) and G[1].allclose(expect, atol=1e-16)
    with pytest.raises(PreconditionError):
        scalar_potential(PeriodicField.constant(1, 1, 2.0))


@given(st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_scalar_potential_identity_and_bound(d, seed):
    g = random_trig_poly(d, 3, seed)
    g = g - fld.mean(g)
    G = scalar_potential(g)
    assert fld.l2_norm(divergence(G) - g) <= 1e-12 * fld.l2_norm(g)
    h1 = math.sqrt(sum(fld.hm_norm(c, 1) ** 2 for c in G))
    assert h1 <= math.sqrt(1 + 1 / TWO_PI**2) * fld.l2_norm(g) * (1 + 1e-12)


def test_g_matrix_constant_and_1d():
    a = constant_matrix(2, 1, {((1, 0), (1, 0)): 1.0, ((0, 1), (0, 1)): 2.0})
    cells = solve_all_cells(a)
    g = g_matrix(a, cells, homogenize(a, cells))
    assert all(not np.any(f.coeffs) for f in g.values())
    a = builtin("1d-m1-harmonic")
    cells = solve_all_cells(a)
    g = g_matrix(a, cells, homogenize(a, cells))
    assert fld.l2_norm(g[(mi(1), mi(1))]) < 1e-6


@pytest.mark.parametrize("name", sorted(set(BUILTINS) - {"1d-m1-constant"}))
def test_g_matrix_columns_are_solenoidal(name):
    a = builtin(name)
    cells = solve_all_cells(a)
    hat = homogenize(a, cells)
    g = g_matrix(a, cells, hat)
    assert all(abs(fld.mean(f)) < 1e-14 for f in g.values())
    tilde = tilde_matrix(a, cells)
    scale = math.sqrt(sum(fld.l2_norm(f) ** 2 for (al, _), f in tilde.items() if al.order == a.m))
    exact = enumerate_indices(a.d, a.m, EXACT)
    for beta in enumerate_indices(a.d, a.m, "up-to-m"):
        acc = sum((fld.derivative(g[(al, beta)], al) for al in exact), PeriodicField.zeros(a.d, 0))
        assert fld.l2_norm(acc) <= 1e-8 * scale * (TWO_PI * cells.cutoff) ** a.m
    for beta, G in g_potentials(a, cells, hat).items():
        assert G.skew_defect() == 0.0
        assert G.report["divergence_residual"] <= 1e-10


def _test_pair(seed, d=2):
    phi = random_trig_poly(d, 3, seed)
    u = random_trig_poly(d, 2, seed + 1000)
    return u, phi


@pytest.mark.parametrize("m", [1, 2])
def test_zero_functional_vanishes_and_symmetric_control_does_not(m):
    G = skew_potential(random_solenoidal(2, m, 3, 5))
    control = []
    for seed in range(10):
        u, phi = _test_pair(seed)
        for k in (1, 3):
            scale = zero_functional_scale(G, u, phi, k)
            assert abs(zero_functional_check(G, u, phi, k)) <= 1e-10 * scale
        S = symmetrized(G)
        control.append(abs(zero_functional_check(S, u, phi, 2)) / zero_functional_scale(S, u, phi, 2))
    assert max(control) > 1e-3


def test_zero_functional_of_zero_potential():
    G = SkewPotential(1, {(mi(1, 0), mi(0, 1)): PeriodicField.zeros(2, 2), (mi(0, 1), mi(1, 0)): PeriodicField.zeros(2, 2)})
    u, phi = _test_pair(0)
    assert zero_functional_check(G, u, phi, 2) == 0.0


def test_dump_round_trip():
    g = random_solenoidal(2, 2, 2, 1)
    back = SolenoidalVector.from_dict(g.to_dict())
    for a, f in g.components.items():
        assert back.components[a].allclose(f, atol=0)
