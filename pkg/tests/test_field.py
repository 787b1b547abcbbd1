import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from higherhom import field as fld
from higherhom.field import AlignmentError, PeriodicField, ShapeError
from higherhom.multiindex import UP_TO, enumerate_indices, mi

from oracles import eval_field

TWO_PI = 2 * math.pi


def cos1(d=1, cutoff=1):
    return PeriodicField.from_modes(d, [((1,) + (0,) * (d - 1), 0.5)], cutoff)


def sin1(cutoff=1):
    return PeriodicField.from_modes(1, [((1,), -0.5j)], cutoff)


@st.composite
def trig_polys(draw, d=None, max_degree=4):
    d = d or draw(st.integers(1, 2))
    N = draw(st.integers(1, max_degree))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(2 * N + 1,) * d) + 1j * rng.normal(size=(2 * N + 1,) * d)
    return PeriodicField(c)


# -- construction -------------------------------------------------------------

def test_from_samples_constant():
    f = PeriodicField.from_samples(np.full(8, 5.0))
    assert f.coefficient((0,)) == pytest.approx(5.0)
    assert np.count_nonzero(np.abs(f.coeffs) > 1e-14) == 1


def test_from_samples_cos_and_sin():
    y = np.arange(8) / 8
    c = PeriodicField.from_samples(np.cos(TWO_PI * y))
    assert c.coefficient((1,)) == pytest.approx(0.5, abs=1e-15)
    assert c.coefficient((-1,)) == pytest.approx(0.5, abs=1e-15)
    assert np.abs(c.coeffs).sum() == pytest.approx(1.0, abs=1e-14)
    s = PeriodicField.from_samples(np.sin(TWO_PI * y))
    assert s.coefficient((1,)) == pytest.approx(-0.5j, abs=1e-15)
    assert s.coefficient((-1,)) == pytest.approx(0.5j, abs=1e-15)


def test_from_samples_rejects_bad_grids():
    with pytest.raises(ShapeError):
        PeriodicField.from_samples(np.zeros((4, 5)))
    with pytest.raises(ShapeError):
        PeriodicField.from_samples(np.zeros(2))


@given(trig_polys())
def test_hermitian_symmetry_and_real_samples(f):
    c = f.coeffs
    flipped = np.conj(c[(slice(None, None, -1),) * f.d])
    np.testing.assert_allclose(c, flipped, atol=1e-15)
    full = np.fft.ifftn(np.fft.ifftshift(fld.resize_coeffs(c, 3 * f.cutoff)), norm="forward")
    assert np.abs(full.imag).max() <= 1e-12 * max(fld.l2_norm(f), 1.0)


@given(trig_polys())
def test_samples_round_trip(f):
    samples = f.grid(2 * f.cutoff + 3)
    g = PeriodicField.from_samples(samples, f.cutoff)
    np.testing.assert_allclose(g.grid(2 * f.cutoff + 3), samples, atol=1e-12 * np.abs(samples).max())


@given(trig_polys())
def test_grid_matches_direct_sum(f):
    pts = np.stack(fld.grid_points(f.d, 2 * f.cutoff + 1), axis=-1).reshape(-1, f.d)
    np.testing.assert_allclose(f.grid().reshape(-1), eval_field(f, pts), atol=1e-12 * (1 + fld.l2_norm(f)))


def test_dump_round_trip():
    f = PeriodicField.from_modes(2, [((0, 0), 1.5), ((1, -2), 0.25 + 0.5j), ((0, 1), -1j)], cutoff=3)
    data = f.to_dict()
    assert data["d"] == 2 and data["modes"] == 3
    assert len(data["coeffs"]) == 3
    assert PeriodicField.from_dict(data).allclose(f, atol=0)


# -- mean / derivative / product ---------------------------------------------

def test_mean_examples():
    assert fld.mean(cos1() + 3.0) == pytest.approx(3.0)
    assert fld.mean(sin1()) == 0.0
    two_plus = sin1() + 2.0
    two_minus = 2.0 - sin1()
    assert fld.mean(fld.product(two_plus, two_minus)) == pytest.approx(3.5, abs=1e-15)


def test_derivative_examples():
    np.testing.assert_allclose(fld.derivative(sin1(), mi(1)).coeffs, (TWO_PI * cos1()).coeffs, atol=1e-14)
    assert not np.any(fld.derivative(PeriodicField.constant(2, 2, 4.0), mi(1, 1)).coeffs)
    g = PeriodicField.from_modes(2, [((1, 1), 0.5)])
    np.testing.assert_allclose(fld.derivative(g, mi(1, 1)).coeffs, (-4 * math.pi**2 * g).coeffs, atol=1e-13)


@given(trig_polys(d=2), st.integers(0, 2), st.integers(0, 2), st.integers(0, 2), st.integers(0, 2))
def test_derivative_composition(f, a1, a2, b1, b2):
    a, b = mi(a1, a2), mi(b1, b2)
    lhs = fld.derivative(fld.derivative(f, a), b)
    rhs = fld.derivative(f, a + b)
    np.testing.assert_allclose(lhs.coeffs, rhs.coeffs, rtol=1e-13, atol=1e-13 * np.abs(rhs.coeffs).max(initial=1))
    if (a + b).order:
        assert fld.mean(rhs) == 0.0


def test_product_examples():
    g = PeriodicField.from_modes(1, [((3,), 0.2 + 0.1j), ((0,), 0.7)])
    np.testing.assert_allclose(fld.product(PeriodicField.constant(1, 0, 1.0), g).coeffs, g.coeffs, atol=1e-15)
    s = sin1()
    assert fld.product(s, s).cutoff == 1  # truncated to the working cutoff by default
    sq = fld.product(s, s, cutoff=2)
    expect = 0.5 - PeriodicField.from_modes(1, [((2,), 0.25)])
    np.testing.assert_allclose(sq.coeffs, expect.coeffs, atol=1e-15)
    lhs = fld.product(s + 2.0, s * 0.5, cutoff=2)
    np.testing.assert_allclose(lhs.coeffs, (s + sq * 0.5).coeffs, atol=1e-15)


@given(trig_polys(), st.integers(0, 2**31 - 1))
def test_product_is_exact_pointwise(f, seed):
    rng = np.random.default_rng(seed)
    g = PeriodicField(rng.normal(size=f.coeffs.shape) + 1j * rng.normal(size=f.coeffs.shape))
    fg = fld.product(f, g, cutoff=2 * f.cutoff)
    pts = rng.random(size=(20, f.d))
    scale = fld.l2_norm(f) * fld.l2_norm(g) * f.coeffs.size
    np.testing.assert_allclose(eval_field(fg, pts), eval_field(f, pts) * eval_field(g, pts), atol=1e-12 * scale)


# -- rescale / steklov ---------------------------------------------------------

def test_rescale_examples():
    c = PeriodicField.constant(1, 2, 3.0)
    assert fld.rescale(c, 4).allclose(c.resized(8))
    r = fld.rescale(cos1(), 4)
    assert r.coefficient((4,)) == pytest.approx(0.5)
    assert np.abs(r.coeffs).sum() == pytest.approx(1.0)


@given(trig_polys(), st.integers(1, 5))
def test_rescale_keeps_mean_and_samples(f, k):
    r = fld.rescale(f, k)
    assert fld.mean(r) == pytest.approx(fld.mean(f), abs=1e-14)
    x = np.random.default_rng(k).random(size=(10, f.d))
    np.testing.assert_allclose(eval_field(r, x), eval_field(f, (k * x) % 1.0), atol=1e-12 * f.coeffs.size * (1 + fld.l2_norm(f)))


def test_rescale_alignment_error():
    with pytest.raises(AlignmentError):
        fld.rescale(cos1(), 4, samples=10)


def test_steklov_examples():
    c = PeriodicField.constant(2, 3, 1.25)
    assert fld.steklov(c, 3).allclose(c)
    s = fld.steklov(cos1(), 2)
    assert s.coefficient((1,)) == pytest.approx(1 / math.pi, rel=1e-15)  # (2/pi) * 1/2
    f = PeriodicField.from_modes(1, [((4,), 1.0), ((8,), 0.5)])
    s = fld.steklov(f, 4)
    assert abs(s.coefficient((4,))) < 1e-16
    assert abs(s.coefficient((8,))) < 1e-16


def test_steklov_multiplier_against_quadrature():
    from scipy import integrate

    n, k = 3, 5
    val, _ = integrate.quad(lambda w: math.cos(TWO_PI * n * w / k), -0.5, 0.5)
    assert fld.steklov_multiplier(1, n, k)[2 * n] == pytest.approx(val, rel=1e-13)
    assert fld.sinc(np.array([1e-6]))[0] == pytest.approx(1 - 1e-12 / 6, rel=1e-15)


@given(trig_polys(max_degree=8), st.sampled_from([4, 8, 16]))
def test_steklov_contracts_and_approximates(f, k):
    s = fld.steklov(f, k)
    assert fld.l2_norm(s) <= fld.l2_norm(f) * (1 + 1e-14)
    grad = math.sqrt(sum(fld.l2_norm(fld.derivative(f, e)) ** 2 for e in enumerate_indices(f.d, 1)))
    assert fld.l2_norm(s - f) <= grad / k + 1e-14


@given(trig_polys(max_degree=3), trig_polys(max_degree=6), st.sampled_from([2, 3, 4, 8]))
def test_oscillating_factor_bound(b, phi, k):
    if b.d != phi.d:
        return
    N = max(k * b.cutoff, phi.cutoff)
    bk = fld.rescale(b, k)
    prod = fld.product(bk, fld.steklov(phi, k), cutoff=N + phi.cutoff)
    assert fld.l2_norm(prod) <= fld.l2_norm(b) * fld.l2_norm(phi) * (1 + 1e-12)


# -- norms ----------------------------------------------------------------------

def test_norm_examples():
    s = sin1()
    assert fld.l2_norm(s) ** 2 == pytest.approx(0.5, rel=1e-15)
    assert fld.hm_norm(s, 1) ** 2 == pytest.approx(0.5 + TWO_PI**2 / 2, rel=1e-14)
    assert fld.hm_norm(PeriodicField.zeros(2, 3), 2) == 0.0


@given(trig_polys(), st.integers(0, 3))
def test_norms_are_sums_of_derivative_norms(f, m):
    n = fld.norms(f, m)
    direct = sum(fld.l2_norm(df) ** 2 for df in fld.all_derivatives(f, m).values())
    assert n.hm ** 2 == pytest.approx(direct, rel=1e-12)
    assert n.l2 == pytest.approx(fld.l2_norm(f))
    assert all(v >= 0 for v in n.seminorms)


@given(trig_polys())
def test_parseval_against_grid_quadrature(f):
    samples = f.grid(2 * f.cutoff + 1)
    assert np.mean(samples ** 2) == pytest.approx(fld.l2_norm(f) ** 2, rel=1e-12)


@given(trig_polys(d=1), trig_polys(d=1))
def test_inner_is_grid_quadrature(f, g):
    R = 2 * max(f.cutoff, g.cutoff) + 1
    assert fld.inner(f, g) == pytest.approx(np.mean(f.grid(R) * g.grid(R)), rel=1e-11, abs=1e-12)
