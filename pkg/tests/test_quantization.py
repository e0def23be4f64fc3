import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmlab.analysis import fit_exponent
from qmlab.errors import AliasingError, DimensionError, EllipticityError
from qmlab.quantization import (GridFunction, TorusGrid, apply_expansion, apply_operator, commutator_defect,
                                inverse_semiclassical_fourier, moyal_compose, parametrix_residual,
                                read_grid_function, semiclassical_fourier, write_grid_function)
from qmlab.quasimodes import gaussian_packet, localize, make_cluster, make_plane_wave
from qmlab.symbols import Symbol, parse_symbol

from conftest import random_symbol


def random_function(grid, rng, kmax=None):
    """Random band-limited function (keeps the Nyquist row empty)."""
    kmax = grid.N // 4 if kmax is None else kmax
    uh = np.zeros(grid.shape, dtype=complex)
    ks = np.meshgrid(*grid.wavenumbers(), indexing="ij") if grid.dim > 1 else [grid.wavenumbers()[0]]
    mask = np.all([np.abs(k) <= kmax for k in ks], axis=0)
    uh[mask] = rng.normal(size=mask.sum()) + 1j * rng.normal(size=mask.sum())
    return GridFunction(grid, np.fft.ifftn(uh))


def test_grid_validation():
    for N in (3, 6, 2):
        with pytest.raises(ValueError):
            TorusGrid(2, N)
    g = TorusGrid(2, 16)
    assert g.coords()[0][0, 0] == -np.pi
    assert g.for_frequency(2, 10, 8).N == 128


@pytest.mark.parametrize("n,N", [(1, 64), (2, 32), (3, 16)])
def test_parseval_and_roundtrip(n, N, rng):
    g = TorusGrid(n, N)
    u = random_function(g, rng)
    for h in (1.0, 0.1, 1 / 7):
        F = semiclassical_fourier(u, h)
        assert abs(F.norm() - u.norm()) <= 1e-12 * u.norm()
        back = inverse_semiclassical_fourier(F)
        assert (back - u).norm() <= 1e-12 * u.norm()


def test_fourier_of_plane_wave_is_delta():
    g = TorusGrid(2, 32)
    u = make_plane_wave(g, (3, -2))
    F = semiclassical_fourier(u, 0.25)
    a = np.abs(F.coeffs)
    assert np.count_nonzero(a > 1e-10) == 1
    assert abs(abs(F.at((3, -2))) - u.norm()) < 1e-12
    np.testing.assert_allclose([np.broadcast_to(x, g.shape)[g.index_of((3, -2))] for x in F.xi()], [0.75, -0.5])


def test_zero_coefficients_give_zero():
    g = TorusGrid(2, 16)
    F = semiclassical_fourier(GridFunction(g, np.zeros(g.shape)), 0.5)
    assert inverse_semiclassical_fourier(F).norm() == 0


@pytest.mark.parametrize("k,h,expected", [((5, 0), 1 / 5, 0.0), ((3, 4), 1 / 5, 0.0), ((5, 0), 1 / 4, 0.5625)])
def test_plane_wave_laplacian(k, h, expected):
    g = TorusGrid(2, 32)
    u = make_plane_wave(g, k)
    v = apply_operator(Symbol.laplace(2), u, h)
    assert abs(v.norm() / u.norm() - expected) <= 1e-12


def test_multiplier_and_x_dependent_action():
    g = TorusGrid(2, 64)
    k = (3, -5)
    u = make_plane_wave(g, k)
    h = 0.1
    v = apply_operator(Symbol.xi_var(2, 1), u, h)
    np.testing.assert_allclose(v.values, h * k[1] * u.values, atol=1e-12)
    x1, x2 = g.coords()
    v = apply_operator(parse_symbol("x2^2*xi1", 2), u, h)
    np.testing.assert_allclose(v.values, h * k[0] * x2**2 * u.values, atol=1e-12)


def test_aliasing_and_dimension_rejected():
    g = TorusGrid(1, 16)
    with pytest.raises(AliasingError):
        apply_operator(Symbol.xi_var(1, 0), GridFunction(g, np.exp(-8j * g.coords()[0])), 0.5)
    with pytest.raises(DimensionError):
        apply_operator(Symbol.laplace(2), GridFunction(TorusGrid(3, 8), np.ones((8, 8, 8))), 0.5)
    with pytest.raises(ValueError):
        apply_operator(Symbol.laplace(1), GridFunction(g, np.ones(16)), 2.0)


def test_linearity(rng):
    g = TorusGrid(2, 128)
    u = gaussian_packet(g, (4, 2), 0.4)
    w = gaussian_packet(g, (-3, 5), 0.3)
    p, q = random_symbol(rng, 2), random_symbol(rng, 2)
    h = 0.2
    a, b = 1.5 - 0.5j, -0.7
    lhs = apply_operator(p, u * a + w * b, h)
    rhs = apply_operator(p, u, h) * a + apply_operator(p, w, h) * b
    assert (lhs - rhs).norm() <= 1e-12 * lhs.norm()
    lhs = apply_operator(p + q, u, h)
    assert (lhs - apply_operator(p, u, h) - apply_operator(q, u, h)).norm() <= 1e-12 * max(lhs.norm(), 1)


def test_moyal_examples():
    e = moyal_compose(Symbol.xi_var(1, 0), Symbol.x_var(1, 0))
    assert [t.power for t in e.terms] == [0, 1]
    assert e.terms[0].real == parse_symbol("x1*xi1", 1) and e.terms[0].imag.is_zero()
    assert e.terms[1].real.is_zero() and e.terms[1].imag == Symbol.constant(1, -1.0)
    p = Symbol.laplace(2)
    e = moyal_compose(p, p)
    assert len(e.terms) == 1 and e.terms[0].real == p * p
    e = moyal_compose(parse_symbol("xi1^3 + x2", 2), Symbol.constant(2, 3.0))
    assert len(e.terms) == 1 and e.terms[0].real == parse_symbol("3*xi1^3 + 3*x2", 2)


def test_moyal_truncation_flag():
    p, q = parse_symbol("xi1^2", 1), parse_symbol("x1^2", 1)
    assert moyal_compose(p, q).termination_degree == 2
    assert not moyal_compose(p, q).truncated
    e = moyal_compose(p, q, h_degree_cap=1)
    assert e.truncated and max(t.power for t in e.terms) == 1


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_moyal_identity_random(seed):
    rng = np.random.default_rng(seed)
    g = TorusGrid(2, 128)
    p, q = random_symbol(rng, 2, 2, 2, 3), random_symbol(rng, 2, 2, 2, 3)
    u = gaussian_packet(g, rng.integers(-6, 7, 2), 0.4)
    h = 0.125
    lhs = apply_operator(p, apply_operator(q, u, h), h)
    rhs = apply_expansion(moyal_compose(p, q), u, h)
    assert (lhs - rhs).norm() <= 1e-8 * max(lhs.norm(), u.norm())


def test_canonical_commutator():
    g = TorusGrid(1, 256)
    u = gaussian_packet(g, (10,), 0.4)
    for h in (0.5, 0.1, 1 / 32):
        assert abs(commutator_defect(Symbol.xi_var(1, 0), Symbol.x_var(1, 0), u, h) - h) <= 1e-12
    v = make_plane_wave(TorusGrid(2, 32), (3, 1))
    assert commutator_defect(Symbol.laplace(2), parse_symbol("xi1^3 - xi2", 2), v, 0.2) <= 1e-12


def _localized_cluster(lam):
    g = TorusGrid.for_frequency(2, lam, 8, 1024)
    return localize(make_cluster(g, lam, 1.0), x_width=1.0)


def test_h_sweeps_on_clusters():
    p, q = Symbol.laplace(2), parse_symbol("x2^2*xi1", 2)
    pe = parse_symbol("(2 + x1^2)*(|xi|^2 + 1)", 2)
    com, par = [], []
    for lam in (16, 32, 64, 128, 256):
        u = _localized_cluster(lam)
        com.append((np.log(lam), np.log(commutator_defect(p, q, u, 1 / lam))))
        par.append((np.log(lam), np.log(parametrix_residual(pe, u, 1 / lam, 1.0))))
    assert fit_exponent(com)[0] <= -0.9
    assert fit_exponent(par)[0] <= -0.9


def test_parametrix_exact_for_multiplier(rng):
    g = TorusGrid(2, 64)
    u = random_function(g, rng)
    assert parametrix_residual(parse_symbol("|xi|^2 + 1", 2), u, 0.1, 0.5) <= 1e-10


def test_parametrix_rejects_characteristic_set():
    g = TorusGrid(2, 64)
    with pytest.raises(EllipticityError):
        parametrix_residual(Symbol.laplace(2), make_cluster(g, 5, 1.0), 0.2, 0.01)


@pytest.mark.parametrize("n,N", [(1, 16), (2, 8), (3, 4)])
def test_binary_roundtrip(n, N, rng):
    g = TorusGrid(n, N)
    u = GridFunction(g, rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape))
    buf = io.BytesIO()
    write_grid_function(buf, u, 0.125)
    raw = buf.getvalue()
    assert len(raw) == 24 + 16 * g.size
    assert np.frombuffer(raw[:16], "<i8").tolist() == [n, N]
    buf.seek(0)
    v, h = read_grid_function(buf)
    assert h == 0.125 and np.array_equal(v.values, u.values)
    with pytest.raises(ValueError):
        read_grid_function(io.BytesIO(raw[:-8]))
