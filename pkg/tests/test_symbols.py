import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmlab.errors import DimensionError, SingularTransformError, SymbolSyntaxError
from qmlab.symbols import (PhasePoint, Symbol, check_admissibility, eval_symbol, grad_xi, hess_xi,
                           linear_change_xi, parse_symbol, second_fundamental_form)

from conftest import random_symbol


def test_eval_values():
    p = Symbol.laplace(3)
    assert eval_symbol(p, PhasePoint([0, 0, 0], [1, 0, 0])) == 0.0
    q = parse_symbol("xi1 + xi2 - xi3 + x2^2", 3)
    assert eval_symbol(q, PhasePoint([0, 0, 0], [1, 0, 0])) == 1.0


def test_gradients_on_example():
    pt = PhasePoint([0, 0, 0], [1, 0, 0])
    np.testing.assert_allclose(grad_xi(Symbol.laplace(3), pt), [2, 0, 0])
    np.testing.assert_allclose(grad_xi(parse_symbol("xi1 + xi2 - xi3 + x2^2"), pt), [1, 1, -1])
    np.testing.assert_allclose(hess_xi(Symbol.laplace(3), pt), 2 * np.eye(3))


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        eval_symbol(Symbol.laplace(3), PhasePoint([0, 0], [1, 0]))
    with pytest.raises(DimensionError):
        Symbol.laplace(2) + Symbol.laplace(3)


@pytest.mark.parametrize("text,pos", [("xi1 +* xi2", 5), ("xi1^^2", 4), ("(xi1 + 2", 8), ("xi0", 0), ("xi1 $", 4)])
def test_parse_errors_carry_position(text, pos):
    with pytest.raises(SymbolSyntaxError) as e:
        parse_symbol(text)
    assert e.value.position == pos


def test_parse_roundtrip(rng):
    for _ in range(20):
        s = random_symbol(rng, 3)
        assert parse_symbol(str(s), 3).allclose(s)
    assert parse_symbol("|xi|^2 - 1", 2) == Symbol.laplace(2)
    assert parse_symbol("(xi1 + x1)^2", 1) == parse_symbol("xi1^2 + 2*x1*xi1 + x1^2", 1)


def test_linear_change_example():
    p2 = parse_symbol("xi1 + xi2 - xi3 + x2^2", 3)
    C = [[1, 0, 0], [0, 1, 1], [0, -1, 1]]
    assert linear_change_xi(p2, C).allclose(parse_symbol("xi1 + 2*xi2 + x2^2", 3))


def test_singular_change_rejected():
    with pytest.raises(SingularTransformError):
        linear_change_xi(Symbol.laplace(2), [[1, 1], [1, 1]])


def _fd_grad(s, x, xi, eps=1e-5):
    g = np.zeros(len(xi))
    for i in range(len(xi)):
        e = np.zeros(len(xi))
        e[i] = eps
        g[i] = (s(x, xi + e) - s(x, xi - e)) / (2 * eps)
    return g


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_gradient_hessian_vs_finite_differences(seed, n):
    rng = np.random.default_rng(seed)
    s = random_symbol(rng, n, 2, 3, 4)
    x, xi = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
    pt = PhasePoint(x, xi)
    np.testing.assert_allclose(grad_xi(s, pt), _fd_grad(s, x, xi), atol=1e-7)
    H = np.zeros((n, n))
    eps = 1e-4
    for j in range(n):
        e = np.zeros(n)
        e[j] = eps
        H[:, j] = (grad_xi(s, PhasePoint(x, xi + e)) - grad_xi(s, PhasePoint(x, xi - e))) / (2 * eps)
    np.testing.assert_allclose(hess_xi(s, pt), H, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_orthogonal_change_roundtrip(seed, n):
    rng = np.random.default_rng(seed)
    s = random_symbol(rng, n, 2, 3, 4)
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    back = linear_change_xi(linear_change_xi(s, Q), Q.T)
    assert back.allclose(s, atol=1e-10)
    x, xi = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
    assert math.isclose(linear_change_xi(s, Q)(x, xi), s(x, Q @ xi), abs_tol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_sphere_second_fundamental_form(n):
    xi = np.zeros(n)
    xi[0] = 1
    np.testing.assert_allclose(second_fundamental_form(Symbol.laplace(n), PhasePoint(np.zeros(n), xi)), np.ones(n - 1),
                               atol=1e-12)


def test_admissibility_model_pair():
    rep = check_admissibility([Symbol.laplace(3), Symbol.xi_var(3, 1)], PhasePoint([0] * 3, [1, 0, 0]))
    assert rep.passes == (True, True, True)
    np.testing.assert_allclose(rep.gradient_norms, [2, 1])
    assert abs(rep.normal_matrix_min_singular_value - 1) < 1e-12
    assert rep.admissible


def test_admissibility_failures():
    rep = check_admissibility([Symbol.laplace(2), Symbol.xi_var(2, 0)], PhasePoint([0, 0], [1, 0]))
    assert rep.passes[1] is False
    rep = check_admissibility([parse_symbol("xi2^2", 2)], PhasePoint([0, 0], [1, 0]))
    assert rep.passes[0] is False
    # reversed orientation of |xi|^2 - 1 is still curved after sign normalisation
    rep = check_admissibility([-Symbol.laplace(3)], PhasePoint([0] * 3, [1, 0, 0]))
    assert rep.passes == (True, True, True)
    rep = check_admissibility([parse_symbol("xi1 - 1", 2)], PhasePoint([0, 0], [1, 0]))
    assert rep.passes[2] is False


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_admissibility_invariance(seed, c):
    rng = np.random.default_rng(seed)
    n = 3
    syms = [Symbol.laplace(n), parse_symbol("xi2 + 0.3*xi3 + x1^2", n)]
    pt = PhasePoint(rng.uniform(-0.2, 0.2, n) * [0, 1, 1], [1, 0, 0])
    a = check_admissibility(syms, pt)
    scaled = check_admissibility([s * c for s in syms], pt)
    assert a.passes == scaled.passes
    relabel = check_admissibility([syms[0], syms[1] * (-c)], pt)
    assert a.passes == relabel.passes
    np.testing.assert_allclose(a.second_fundamental_form_eigenvalues, scaled.second_fundamental_form_eigenvalues,
                               atol=1e-10)


def test_too_many_symbols():
    with pytest.raises(ValueError):
        check_admissibility([Symbol.laplace(2)] * 3, PhasePoint([0, 0], [1, 0]))
