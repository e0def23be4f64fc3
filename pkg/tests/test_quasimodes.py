import math
from itertools import product

import numpy as np
import pytest

from qmlab.errors import AliasingError, EmptyWindowError
from qmlab.quantization import TorusGrid, apply_operator
from qmlab.quasimodes import (QuasimodeSpec, annulus_window, build, defect_report, knapp_window, localize,
                              make_cluster, make_knapp, make_plane_wave, make_tensor_joint, occupied_frequencies,
                              plateau, synthesize)
from qmlab.symbols import Symbol


def enumerate_annulus(n, lam, W):
    R = int(lam)
    return [k for k in product(range(-R, R + 1), repeat=n) if (lam - W) ** 2 <= sum(v * v for v in k) <= lam**2]


def test_cluster_count_matches_enumeration():
    pts = enumerate_annulus(2, 5, 1)
    assert len(pts) == 36
    shells = {}
    for k in pts:
        shells[k[0] ** 2 + k[1] ** 2] = shells.get(k[0] ** 2 + k[1] ** 2, 0) + 1
    assert shells == {16: 4, 17: 8, 18: 4, 20: 8, 25: 12}
    win = annulus_window(2, 5, 1)
    assert sorted(map(tuple, win.points.tolist())) == sorted(pts)
    g = TorusGrid(2, 64)
    u = make_cluster(g, 5, 1)
    assert abs(u.values[32, 32] - 36) < 1e-10  # x = 0 sits at index N/2
    assert abs(u.norm() ** 2 - (2 * np.pi) ** 2 * 36) < 1e-8


def test_cluster_exact_shell_only():
    assert len(annulus_window(2, 5, 1e-3)) == 12


def test_cluster_phase_center():
    g = TorusGrid(2, 64)
    x0 = (g.axis()[40], g.axis()[20])
    u = make_cluster(g, 7, 1.5, x0)
    assert abs(np.abs(u.values).max() - len(annulus_window(2, 7, 1.5))) < 1e-9
    assert np.unravel_index(np.argmax(np.abs(u.values)), g.shape) == (40, 20)


def test_empty_windows():
    with pytest.raises(EmptyWindowError):
        annulus_window(2, 1.2, 0.1)
    with pytest.raises(EmptyWindowError):
        make_cluster(TorusGrid(2, 16), 1.2, 0.1)


def test_knapp_cap():
    lam = 100
    win = knapp_window(2, lam)
    brute = [(a, b) for a in range(90, 101) for b in range(-10, 11)
             if lam - 1 < a <= lam and abs(b) <= math.sqrt(lam) and (lam - 1) ** 2 <= a * a + b * b <= (lam + 1) ** 2]
    assert sorted(map(tuple, win.points.tolist())) == sorted(brute)
    assert math.sqrt(lam) <= len(win) <= 4 * math.sqrt(lam)
    h = 1 / lam
    g = TorusGrid(2, 512)
    rep = defect_report([Symbol.laplace(2)], make_knapp(g, lam), h, 1)
    oracle = max(abs(h * h * (a * a + b * b) - 1) for a, b in brute)
    assert abs(rep.window_entries[(1,)] - oracle) < 1e-12
    assert oracle <= 3 / lam + 2 / lam**2


def test_plane_wave_eigenfunction_defects():
    g = TorusGrid(2, 32)
    rep = defect_report([Symbol.laplace(2)], make_plane_wave(g, (3, 4)), 0.2, 3)
    assert rep.entries[(0,)] == 1.0
    assert all(v <= 1e-12 for k, v in rep.entries.items() if k != (0,))


def test_defect_report_lambda5_oracle():
    g = TorusGrid(2, 64)
    u = make_cluster(g, 5, 1)
    rep = defect_report([Symbol.laplace(2)], u, 0.2, 3)
    pts = enumerate_annulus(2, 5, 1)
    for k in (1, 2, 3):
        oracle = max(abs(sum(v * v for v in p) / 25 - 1) ** k for p in pts)
        assert abs(rep.window_entries[(k,)] - oracle) <= 1e-12
        # L2 entry from the brute-force frequency sum
        l2 = math.sqrt(sum((sum(v * v for v in p) / 25 - 1) ** (2 * k) for p in pts) / len(pts))
        assert abs(rep.entries[(k,)] - l2) <= 1e-10
        assert rep.entries[(k,)] <= rep.window_entries[(k,)]
    assert abs(rep.window_entries[(1,)] - 9 / 25) <= 1e-12
    assert abs(rep.window_entries[(2,)] - (9 / 25) ** 2) <= 1e-12
    assert rep.normalized[(1,)] == pytest.approx(rep.entries[(1,)] / 0.2)


@pytest.mark.parametrize("lam", [8, 16, 32])
def test_strong_quasimode_inequality(lam):
    W, h = 1.0, 1 / lam
    g = TorusGrid.for_frequency(2, lam)
    rep = defect_report([Symbol.laplace(2)], make_cluster(g, lam, W), h, 3)
    for k in (1, 2, 3):
        assert rep.window_entries[(k,)] <= (2 * W * h + (W * h) ** 2) ** k
        assert rep.entries[(k,)] <= (2 * W * h + (W * h) ** 2) ** k


def test_tensor_joint_zero_defects():
    g = TorusGrid(3, 128)
    lam = 16
    u = make_tensor_joint(g, 2, lam)
    assert apply_operator(Symbol.xi_var(3, 1), u, 1 / lam).norm() <= 1e-12 * u.norm()
    assert np.allclose(u.values, u.values[:, :1, :])  # independent of x_2
    bound = 2 / lam + 1 / lam**2
    assert defect_report([Symbol.laplace(3)], u, 1 / lam, 1).entries[(1,)] <= bound
    u3 = make_tensor_joint(TorusGrid(3, 64), 3, 8)
    for i in (1, 2):
        assert apply_operator(Symbol.xi_var(3, i), u3, 1 / 8).norm() == 0
    rep = defect_report([Symbol.laplace(3), Symbol.xi_var(3, 1)], u, 1 / lam, 2)
    assert rep.entries[(0, 1)] == 0 and rep.entries[(1, 1)] == 0
    with pytest.raises(ValueError):
        make_tensor_joint(g, 1, lam)
    with pytest.raises(ValueError):
        make_tensor_joint(g, 4, lam)


def test_joint_ordering_outermost_first():
    # P1 = x1 (multiplication), P2 = xi1: entry (1,1) is ||x1 hD1 u||, not ||hD1 x1 u||
    g = TorusGrid(1, 256)
    from qmlab.quasimodes import gaussian_packet
    u = gaussian_packet(g, (12,), 0.4)
    h = 1 / 12
    p1, p2 = Symbol.x_var(1, 0), Symbol.xi_var(1, 0)
    rep = defect_report([p1, p2], u, h, 2)
    expect = apply_operator(p1, apply_operator(p2, u, h), h).norm() / u.norm()
    assert abs(rep.entries[(1, 1)] - expect) <= 1e-13


def test_headroom_enforced():
    with pytest.raises(AliasingError):
        make_cluster(TorusGrid(2, 32), 12, 1)


def test_localize_identity_and_disjoint():
    lam = 16
    g = TorusGrid(2, 256)
    u = make_cluster(g, lam, 1)
    h = 1 / lam
    same = localize(u, x_width=None, xi_center=(0, 0), xi_width=1.1, h=h)
    assert (same - u).norm() <= 1e-10 * u.norm()
    off = localize(u, x_width=None, xi_center=(2.0, 0), xi_width=0.3, h=h)
    assert off.norm() <= 1e-8 * u.norm()
    # transition band (w, 2w) = (h, 2h) falls strictly between lattice frequencies
    once = localize(u, x_width=None, xi_center=(1.0, 0), xi_width=h, h=h)
    twice = localize(once, x_width=None, xi_center=(1.0, 0), xi_width=h, h=h)
    assert once.norm() > 0.1 * u.norm() / np.sqrt(len(annulus_window(2, lam, 1)))
    assert (twice - once).norm() <= 1e-10 * once.norm()
    with pytest.raises(AliasingError):
        localize(u, x_width=None, xi_center=(0, 0), xi_width=3.0, h=h)
    with pytest.raises(ValueError):
        localize(u, x_width=-1.0)


def test_plateau_profile():
    t = np.linspace(-3, 3, 601)
    v = plateau(t)
    assert np.all(v[np.abs(t) <= 1] == 1) and np.all(v[np.abs(t) >= 2] == 0)
    assert np.all((v >= 0) & (v <= 1))


def test_localized_cluster_defect_ratio():
    for lam in (32, 64):
        g = TorusGrid(2, 1024)
        spec = QuasimodeSpec("localized", lam)
        u = build(spec, g, x_width=1.0)
        base = make_cluster(g, lam, 1.0)
        d_loc = defect_report([Symbol.laplace(2)], u, spec.h, 1).entries[(1,)]
        d_raw = defect_report([Symbol.laplace(2)], base, spec.h, 1).entries[(1,)]
        assert d_loc <= 10 * d_raw


def test_perturbed_cluster_is_not_strong():
    # v = u + h f with f off the characteristic set: order-h quasimode whose
    # second defect stalls at order h instead of improving to h^2
    ratios_u, ratios_v = [], []
    for lam in (16, 32, 64):
        g = TorusGrid.for_frequency(2, lam)
        h = 1 / lam
        u = make_cluster(g, lam, 1.0)
        f = make_plane_wave(g, (lam // 2, 0)) * (u.norm() / (2 * np.pi))
        v = u + f * h
        ru = defect_report([Symbol.laplace(2)], u, h, 2)
        rv = defect_report([Symbol.laplace(2)], v, h, 2)
        assert rv.entries[(1,)] <= 5 * h
        ratios_u.append(ru.normalized[(2,)])
        ratios_v.append(rv.normalized[(2,)])
    assert max(ratios_u) <= 4.5
    assert ratios_v[-1] > 2 * ratios_v[0] and ratios_v[-1] > 10


def test_occupied_frequencies():
    g = TorusGrid(2, 32)
    u = synthesize(g, annulus_window(2, 3, 0.5))
    occ = {tuple(k) for k in occupied_frequencies(u).tolist()}
    assert occ == {tuple(k) for k in annulus_window(2, 3, 0.5).points.tolist()}
