"""Joint quasimode families on the torus and their defect reports.

All constructors tie the semiclassical parameter to the frequency scale by
h = 1 / lam.  Functions are synthesised from explicit lattice windows so the
frequency support is known exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from .errors import AliasingError, DimensionError, EmptyWindowError
from .quantization import GridFunction, TorusGrid, _check_aliasing, apply_operator
from .symbols import Symbol

KINDS = ("plane_wave", "cluster", "knapp", "tensor_joint", "localized")


@dataclass(frozen=True, eq=False)
class LatticeWindow:
    points: np.ndarray  # (M, n) integer lattice points
    rule: str

    def __post_init__(self):
        if len(self.points) == 0:
            raise EmptyWindowError(f"lattice window '{self.rule}' is empty")

    def __len__(self):
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def max_abs(self) -> int:
        return int(np.abs(self.points).max())


@dataclass(frozen=True)
class QuasimodeSpec:
    kind: str
    lam: float
    W: float = 1.0
    r: int = 1
    inner_kind: str = "cluster"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown quasimode kind {self.kind!r}")
        if self.lam < 1:
            raise ValueError("lam must be >= 1")
        if self.W <= 0:
            raise ValueError("W must be positive")
        if self.kind == "tensor_joint" and self.inner_kind not in ("cluster", "knapp"):
            raise ValueError("inner kind must be 'cluster' or 'knapp'")

    @property
    def h(self) -> float:
        return 1.0 / self.lam


def _box(dim: int, radius: float) -> np.ndarray:
    R = int(math.floor(radius))
    axis = np.arange(-R, R + 1)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def annulus_window(dim: int, lam: float, W: float) -> LatticeWindow:
    """Lattice points with lam - W <= |k| <= lam (squared-norm comparison, exact)."""
    pts = _box(dim, lam)
    r2 = np.sum(pts.astype(np.int64) ** 2, axis=1)
    lo = max(lam - W, 0.0)
    keep = (r2 <= lam * lam + 1e-9) & (r2 >= lo * lo - 1e-9)
    return LatticeWindow(pts[keep], f"annulus [{lo:g}, {lam:g}]")


def knapp_window(dim: int, lam: float) -> LatticeWindow:
    """lam x sqrt(lam) cap around lam * e_1: k_1 in (lam-1, lam], |k_j| <= sqrt(lam)."""
    if dim == 1:
        k1 = np.arange(math.floor(lam - 1) + 1, math.floor(lam) + 1)
        return LatticeWindow(k1.reshape(-1, 1), f"cap lam={lam:g}")
    k1 = np.arange(math.floor(lam - 1) + 1, math.floor(lam) + 1)
    side = _box(dim - 1, math.sqrt(lam))
    pts = np.array([[a, *s] for a in k1 for s in side], dtype=np.int64).reshape(-1, dim)
    r2 = np.sum(pts**2, axis=1)
    keep = (r2 >= (lam - 1) ** 2 - 1e-9) & (r2 <= (lam + 1) ** 2 + 1e-9)
    return LatticeWindow(pts[keep], f"cap lam={lam:g}")


def _check_headroom(grid: TorusGrid, kmax: float):
    if 2 * kmax > grid.N // 2:
        raise AliasingError(f"frequency {kmax:g} lacks 2x headroom on N={grid.N}")


def synthesize(grid: TorusGrid, window: LatticeWindow, coeffs=None) -> GridFunction:
    """u(x) = sum_k c_k exp(i <k, x>) over the window (default c_k = 1)."""
    if window.dim != grid.dim:
        raise DimensionError("window and grid dimensions differ")
    _check_headroom(grid, window.max_abs())
    A = np.zeros(grid.shape, dtype=complex)
    c = np.ones(len(window)) if coeffs is None else np.asarray(coeffs, dtype=complex)
    idx = tuple((window.points % grid.N).T)
    sign = np.where(np.sum(window.points, axis=1) % 2 == 0, 1.0, -1.0)
    np.add.at(A, idx, c * sign)
    return GridFunction(grid, sfft.ifftn(A) * grid.size)


def make_plane_wave(grid: TorusGrid, k) -> GridFunction:
    k = np.asarray(k, dtype=np.int64).reshape(1, -1)
    return synthesize(grid, LatticeWindow(k, "explicit"))


def make_cluster(grid: TorusGrid, lam: float, W: float = 1.0, x0=None) -> GridFunction:
    """Sum of exp(i <k, x - x0>) over the annulus lam - W <= |k| <= lam."""
    win = annulus_window(grid.dim, lam, W)
    x0 = np.zeros(grid.dim) if x0 is None else np.asarray(x0, dtype=float)
    return synthesize(grid, win, np.exp(-1j * win.points @ x0))


def make_knapp(grid: TorusGrid, lam: float) -> GridFunction:
    return synthesize(grid, knapp_window(grid.dim, lam))


def tensor_window(dim: int, r: int, lam: float, W: float = 1.0, inner_kind: str = "cluster") -> LatticeWindow:
    """Embed an (n - r + 1)-dimensional window into axes (1, r+1, ..., n)."""
    if not 2 <= r <= dim:
        raise ValueError(f"tensor rank r={r} must satisfy 2 <= r <= n={dim}")
    m = dim - r + 1
    if inner_kind == "cluster":
        inner = annulus_window(m, lam, W)
    elif inner_kind == "knapp":
        inner = knapp_window(m, lam)
    else:
        raise ValueError("inner kind must be 'cluster' or 'knapp'")
    pts = np.zeros((len(inner), dim), dtype=np.int64)
    pts[:, 0] = inner.points[:, 0]
    pts[:, r:] = inner.points[:, 1:]
    return LatticeWindow(pts, f"tensor r={r} of {inner.rule}")


def make_tensor_joint(grid: TorusGrid, r: int, lam: float, inner_kind: str = "cluster", W: float = 1.0) -> GridFunction:
    """Function of (x_1, x_{r+1}, ..., x_n) only; exact zero mode of xi_2..xi_r."""
    return synthesize(grid, tensor_window(grid.dim, r, lam, W, inner_kind))


def window_for(spec: QuasimodeSpec, dim: int) -> LatticeWindow:
    if spec.kind == "cluster":
        return annulus_window(dim, spec.lam, spec.W)
    if spec.kind == "knapp":
        return knapp_window(dim, spec.lam)
    if spec.kind == "tensor_joint":
        return tensor_window(dim, spec.r, spec.lam, spec.W, spec.inner_kind)
    if spec.kind == "plane_wave":
        k = np.zeros((1, dim), dtype=np.int64)
        k[0, 0] = round(spec.lam)
        return LatticeWindow(k, "explicit")
    raise ValueError(f"no lattice window for kind {spec.kind!r}")


def build(spec: QuasimodeSpec, grid: TorusGrid, **localize_kw) -> GridFunction:
    """Construct the quasimode described by ``spec`` on ``grid``."""
    if spec.kind == "localized":
        base = make_cluster(grid, spec.lam, spec.W)
        return localize(base, h=spec.h, **localize_kw)
    return synthesize(grid, window_for(spec, grid.dim))


# ---------------------------------------------------------------------------
# defects


@dataclass(frozen=True)
class DefectReport:
    """Quasimode defects ``||P_1^{k_1} ... P_r^{k_r} u|| / ||u||``.

    ``window_entries`` (x-independent symbols only) hold the supremum of
    ``prod |p_j(h k)|^{k_j}`` over the occupied lattice frequencies, the
    bound that holds uniformly for every function with that support.
    """

    kmax: int
    h: float
    entries: dict[tuple[int, ...], float]
    window_entries: dict[tuple[int, ...], float] | None = None
    normalized: dict[tuple[int, ...], float] = field(default_factory=dict)

    def order(self, k) -> float:
        return self.entries[tuple(k)]


def _multi(r: int, kmax: int):
    for k in product(range(kmax + 1), repeat=r):
        if sum(k) <= kmax:
            yield k


def occupied_frequencies(u: GridFunction, rel: float = 1e-10) -> np.ndarray:
    """Integer lattice points where |u_hat| exceeds ``rel`` times its maximum."""
    uh = np.abs(sfft.fftn(u.values))
    idx = np.argwhere(uh > rel * uh.max())
    N = u.grid.N
    return np.where(idx >= N // 2, idx - N, idx)


def defect_report(syms: Sequence[Symbol], u: GridFunction, h: float, kmax: int) -> DefectReport:
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    r = len(syms)
    if any(s.dim != u.grid.dim for s in syms):
        raise DimensionError("symbol and grid dimensions differ")
    _check_aliasing(sfft.fftn(u.values), u.grid)
    base = u.norm()
    # cache[k] = P_1^{k_1} ... P_r^{k_r} u, built by applying the innermost factors first
    cache: dict[tuple[int, ...], GridFunction] = {(0,) * r: u}
    entries = {}
    for k in sorted(_multi(r, kmax), key=lambda t: (sum(t), tuple(-v for v in t))):
        if k not in cache:
            # outermost nonzero factor is the lowest index j with k_j > 0
            j = next(i for i, v in enumerate(k) if v)
            prev = list(k)
            prev[j] -= 1
            cache[k] = apply_operator(syms[j], cache[tuple(prev)], h)
        entries[k] = cache[k].norm() / base
    window = None
    if all(s.is_x_independent() for s in syms):
        occ = occupied_frequencies(u).astype(float) * h
        cols = [occ[:, d] for d in range(u.grid.dim)]
        zero = [0.0] * u.grid.dim
        vals = [np.abs(np.broadcast_to(s(zero, cols), (len(occ),))) for s in syms]
        window = {k: float(np.max(np.prod([v**e for v, e in zip(vals, k)], axis=0))) for k in entries}
    normalized = {k: v / h ** sum(k) for k, v in entries.items()}
    return DefectReport(kmax, h, entries, window, normalized)


# ---------------------------------------------------------------------------
# localisation


def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1, built from exp(-1/t)."""
    s = np.asarray(s, dtype=float)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def plateau(t):
    """1 on |t| <= 1, smooth decay on 1 < |t| < 2, 0 for |t| >= 2."""
    return smooth_step(2.0 - np.abs(np.asarray(t, dtype=float)))


def localize(u: GridFunction, x_width: float | None = 1.0, xi_center=None, xi_width: float | None = None,
             h: float = 1.0, x_center=None) -> GridFunction:
    """Apply chi(x, hD) = chi_x(x) chi_xi(hD) with product plateau cutoffs.

    The frequency cutoff (centre ``xi_center``, core half-width ``xi_width``)
    acts first as a multiplier, then the spatial cutoff of core half-width
    ``x_width`` around ``x_center``.  ``None`` skips the respective factor.
    """
    g = u.grid
    vals = u.values
    if xi_width is not None:
        if xi_width <= 0:
            raise ValueError("xi_width must be positive")
        c = np.zeros(g.dim) if xi_center is None else np.asarray(xi_center, dtype=float)
        reach = (np.abs(c).max() + 2 * xi_width) / h
        if 2 * reach > g.N // 2:
            raise AliasingError("frequency cutoff exceeds the grid's Nyquist headroom")
        mult = 1.0
        for ci, k in zip(c, g.wavenumbers()):
            mult = mult * plateau((h * k - ci) / xi_width)
        vals = sfft.ifftn(sfft.fftn(vals) * mult)
    if x_width is not None:
        if x_width <= 0:
            raise ValueError("x_width must be positive")
        xc = np.zeros(g.dim) if x_center is None else np.asarray(x_center, dtype=float)
        if np.any(np.abs(xc) + 2 * x_width > np.pi):
            raise ValueError("spatial cutoff leaves the fundamental domain")
        chi = 1.0
        for ci, x in zip(xc, g.coords()):
            chi = chi * plateau((x - ci) / x_width)
        vals = vals * chi
    return GridFunction(g, vals)


def gaussian_packet(grid: TorusGrid, k, width: float = 0.4, x0=None) -> GridFunction:
    """Coherent state exp(-|x - x0|^2 / 2 width^2 + i <k, x>).

    Decays below round-off at the domain boundary for width <= 0.4, so
    x-dependent symbols act on it without boundary artefacts.
    """
    k = np.asarray(k, dtype=float)
    x0 = np.zeros(grid.dim) if x0 is None else np.asarray(x0, dtype=float)
    _check_headroom(grid, np.abs(k).max() + 6.0 / width)
    x = grid.coords()
    r2 = sum((xi - c) ** 2 for xi, c in zip(x, x0))
    phase = sum(kk * xi for kk, xi in zip(k, x))
    return GridFunction(grid, np.broadcast_to(np.exp(-r2 / (2 * width**2) + 1j * phase), grid.shape))
