"""Left quantization p(x, hD) on the flat torus [-pi, pi)^n.

Grid functions are sampled at x_j = -pi + 2 pi j / N along every axis.  The
operator attached to a polynomial symbol ``sum c_{beta,alpha} x^beta xi^alpha``
acts as ``sum c x^beta (hD)^alpha`` with ``D = -i d/dx``: derivatives are
Fourier multipliers by ``(h k)^alpha`` and the x-coefficients multiply
pointwise afterwards (Kohn-Nirenberg ordering).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from itertools import product
from typing import BinaryIO, Callable

import numpy as np
import scipy.fft as sfft

from .errors import AliasingError, DimensionError, EllipticityError, QmlabError
from .symbols import Symbol

# Relative amplitude allowed at the Nyquist index before a function is
# considered under-resolved.
NYQUIST_TOL = 1e-8


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    N: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if self.N < 4 or self.N & (self.N - 1):
            raise ValueError(f"points per axis must be a power of two >= 4, got {self.N}")

    @property
    def spacing(self) -> float:
        return 2 * math.pi / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    @property
    def size(self) -> int:
        return self.N**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    def axis(self) -> np.ndarray:
        return -math.pi + self.spacing * np.arange(self.N)

    def coords(self) -> list[np.ndarray]:
        """Open-mesh coordinate arrays, one per axis, broadcastable to ``shape``."""
        ax = self.axis()
        out = []
        for i in range(self.dim):
            s = [1] * self.dim
            s[i] = self.N
            out.append(ax.reshape(s))
        return out

    def wavenumbers(self) -> list[np.ndarray]:
        """Integer lattice frequencies in FFT order, broadcastable to ``shape``."""
        k = np.fft.fftfreq(self.N, 1.0 / self.N).round().astype(np.int64)
        out = []
        for i in range(self.dim):
            s = [1] * self.dim
            s[i] = self.N
            out.append(k.reshape(s))
        return out

    def index_of(self, k) -> tuple[int, ...]:
        """Array index of lattice frequency ``k`` (FFT order)."""
        k = tuple(int(v) for v in k)
        if len(k) != self.dim:
            raise DimensionError("frequency vector has wrong length")
        half = self.N // 2
        if any(not -half <= v < half for v in k):
            raise AliasingError(f"frequency {k} outside lattice range [-{half}, {half})")
        return tuple(v % self.N for v in k)

    @classmethod
    def for_frequency(cls, dim: int, kmax: float, headroom: float = 8.0, minimum: int = 8) -> "TorusGrid":
        """Smallest power-of-two grid with N >= headroom * kmax."""
        N = max(minimum, 1 << max(2, math.ceil(math.log2(max(headroom * kmax, 1.0)))))
        return cls(dim, N)


class GridFunction:
    """Complex samples of a function on a :class:`TorusGrid`."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: TorusGrid, values):
        v = np.asarray(values, dtype=complex)
        if v.size != grid.size:
            raise DimensionError(f"expected {grid.size} values, got {v.size}")
        v = v.reshape(grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        self.grid = grid
        self.values = v

    @classmethod
    def from_callable(cls, grid: TorusGrid, f: Callable) -> "GridFunction":
        return cls(grid, np.broadcast_to(f(*grid.coords()), grid.shape))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.values, self.values).real * self.grid.cell_volume))

    def _wrap(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise DimensionError("grid mismatch")
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._wrap(other))

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._wrap(other))

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * self._wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return GridFunction(self.grid, self.values / c)

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __repr__(self):
        return f"GridFunction(dim={self.grid.dim}, N={self.grid.N}, norm={self.norm():.6g})"


@dataclass(frozen=True, eq=False)
class FrequencyFunction:
    """Lattice coefficients of a grid function (FFT ordering).

    ``coeffs[k]`` sits at semiclassical frequency ``xi = h k``.  The scaling
    makes ``sum |coeffs|^2`` equal to the squared grid L2 norm.
    """

    grid: TorusGrid
    h: float
    coeffs: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.coeffs, self.coeffs).real))

    def xi(self) -> list[np.ndarray]:
        return [self.h * k for k in self.grid.wavenumbers()]

    def at(self, k) -> complex:
        return complex(self.coeffs[self.grid.index_of(k)])


def _phase(grid: TorusGrid) -> np.ndarray:
    # (-1)^k accounts for the grid starting at -pi.
    out = np.ones(grid.shape)
    for k in grid.wavenumbers():
        out = out * np.where(k % 2 == 0, 1.0, -1.0)
    return out


def _fourier_scale(grid: TorusGrid) -> float:
    return (2 * math.pi) ** (grid.dim / 2) / grid.size


def semiclassical_fourier(u: GridFunction, h: float) -> FrequencyFunction:
    """Discrete, norm-preserving semiclassical Fourier transform."""
    if not 0 < h <= 1:
        raise ValueError("h must lie in (0, 1]")
    g = u.grid
    c = sfft.fftn(u.values) * _phase(g) * _fourier_scale(g)
    return FrequencyFunction(g, float(h), c)


def inverse_semiclassical_fourier(F: FrequencyFunction) -> GridFunction:
    g = F.grid
    return GridFunction(g, sfft.ifftn(F.coeffs * _phase(g) / _fourier_scale(g)))


def nyquist_fraction(values_hat: np.ndarray, grid: TorusGrid) -> float:
    """Relative L2 amplitude carried by lattice frequencies with some k_i = -N/2."""
    total = np.vdot(values_hat, values_hat).real
    if total == 0:
        return 0.0
    mask = np.zeros(grid.shape, dtype=bool)
    for k in grid.wavenumbers():
        mask |= np.broadcast_to(k == -(grid.N // 2), grid.shape)
    return float(np.sqrt(np.sum(np.abs(values_hat[mask]) ** 2) / total))


def _check_aliasing(uh: np.ndarray, grid: TorusGrid):
    frac = nyquist_fraction(uh, grid)
    if frac > NYQUIST_TOL:
        raise AliasingError(f"function carries relative amplitude {frac:.3g} at the Nyquist frequency")


def _check_h(h):
    if not 0 < h <= 1:
        raise ValueError("h must lie in (0, 1]")


def _monomial_multiplier(alpha, grid: TorusGrid, h: float):
    m = 1.0
    for k, a in zip(grid.wavenumbers(), alpha):
        if a:
            m = m * (h * k.astype(float)) ** a
    return m


def apply_operator(sym: Symbol, u: GridFunction, h: float) -> GridFunction:
    """Apply the left quantization ``sym(x, hD)`` to ``u``."""
    _check_h(h)
    g = u.grid
    if sym.dim != g.dim:
        raise DimensionError(f"symbol dimension {sym.dim} != grid dimension {g.dim}")
    uh = sfft.fftn(u.values)
    _check_aliasing(uh, g)
    return GridFunction(g, _apply_hat(sym, uh, g, h))


def _apply_hat(sym: Symbol, uh: np.ndarray, g: TorusGrid, h: float) -> np.ndarray:
    if sym.is_zero():
        return np.zeros(g.shape, dtype=complex)
    groups = sym.x_coefficients()
    if sym.is_x_independent():
        mult = sum(c.terms[((0,) * g.dim,) * 2] * _monomial_multiplier(a, g, h) for a, c in groups.items())
        return sfft.ifftn(uh * mult)
    x = g.coords()
    out = np.zeros(g.shape, dtype=complex)
    for alpha, coef in groups.items():
        if any(alpha):
            v = sfft.ifftn(uh * _monomial_multiplier(alpha, g, h))
        else:
            v = sfft.ifftn(uh)
        out += coef(x, x) * v
    return out


# ---------------------------------------------------------------------------
# composition


@dataclass(frozen=True)
class MoyalTerm:
    """``h^power * (real + i imag)`` contribution to a composed symbol."""

    power: int
    real: Symbol
    imag: Symbol


@dataclass(frozen=True)
class MoyalExpansion:
    terms: tuple[MoyalTerm, ...]
    termination_degree: int
    truncated: bool


def _multi_indices(n: int, k: int):
    for alpha in product(range(k + 1), repeat=n):
        if sum(alpha) == k:
            yield alpha


def moyal_compose(p: Symbol, q: Symbol, h_degree_cap: int | None = None) -> MoyalExpansion:
    """Symbol of ``p(x,hD) q(x,hD)``.

    p # q = sum_k (-i h)^k sum_{|alpha|=k} d_xi^alpha p * d_x^alpha q / alpha!,
    which terminates at k = min(deg_xi p, deg_x q) for polynomials.
    """
    if p.dim != q.dim:
        raise DimensionError("dimension mismatch")
    n = p.dim
    stop = min(p.degree_xi(), q.degree_x())
    cap = stop if h_degree_cap is None else int(h_degree_cap)
    if cap < 0:
        raise ValueError("cap must be non-negative")
    zero = Symbol(n)
    terms = []
    for k in range(min(stop, cap) + 1):
        acc = zero
        for alpha in _multi_indices(n, k):
            dp, dq = p, q
            for j, a in enumerate(alpha):
                if a:
                    dp = dp.diff_xi(j, a)
                    dq = dq.diff_x(j, a)
            if dp.is_zero() or dq.is_zero():
                continue
            acc = acc + (dp * dq) * (1.0 / math.prod(math.factorial(a) for a in alpha))
        # (-i)^k cycles through 1, -i, -1, i
        re_f, im_f = [(1, 0), (0, -1), (-1, 0), (0, 1)][k % 4]
        terms.append(MoyalTerm(k, acc * float(re_f), acc * float(im_f)))
    return MoyalExpansion(tuple(terms), stop, cap < stop)


def apply_expansion(expansion: MoyalExpansion, u: GridFunction, h: float) -> GridFunction:
    """Sum of ``h^k (real_k + i imag_k)(x, hD) u`` over the expansion."""
    out = GridFunction(u.grid, np.zeros(u.grid.shape, dtype=complex))
    for t in expansion.terms:
        part = apply_operator(t.real, u, h) + 1j * apply_operator(t.imag, u, h).values
        out = out + part * (h**t.power)
    return out


def commutator_defect(p: Symbol, q: Symbol, u: GridFunction, h: float) -> float:
    """``|| [p(x,hD), q(x,hD)] u || / || u ||``."""
    pq = apply_operator(p, apply_operator(q, u, h), h)
    qp = apply_operator(q, apply_operator(p, u, h), h)
    return (pq - qp).norm() / u.norm()


# ---------------------------------------------------------------------------
# quantization of sampled (non-polynomial) symbols


def _occupied(uh: np.ndarray, rel: float = 1e-12) -> np.ndarray:
    a = np.abs(uh)
    return np.argwhere(a > rel * a.max()) if a.max() > 0 else np.zeros((0, uh.ndim), dtype=int)


class LowRankSymbol:
    """Cross (skeleton) approximation s(x, h k) ~ sum_r f_r(x) g_r(k) on the grid.

    ``func(x_coords, xi_coords)`` must evaluate the symbol with broadcasting,
    each argument being a list of n arrays.
    """

    def __init__(self, func: Callable, grid: TorusGrid, h: float, tol: float = 1e-13, max_rank: int = 32, seed: int = 0):
        self.grid = grid
        self.h = h
        xs = [np.broadcast_to(c, grid.shape).reshape(-1) for c in grid.coords()]
        ks = [np.broadcast_to(k, grid.shape).reshape(-1) * h for k in grid.wavenumbers()]

        def row(i):
            return np.broadcast_to(func([x[i] for x in xs], ks), (grid.size,)).astype(complex)

        def col(j):
            return np.broadcast_to(func(xs, [k[j] for k in ks]), (grid.size,)).astype(complex)

        F, G = [], []
        used_rows = set()
        i = grid.size // 2
        scale = 0.0
        for _ in range(max_rank):
            r = row(i) - sum(f[i] * g for f, g in zip(F, G))
            used_rows.add(i)
            j = int(np.argmax(np.abs(r)))
            piv = r[j]
            if abs(piv) == 0:
                break
            g = r / piv
            f = col(j) - sum(gg[j] * ff for ff, gg in zip(F, G))
            F.append(f)
            G.append(g)
            step = np.linalg.norm(f) * np.linalg.norm(g)
            scale = max(scale, step)
            if step <= tol * scale:
                break
            a = np.abs(f)
            a[list(used_rows)] = -1
            i = int(np.argmax(a))
        else:
            raise QmlabError("symbol is not resolved by a low-rank cross approximation")
        self.F, self.G = F, G
        rng = np.random.default_rng(seed)
        ii = rng.integers(0, grid.size, 256)
        jj = rng.integers(0, grid.size, 256)
        exact = np.array([func([x[a] for x in xs], [k[b] for k in ks]) for a, b in zip(ii, jj)], dtype=complex)
        approx = sum(f[ii] * g[jj] for f, g in zip(F, G))
        err = np.max(np.abs(exact - approx)) / max(np.max(np.abs(exact)), 1e-300)
        if err > 1e-9:
            raise QmlabError(f"cross approximation error {err:.2e} too large")
        self.rank = len(F)
        self.error = float(err)

    def apply(self, u: GridFunction) -> GridFunction:
        uh = sfft.fftn(u.values)
        out = np.zeros(self.grid.shape, dtype=complex)
        for f, g in zip(self.F, self.G):
            out += f.reshape(self.grid.shape) * sfft.ifftn(uh * g.reshape(self.grid.shape))
        return GridFunction(self.grid, out)


def apply_sampled_symbol(func: Callable, u: GridFunction, h: float) -> GridFunction:
    """Left quantization of a symbol known only through point evaluation."""
    _check_h(h)
    return LowRankSymbol(func, u.grid, h).apply(u)


def check_ellipticity(sym: Symbol, u: GridFunction, h: float, c: float, samples: int = 64, seed: int = 0):
    """Sample |sym(x, h k)| over the grid and the occupied frequencies of ``u``."""
    g = u.grid
    occ = _occupied(sfft.fftn(u.values))
    if occ.size == 0:
        return
    half = g.N // 2
    kvec = np.where(occ >= half, occ - g.N, occ).astype(float)
    rng = np.random.default_rng(seed)
    xs = [np.broadcast_to(cc, g.shape).reshape(-1) for cc in g.coords()]
    pick_k = np.unique(np.concatenate([[0, len(kvec) - 1], rng.integers(0, len(kvec), samples)]))
    pick_x = rng.integers(0, g.size, samples)
    corners = [np.ravel_multi_index(t, g.shape) for t in product(*[(0, g.N // 2, g.N - 1)] * g.dim)]
    pick_x = np.unique(np.concatenate([pick_x, corners]))
    worst = np.inf
    for j in pick_k:
        worst = min(worst, np.min(np.abs(sym(xs, list(h * kvec[j])))))
    for i in pick_x:
        worst = min(worst, np.min(np.abs(sym([x[i] for x in xs], [h * kvec[:, d] for d in range(g.dim)]))))
    if not worst > c:
        raise EllipticityError(f"|p| reaches {worst:.3g} <= {c:.3g} on the sampled region")


def parametrix_residual(p: Symbol, u: GridFunction, h: float, lower_bound: float) -> float:
    """``|| Op(1/p) p(x,hD) u - u || / || u ||`` for an elliptic symbol ``p``."""
    _check_h(h)
    check_ellipticity(p, u, h, lower_bound)
    pu = apply_operator(p, u, h)
    if p.is_x_independent():
        uh = sfft.fftn(pu.values)
        mult = p([0.0] * u.grid.dim, [h * k.astype(float) for k in u.grid.wavenumbers()])
        back = GridFunction(u.grid, sfft.ifftn(uh / mult))
    else:
        back = apply_sampled_symbol(lambda x, xi: 1.0 / p(x, xi), pu, h)
    return (back - u).norm() / u.norm()


# ---------------------------------------------------------------------------
# binary layout: int64 n, int64 N, float64 h, then interleaved re/im float64


def write_grid_function(fh: BinaryIO, u: GridFunction, h: float) -> None:
    fh.write(struct.pack("<qqd", u.grid.dim, u.grid.N, float(h)))
    data = np.empty(2 * u.grid.size, dtype="<f8")
    flat = u.flat()
    data[0::2] = flat.real
    data[1::2] = flat.imag
    fh.write(data.tobytes())


def read_grid_function(fh: BinaryIO) -> tuple[GridFunction, float]:
    header = fh.read(24)
    if len(header) != 24:
        raise ValueError("truncated header")
    n, N, h = struct.unpack("<qqd", header)
    grid = TorusGrid(int(n), int(N))
    raw = np.frombuffer(fh.read(16 * grid.size), dtype="<f8")
    if raw.size != 2 * grid.size:
        raise ValueError("truncated payload")
    return GridFunction(grid, raw[0::2] + 1j * raw[1::2]), h
