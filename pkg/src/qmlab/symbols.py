"""Sparse real polynomial symbols p(x, xi) on T*R^n.

A symbol is a finite sum of monomials ``c * x^beta * xi^alpha``.  Everything
here is exact polynomial arithmetic on float coefficients; terms whose
coefficient drops below ``DROP_TOL`` in magnitude are discarded so that term
sets stay canonical.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, SingularTransformError, SymbolSyntaxError

DROP_TOL = 1e-14

Key = tuple[tuple[int, ...], tuple[int, ...]]


def _collect(n: int, items: Iterable[tuple[Key, float]]) -> dict[Key, float]:
    out: dict[Key, float] = {}
    for key, c in items:
        xe, ke = key
        if len(xe) != n or len(ke) != n:
            raise DimensionError(f"multi-index length differs from dimension {n}")
        if any(e < 0 for e in xe) or any(e < 0 for e in ke):
            raise ValueError("multi-index entries must be non-negative")
        out[key] = out.get(key, 0.0) + float(c)
    return {k: v for k, v in out.items() if abs(v) >= DROP_TOL}


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray

    def __init__(self, x, xi):
        x = np.asarray(x, dtype=float).reshape(-1)
        xi = np.asarray(xi, dtype=float).reshape(-1)
        if x.shape != xi.shape:
            raise DimensionError("x and xi must have the same length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
            raise ValueError("phase point entries must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)

    @property
    def dim(self) -> int:
        return self.x.size


@dataclass(frozen=True, eq=False)
class Symbol:
    """Immutable sparse polynomial in (x, xi)."""

    dim: int
    _terms: tuple = field(repr=False)

    def __init__(self, dim: int, terms: Mapping[Key, float] | Iterable[tuple[Key, float]] = ()):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        items = terms.items() if isinstance(terms, Mapping) else terms
        collected = _collect(dim, ((tuple(map(tuple, k)), c) for k, c in items))
        object.__setattr__(self, "dim", int(dim))
        object.__setattr__(self, "_terms", tuple(sorted(collected.items())))

    # -- constructors -------------------------------------------------------
    @classmethod
    def constant(cls, dim: int, c: float) -> "Symbol":
        z = (0,) * dim
        return cls(dim, {(z, z): c})

    @classmethod
    def xi_var(cls, dim: int, i: int, c: float = 1.0) -> "Symbol":
        """``c * xi_i`` with 0-based index ``i``."""
        z = [0] * dim
        e = list(z)
        e[i] = 1
        return cls(dim, {(tuple(z), tuple(e)): c})

    @classmethod
    def x_var(cls, dim: int, i: int, c: float = 1.0) -> "Symbol":
        z = [0] * dim
        e = list(z)
        e[i] = 1
        return cls(dim, {(tuple(e), tuple(z)): c})

    @classmethod
    def laplace(cls, dim: int) -> "Symbol":
        """The model symbol |xi|^2 - 1."""
        s = cls.constant(dim, -1.0)
        for i in range(dim):
            s = s + cls.xi_var(dim, i) * cls.xi_var(dim, i)
        return s

    @classmethod
    def parse(cls, text: str, dim: int | None = None) -> "Symbol":
        return parse_symbol(text, dim)

    # -- container protocol -------------------------------------------------
    @property
    def terms(self) -> dict[Key, float]:
        return dict(self._terms)

    def __iter__(self):
        return iter(self._terms)

    def __len__(self):
        return len(self._terms)

    def __eq__(self, other):
        if not isinstance(other, Symbol):
            return NotImplemented
        return self.dim == other.dim and self._terms == other._terms

    def __hash__(self):
        return hash((self.dim, self._terms))

    def is_zero(self) -> bool:
        return not self._terms

    def allclose(self, other: "Symbol", atol: float = 1e-12) -> bool:
        """Term-wise comparison with absolute coefficient tolerance."""
        self._check(other)
        a, b = self.terms, other.terms
        return all(abs(a.get(k, 0.0) - b.get(k, 0.0)) <= atol for k in set(a) | set(b))

    def _check(self, other: "Symbol"):
        if self.dim != other.dim:
            raise DimensionError(f"dimension mismatch: {self.dim} vs {other.dim}")

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Symbol.constant(self.dim, other)
        self._check(other)
        return Symbol(self.dim, list(self._terms) + list(other._terms))

    __radd__ = __add__

    def __neg__(self):
        return Symbol(self.dim, [(k, -c) for k, c in self._terms])

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Symbol.constant(self.dim, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Symbol(self.dim, [(k, c * other) for k, c in self._terms])
        self._check(other)
        items = []
        for (xa, ka), ca in self._terms:
            for (xb, kb), cb in other._terms:
                key = (tuple(i + j for i, j in zip(xa, xb)), tuple(i + j for i, j in zip(ka, kb)))
                items.append((key, ca * cb))
        return Symbol(self.dim, items)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0 or int(k) != k:
            raise ValueError("only non-negative integer powers")
        out = Symbol.constant(self.dim, 1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    # -- degrees ------------------------------------------------------------
    def degree_xi(self) -> int:
        return max((sum(ke) for (_, ke), _ in self._terms), default=0)

    def degree_x(self) -> int:
        return max((sum(xe) for (xe, _), _ in self._terms), default=0)

    def degree_in_xi(self, i: int) -> int:
        return max((ke[i] for (_, ke), _ in self._terms), default=0)

    def is_x_independent(self) -> bool:
        return all(not any(xe) for (xe, _), _ in self._terms)

    # -- calculus -----------------------------------------------------------
    def diff_xi(self, i: int, order: int = 1) -> "Symbol":
        items = []
        for (xe, ke), c in self._terms:
            if ke[i] < order:
                continue
            f = math.perm(ke[i], order)
            k2 = list(ke)
            k2[i] -= order
            items.append(((xe, tuple(k2)), c * f))
        return Symbol(self.dim, items)

    def diff_x(self, i: int, order: int = 1) -> "Symbol":
        items = []
        for (xe, ke), c in self._terms:
            if xe[i] < order:
                continue
            f = math.perm(xe[i], order)
            x2 = list(xe)
            x2[i] -= order
            items.append(((tuple(x2), ke), c * f))
        return Symbol(self.dim, items)

    # -- evaluation ---------------------------------------------------------
    def __call__(self, x, xi):
        """Evaluate at ``x``, ``xi`` given as sequences of n coordinates.

        Each coordinate may be an array; arrays broadcast against each other.
        """
        if len(x) != self.dim or len(xi) != self.dim:
            raise DimensionError(f"expected {self.dim} coordinates")
        total = 0.0
        for (xe, ke), c in self._terms:
            term = c
            for j in range(self.dim):
                if xe[j]:
                    term = term * np.asarray(x[j]) ** xe[j]
                if ke[j]:
                    term = term * np.asarray(xi[j]) ** ke[j]
            total = total + term
        return total

    def eval(self, pt: PhasePoint) -> float:
        if pt.dim != self.dim:
            raise DimensionError(f"point dimension {pt.dim} != symbol dimension {self.dim}")
        return float(self(pt.x, pt.xi))

    def grad_xi(self, pt: PhasePoint) -> np.ndarray:
        if pt.dim != self.dim:
            raise DimensionError(f"point dimension {pt.dim} != symbol dimension {self.dim}")
        return np.array([self.diff_xi(i).eval(pt) for i in range(self.dim)])

    def hess_xi(self, pt: PhasePoint) -> np.ndarray:
        if pt.dim != self.dim:
            raise DimensionError(f"point dimension {pt.dim} != symbol dimension {self.dim}")
        n = self.dim
        H = np.zeros((n, n))
        for i in range(n):
            di = self.diff_xi(i)
            for j in range(i, n):
                H[i, j] = H[j, i] = di.diff_xi(j).eval(pt)
        return H

    def x_coefficients(self) -> dict[tuple[int, ...], "Symbol"]:
        """Group by xi multi-index: ``{alpha: c_alpha(x)}`` with p = sum c_alpha(x) xi^alpha."""
        groups: dict[tuple[int, ...], list] = {}
        z = (0,) * self.dim
        for (xe, ke), c in self._terms:
            groups.setdefault(ke, []).append(((xe, z), c))
        return {k: Symbol(self.dim, v) for k, v in sorted(groups.items())}

    # -- substitutions ------------------------------------------------------
    def linear_change_xi(self, Q) -> "Symbol":
        """Pull back by xi -> Q xi: the result q satisfies q(x, xi) = p(x, Q xi)."""
        Q = np.asarray(Q, dtype=float)
        n = self.dim
        if Q.shape != (n, n):
            raise DimensionError(f"Q must be {n}x{n}")
        if abs(np.linalg.det(Q)) < 1e-12:
            raise SingularTransformError("coordinate change is singular")
        z = (0,) * n
        rows = []
        for j in range(n):
            rows.append(Symbol(n, [((z, tuple(int(m == k) for m in range(n))), Q[j, k]) for k in range(n)]))
        return self._compose_xi(rows)

    def substitute_xi(self, i: int, expr: "Symbol") -> "Symbol":
        """Replace xi_i by the polynomial ``expr`` (which must not involve xi_i)."""
        self._check(expr)
        if expr.degree_in_xi(i) > 0:
            raise ValueError("substituted expression depends on the eliminated variable")
        rows = [Symbol.xi_var(self.dim, j) for j in range(self.dim)]
        rows[i] = expr
        return self._compose_xi(rows)

    def _compose_xi(self, rows: Sequence["Symbol"]) -> "Symbol":
        n = self.dim
        cache: dict[tuple[int, int], Symbol] = {}

        def power(j, e):
            if (j, e) not in cache:
                cache[(j, e)] = rows[j] ** e
            return cache[(j, e)]

        out = Symbol(n)
        z = (0,) * n
        for (xe, ke), c in self._terms:
            term = Symbol(n, {(xe, z): c})
            for j in range(n):
                if ke[j]:
                    term = term * power(j, ke[j])
            out = out + term
        return out

    # -- text ---------------------------------------------------------------
    def __str__(self):
        if not self._terms:
            return "0"
        parts = []
        for (xe, ke), c in self._terms:
            factors = [f"x{j + 1}" + (f"^{e}" if e > 1 else "") for j, e in enumerate(xe) if e]
            factors += [f"xi{j + 1}" + (f"^{e}" if e > 1 else "") for j, e in enumerate(ke) if e]
            mag = abs(c)
            coef = f"{mag:.15g}"
            if factors:
                body = " * ".join(factors) if coef == "1" else " * ".join([coef] + factors)
            else:
                body = coef
            parts.append(("- " if c < 0 else "+ ") + body)
        s = " ".join(parts)
        return s[2:] if s.startswith("+ ") else "-" + s[2:]


def eval_symbol(sym: Symbol, pt: PhasePoint) -> float:
    return sym.eval(pt)


def grad_xi(sym: Symbol, pt: PhasePoint) -> np.ndarray:
    return sym.grad_xi(pt)


def hess_xi(sym: Symbol, pt: PhasePoint) -> np.ndarray:
    return sym.hess_xi(pt)


def linear_change_xi(sym: Symbol, Q) -> Symbol:
    return sym.linear_change_xi(Q)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<absxi>\|\s*xi\s*\|)"
    r"|(?P<var>xi\d+|x\d+)"
    r"|(?P<op>[-+*^()]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    stripped = text.rstrip()
    while pos < len(stripped):
        m = _TOKEN.match(stripped, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(stripped[pos:]) - len(stripped[pos:].lstrip()))
            raise SymbolSyntaxError("unexpected character", text, bad)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(stripped)))
    return tokens


class _Parser:
    def __init__(self, text, dim):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.dim = dim

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise SymbolSyntaxError(msg, self.text, tok[2])

    def expr(self):
        sign = 1.0
        kind, val, _ = self.peek()
        if kind == "op" and val in "+-":
            self.take()
            sign = -1.0 if val == "-" else 1.0
        out = self.term() * sign
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                t = self.term()
                out = out + t if val == "+" else out - t
            else:
                return out

    def term(self):
        out = self.power()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "*":
                self.take()
                out = out * self.power()
            else:
                return out

    def power(self):
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            tok = self.take()
            if tok[0] != "num" or not tok[1].isdigit():
                self.fail("exponent must be a non-negative integer", tok)
            base = base ** int(tok[1])
        return base

    def atom(self):
        tok = self.take()
        kind, val, pos = tok
        n = self.dim
        if kind == "num":
            return Symbol.constant(n, float(val))
        if kind == "absxi":
            nxt = self.take()
            if nxt[1] != "^":
                self.fail("|xi| must be followed by ^2", nxt)
            e = self.take()
            if e[1] != "2":
                self.fail("only |xi|^2 is supported", e)
            return Symbol.laplace(n) + 1.0
        if kind == "var":
            idx = int(val[2:] if val.startswith("xi") else val[1:])
            if not 1 <= idx <= n:
                self.fail(f"variable index out of range 1..{n}", tok)
            if val.startswith("xi"):
                return Symbol.xi_var(n, idx - 1)
            return Symbol.x_var(n, idx - 1)
        if kind == "op" and val == "(":
            inner = self.expr()
            close = self.take()
            if close[1] != ")":
                self.fail("expected ')'", close)
            return inner
        self.fail("unexpected token", tok)


def _infer_dim(text: str) -> int:
    idx = [int(m) for m in re.findall(r"(?:xi|x)(\d+)", text)]
    return max(idx, default=1)


def parse_symbol(text: str, dim: int | None = None) -> Symbol:
    """Parse ``'3.5 * x2^2 * xi1 - |xi|^2 + 1'`` style text.

    Without ``dim`` the dimension is the largest variable index present.
    """
    if not text or not text.strip():
        raise SymbolSyntaxError("empty symbol", text, 0)
    dim = dim or _infer_dim(text)
    parser = _Parser(text, dim)
    out = parser.expr()
    if parser.peek()[0] != "end":
        parser.fail("trailing input")
    return out


# ---------------------------------------------------------------------------
# admissibility


@dataclass(frozen=True)
class Tolerances:
    grad_tol: float = 1e-8
    indep_tol: float = 1e-8
    curv_tol: float = 1e-8


@dataclass(frozen=True)
class AdmissibilityReport:
    gradient_norms: tuple[float, ...]
    normal_matrix_min_singular_value: float | None
    second_fundamental_form_eigenvalues: tuple[float, ...] | None
    sign_convention: int
    passes: tuple[bool | None, bool | None, bool | None]
    tolerances: Tolerances

    @property
    def admissible(self) -> bool:
        return all(p is True for p in self.passes)


def _coef_scale(sym: Symbol) -> float:
    return max(sum(abs(c) for _, c in sym), 1e-300)


def tangent_basis(normal: np.ndarray) -> np.ndarray:
    """Orthonormal basis (as columns) of the complement of ``normal``."""
    n = normal.size
    q, _ = np.linalg.qr(np.column_stack([normal, np.eye(n)]))
    return q[:, 1:n]


def second_fundamental_form(sym: Symbol, pt: PhasePoint) -> np.ndarray:
    """Eigenvalues of T^T Hess T / |grad| on the tangent space of the level set, ascending."""
    g = sym.grad_xi(pt)
    T = tangent_basis(g)
    S = T.T @ sym.hess_xi(pt) @ T / np.linalg.norm(g)
    return np.linalg.eigvalsh(0.5 * (S + S.T))


def check_admissibility(syms: Sequence[Symbol], pt: PhasePoint, tols: Tolerances | None = None) -> AdmissibilityReport:
    """Evaluate the three admissibility conditions at ``pt``.

    1. each characteristic set is a hypersurface (non-vanishing xi-gradient);
    2. the normals are linearly independent;
    3. the first characteristic set has definite second fundamental form.

    Gradient tests are relative to the coefficient l1-norm of each symbol and
    independence is tested on unit normals, so rescaling a symbol never
    changes a verdict.
    """
    tols = tols or Tolerances()
    r = len(syms)
    if r == 0:
        raise ValueError("need at least one symbol")
    n = syms[0].dim
    if any(s.dim != n for s in syms) or pt.dim != n:
        raise DimensionError("all symbols and the base point must share the dimension")
    if r > n:
        raise ValueError(f"r={r} symbols exceed dimension n={n}")

    grads = np.array([s.grad_xi(pt) for s in syms])
    norms = np.linalg.norm(grads, axis=1)
    nondeg = [bool(norms[j] > tols.grad_tol * _coef_scale(s)) for j, s in enumerate(syms)]
    cond1 = all(nondeg)
    if not nondeg[0]:
        return AdmissibilityReport(tuple(map(float, norms)), None, None, 1, (False, None, None), tols)

    units = grads / np.where(norms > 0, norms, 1.0)[:, None]
    smin = float(np.linalg.svd(units, compute_uv=False).min())
    cond2 = smin > tols.indep_tol

    if n >= 2:
        eig = second_fundamental_form(syms[0], pt)
        sign = -1 if np.all(eig < -tols.curv_tol) else 1
        eig = np.sort(sign * eig)
        cond3 = bool(np.all(eig > tols.curv_tol))
    else:
        eig, sign, cond3 = np.zeros(0), 1, True
    return AdmissibilityReport(
        tuple(map(float, norms)), smin, tuple(map(float, eig)), sign, (cond1, cond2, cond3), tols
    )
