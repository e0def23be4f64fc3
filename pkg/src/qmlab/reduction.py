"""Inductive elimination of xi_r, ..., xi_2 from an admissible symbol family.

Pipeline:

1. rotate the xi-coordinates (Householder QR of the gradient matrix) so that
   the gradient of p_i at the base point only involves xi_1..xi_i;
2. solve p_r = 0 for xi_r as a graph a_r(x, other xi) by Newton iteration,
   substitute into p_1..p_{r-1}, and repeat down to xi_2;
3. solve the last reduced p_1 for xi_1 = b(x, xi_{r+1}..xi_n) and certify the
   curvature of b.

Symbols are carried as *evaluators* on full-length xi vectors.  Eliminated
coordinates are ignored on input and report zero derivatives, so every stage
speaks the same coordinate language.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import ReductionError
from .symbols import PhasePoint, Symbol, Tolerances, check_admissibility

log = logging.getLogger(__name__)

NEWTON_STEP_TOL = 1e-12
RESIDUAL_TOL = 1e-10
MAX_NEWTON = 50
DEFAULT_BOX = 0.1
MAX_SHRINKS = 5


class Evaluator(Protocol):
    dim: int

    def value(self, x, xi) -> float: ...

    def grad(self, x, xi) -> np.ndarray: ...

    def hess(self, x, xi) -> np.ndarray: ...


class PolyEvaluator:
    """Evaluator backed by an exact :class:`Symbol`."""

    def __init__(self, sym: Symbol):
        self.symbol = sym
        self.dim = sym.dim
        n = sym.dim
        self._d1 = [sym.diff_xi(i) for i in range(n)]
        self._d2 = [[self._d1[i].diff_xi(j) for j in range(n)] for i in range(n)]

    def value(self, x, xi):
        return float(self.symbol(x, xi))

    def grad(self, x, xi):
        return np.array([float(d(x, xi)) for d in self._d1])

    def hess(self, x, xi):
        n = self.dim
        H = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                H[i, j] = H[j, i] = float(self._d2[i][j](x, xi))
        return H

    def __repr__(self):
        return f"PolyEvaluator({self.symbol})"


# ---------------------------------------------------------------------------
# normalisation


@dataclass(frozen=True, eq=False)
class RotationPlan:
    Q: np.ndarray
    base: PhasePoint  # base point in the rotated coordinates
    L: np.ndarray  # r x n, row i = rotated gradient of p_i

    def orthogonality_error(self) -> float:
        return float(np.abs(self.Q @ self.Q.T - np.eye(len(self.Q))).max())


def normalize_coordinates(syms: Sequence[Symbol], pt: PhasePoint, tols: Tolerances | None = None):
    """Orthogonal change xi = Q eta making the gradient matrix lower trapezoidal.

    Returns ``(plan, rotated_symbols)``.  With G the r x n matrix of
    gradients, G^T = Q R (complete QR, Householder), so G Q = R^T.
    """
    tols = tols or Tolerances()
    G = np.array([s.grad_xi(pt) for s in syms])
    r, n = G.shape
    Q, R = np.linalg.qr(G.T, mode="complete")
    # fix column signs so the achieved diagonal is positive
    signs = np.ones(n)
    for i in range(min(r, n)):
        if R[i, i] < 0:
            signs[i] = -1.0
    Q = Q * signs
    L = G @ Q
    for i in range(r):
        row = np.linalg.norm(G[i])
        if not abs(L[i, i]) > tols.indep_tol * max(row, 1e-300):
            raise ReductionError(f"normal of symbol {i + 1} depends on the preceding normals", stage=i + 1)
    L[np.abs(L) < 1e-15] = 0.0
    rotated = [s.linear_change_xi(Q) for s in syms]
    base = PhasePoint(pt.x, Q.T @ pt.xi)
    return RotationPlan(Q, base, L), rotated


# ---------------------------------------------------------------------------
# graphs


class GraphFunction:
    """Solution xi_i = a(x, xi_rest) of ``sym = 0`` near a base point.

    ``index`` is 0-based.  The box gives half-widths around the base for x
    and for xi; evaluation outside raises ``ReductionError``.
    """

    def __init__(self, sym: Evaluator, index: int, base: PhasePoint, half_width: float, closed_form: Symbol | None = None):
        self.sym = sym
        self.index = index
        self.base = base
        self.half_width = half_width
        self.closed_form = closed_form
        self.dim = sym.dim

    @property
    def is_affine(self) -> bool:
        return self.closed_form is not None

    def _in_box(self, x, xi):
        dx = np.abs(np.asarray(x, float) - self.base.x)
        dk = np.abs(np.asarray(xi, float) - self.base.xi)
        dk[self.index] = 0.0
        return dx.max(initial=0) <= self.half_width * (1 + 1e-12) and dk.max(initial=0) <= self.half_width * (1 + 1e-12)

    def __call__(self, x, xi) -> float:
        """Solve for the eliminated coordinate; the i-th entry of ``xi`` is ignored."""
        if not self._in_box(x, xi):
            raise ReductionError("evaluation outside the graph's validity box", stage=self.index + 1,
                                 detail={"half_width": self.half_width})
        if self.closed_form is not None:
            return float(self.closed_form(x, xi))
        return self._newton(np.asarray(x, float), np.array(xi, float))

    def _newton(self, x, xi, max_iter=MAX_NEWTON):
        i = self.index
        xi[i] = self.base.xi[i]
        for _ in range(max_iter):
            f = self.sym.value(x, xi)
            d = self.sym.grad(x, xi)[i]
            if d == 0:
                break
            step = f / d
            xi[i] -= step
            if abs(step) <= NEWTON_STEP_TOL * max(1.0, abs(xi[i])):
                res = abs(self.sym.value(x, xi))
                if res <= RESIDUAL_TOL:
                    return float(xi[i])
                break
        raise ReductionError(
            "Newton iteration did not converge; shrink the validity box",
            stage=i + 1,
            detail={"half_width": self.half_width, "suggested_half_width": self.half_width / 2},
        )

    def point(self, x, xi) -> np.ndarray:
        out = np.array(xi, float)
        out[self.index] = self(x, xi)
        return out

    def residual(self, x, xi) -> float:
        return abs(self.sym.value(x, self.point(x, xi)))

    def grad(self, x, xi) -> np.ndarray:
        """d a / d xi_j = -(d_j p) / (d_i p); zero in the eliminated slot."""
        pt = self.point(x, xi)
        g = self.sym.grad(x, pt)
        out = -g / g[self.index]
        out[self.index] = 0.0
        return out

    def hess(self, x, xi) -> np.ndarray:
        """Second derivatives from differentiating p(xi, a(xi)) = 0 twice."""
        i = self.index
        pt = self.point(x, xi)
        g = self.sym.grad(x, pt)
        H = self.sym.hess(x, pt)
        a = -g / g[i]
        a[i] = 0.0
        out = -(H + np.outer(H[:, i], a) + np.outer(a, H[i, :]) + H[i, i] * np.outer(a, a)) / g[i]
        out[i, :] = 0.0
        out[:, i] = 0.0
        return out


def _affine_solution(sym: Symbol, i: int) -> Symbol | None:
    """Closed-form xi_i when sym = c * xi_i + rest with c constant and rest free of xi_i."""
    if sym.degree_in_xi(i) != 1:
        return None
    coef = sym.diff_xi(i)
    if len(coef) != 1:
        return None
    ((xe, ke), c), = coef
    if any(xe) or any(ke):
        return None
    rest = sym - Symbol.xi_var(sym.dim, i, c)
    return rest * (-1.0 / c)


def _box_points(base: PhasePoint, index: int, half_width: float, count: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    n = base.dim
    pts = [(base.x.copy(), base.xi.copy())]
    for s in (-1.0, 1.0):
        pts.append((base.x + s * half_width, base.xi + s * half_width))
    while len(pts) < count:
        pts.append((base.x + rng.uniform(-half_width, half_width, n), base.xi + rng.uniform(-half_width, half_width, n)))
    for _, xi in pts:
        xi[index] = base.xi[index]
    return pts


def _rebase(graph: GraphFunction) -> GraphFunction:
    # move the base onto the level set so that a(base) equals the base coordinate
    b = graph.base
    xi = b.xi.copy()
    xi[graph.index] = graph(b.x, b.xi)
    graph.base = PhasePoint(b.x, xi)
    return graph


def solve_graph(sym, index: int, pt: PhasePoint, half_width: float = DEFAULT_BOX,
                tols: Tolerances | None = None, probes: int = 16) -> GraphFunction:
    """Implicit-function graph for coordinate ``index`` (0-based) of ``sym = 0``.

    ``sym`` may be a :class:`Symbol` or an evaluator.  Affine dependence with a
    constant coefficient gives an exact closed form; otherwise Newton solves
    from the base value, and the validity box is halved (at most five times)
    until every probe point converges.
    """
    tols = tols or Tolerances()
    ev = PolyEvaluator(sym) if isinstance(sym, Symbol) else sym
    d = ev.grad(pt.x, pt.xi)[index]
    if not abs(d) > tols.grad_tol:
        raise ReductionError(f"d p / d xi_{index + 1} vanishes at the base point", stage=index + 1)
    closed = None
    if isinstance(sym, Symbol):
        closed = _affine_solution(sym, index)
    elif isinstance(ev, PolyEvaluator):
        closed = _affine_solution(ev.symbol, index)
    if closed is not None:
        return _rebase(GraphFunction(ev, index, pt, half_width, closed))
    width = half_width
    last = None
    for _ in range(MAX_SHRINKS + 1):
        try:
            graph = _rebase(GraphFunction(ev, index, pt, width))
            for x, xi in _box_points(graph.base, index, width, probes):
                graph(x, xi)
            return graph
        except ReductionError as exc:
            last = exc
            width /= 2
    raise ReductionError(
        "Newton failed on every validity box tried",
        stage=index + 1,
        detail={"smallest_half_width": width * 2, "cause": str(last)},
    )


class SubstitutedEvaluator:
    """p(x, ..., a(x, xi~), ...): value and chain-rule derivatives."""

    def __init__(self, inner: Evaluator, graph: GraphFunction):
        self.inner = inner
        self.graph = graph
        self.dim = inner.dim

    def value(self, x, xi):
        return self.inner.value(x, self.graph.point(x, xi))

    def grad(self, x, xi):
        i = self.graph.index
        pt = self.graph.point(x, xi)
        g = self.inner.grad(x, pt)
        out = g + g[i] * self.graph.grad(x, xi)
        out[i] = 0.0
        return out

    def hess(self, x, xi):
        i = self.graph.index
        pt = self.graph.point(x, xi)
        g = self.inner.grad(x, pt)
        H = self.inner.hess(x, pt)
        a = self.graph.grad(x, xi)
        A = self.graph.hess(x, xi)
        out = H + np.outer(H[:, i], a) + np.outer(a, H[i, :]) + H[i, i] * np.outer(a, a) + g[i] * A
        out[i, :] = 0.0
        out[:, i] = 0.0
        return out


def substitute_graph(sym, graph: GraphFunction):
    """Reduced symbol with the graph's coordinate eliminated.

    Exact polynomial substitution (a :class:`PolyEvaluator`) when both the
    symbol and the graph are polynomial; otherwise a chain-rule evaluator.
    """
    ev = PolyEvaluator(sym) if isinstance(sym, Symbol) else sym
    if isinstance(ev, PolyEvaluator) and graph.is_affine:
        if ev.symbol.degree_in_xi(graph.index) == 0:
            return ev
        return PolyEvaluator(ev.symbol.substitute_xi(graph.index, graph.closed_form))
    return SubstitutedEvaluator(ev, graph)


def direct_substitution(sym: Symbol, graph: GraphFunction) -> Symbol:
    """Plug an affine graph straight into an untransformed polynomial symbol.

    Kept alongside the pipeline result for comparison with hand computations
    that skip the coordinate change on ``sym``; a surviving constant term is
    logged since such computations commonly drop it.
    """
    if not graph.is_affine:
        raise ReductionError("direct substitution needs an affine graph", stage=graph.index + 1)
    out = sym.substitute_xi(graph.index, graph.closed_form)
    const = out.terms.get(((0,) * out.dim, (0,) * out.dim), 0.0)
    if const != 0.0:
        log.warning("direct substitution leaves constant term %g", const)
    return out


def curvature_certificate(ev, pt: PhasePoint, indices: Sequence[int], curv_tol: float = 1e-8):
    """Ascending eigenvalues of the Hessian block on ``indices`` (0-based) and pass flag."""
    ev = PolyEvaluator(ev) if isinstance(ev, Symbol) else ev
    idx = list(indices)
    if not idx:
        return [], True
    H = ev.hess(pt.x, pt.xi)[np.ix_(idx, idx)]
    eig = np.linalg.eigvalsh(0.5 * (H + H.T))
    return [float(e) for e in eig], bool(eig.min() > curv_tol)


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class Stage:
    index: int  # 0-based coordinate removed
    graph: GraphFunction
    reduced: list  # evaluators for p_1..p_{index} after substitution
    certificate: list[float]
    certificate_pass: bool


@dataclass
class ReductionTrace:
    plan: RotationPlan
    symbols: list  # symbols in the normalised coordinates
    stages: list[Stage] = field(default_factory=list)
    final_graph: GraphFunction | None = None
    final_certificate: list[float] = field(default_factory=list)
    final_sign: int = 1
    final_pass: bool = False

    @property
    def completed(self) -> bool:
        return self.final_graph is not None

    @property
    def certificates(self) -> list[list[float]]:
        return [s.certificate for s in self.stages] + [self.final_certificate]

    @property
    def all_positive(self) -> bool:
        return all(s.certificate_pass for s in self.stages) and self.final_pass

    def b(self, x, eta) -> float:
        """Final graph xi_1 = b(x, xi_{r+1..n}); ``eta`` holds those coordinates."""
        r = len(self.symbols)
        xi = self.final_graph.base.xi.copy()
        xi[r:] = eta
        return self.reconstruct(x, xi)[0]

    def reconstruct(self, x, xi) -> np.ndarray:
        """Fill in xi_1 and xi_2..xi_r from the free coordinates xi_{r+1..n}."""
        xi = np.array(xi, float)
        xi[0] = self.final_graph(x, xi)
        for stage in reversed(self.stages):
            xi[stage.index] = stage.graph(x, xi)
        return xi


def reduce_all(syms: Sequence[Symbol], pt: PhasePoint, tols: Tolerances | None = None,
               half_width: float = DEFAULT_BOX, coordinate_change=None) -> ReductionTrace:
    """Run the whole elimination.

    ``coordinate_change`` overrides the orthogonal normalisation with an
    explicit matrix C (xi = C eta); it must still produce the triangular
    gradient pattern at the base point.
    """
    tols = tols or Tolerances()
    report = check_admissibility(syms, pt, tols)
    if not report.admissible:
        raise ReductionError(f"admissibility failed: {report.passes}", stage=None, detail={"report": report})
    r, n = len(syms), syms[0].dim
    if coordinate_change is None:
        plan, rotated = normalize_coordinates(syms, pt, tols)
    else:
        C = np.asarray(coordinate_change, float)
        rotated = [s.linear_change_xi(C) for s in syms]
        base = PhasePoint(pt.x, np.linalg.solve(C, pt.xi))
        L = np.array([s.grad_xi(base) for s in rotated])
        for i in range(r):
            if abs(L[i, i]) <= tols.grad_tol or np.abs(L[i, i + 1:]).max(initial=0) > 1e-10:
                raise ReductionError(f"coordinate change does not triangularise gradient {i + 1}", stage=i + 1)
        plan = RotationPlan(C, base, L)
    base = plan.base
    off = [abs(s.eval(base)) for s in rotated]
    if max(off) > RESIDUAL_TOL:
        log.warning("base point is not a joint zero (|p_j| = %s); graphs are re-based onto the level sets", off)
    trace = ReductionTrace(plan, rotated)
    current = [PolyEvaluator(s) for s in rotated]
    tail = list(range(r, n))
    for i in range(r - 1, 0, -1):
        graph = solve_graph(current[i], i, base, half_width, tols)
        base = graph.base
        current = [substitute_graph(ev, graph) for ev in current[:i]]
        eig, ok = curvature_certificate(current[0], base, tail, tols.curv_tol)
        if not ok:
            log.warning("curvature certificate failed after removing xi_%d: %s", i + 1, eig)
        trace.stages.append(Stage(i, graph, current, eig, ok))
    final = solve_graph(current[0], 0, base, half_width, tols)
    trace.final_graph = final
    base = final.base
    if tail:
        H = final.hess(base.x, base.xi)[np.ix_(tail, tail)]
        eig = np.linalg.eigvalsh(0.5 * (H + H.T))
        sign = -1 if np.all(eig < -tols.curv_tol) else 1
        eig = np.sort(sign * eig)
        trace.final_certificate = [float(e) for e in eig]
        trace.final_sign = sign
        trace.final_pass = bool(eig.min() > tols.curv_tol)
    else:
        trace.final_pass = True
    return trace


# ---------------------------------------------------------------------------
# report


def format_trace(trace: ReductionTrace, samples: int = 5, seed: int = 0) -> str:
    """Structured text report: one block per stage plus the final graph."""
    out = []
    plan = trace.plan
    out.append("[normalization]")
    out.append("Q = " + np.array2string(plan.Q, precision=12, separator=", ").replace("\n", ""))
    out.append("base_xi = " + np.array2string(plan.base.xi, precision=12, separator=", "))
    for k, s in enumerate(trace.symbols, 1):
        out.append(f"p{k} = {s}")
    blocks = [(st.index, st.graph, st.certificate, st.certificate_pass) for st in trace.stages]
    if trace.final_graph is not None:
        blocks.append((0, trace.final_graph, trace.final_certificate, trace.final_pass))
    for index, graph, cert, ok in blocks:
        out.append("")
        out.append(f"[stage xi{index + 1}]")
        if graph.is_affine:
            out.append(f"graph: xi{index + 1} = {graph.closed_form}")
        else:
            out.append(f"graph: xi{index + 1} = newton (half_width {graph.half_width:g})")
        out.append("samples: x | xi | a | residual")
        for x, xi in _box_points(graph.base, index, graph.half_width, samples, seed):
            val = graph(x, xi)
            res = graph.residual(x, xi)
            out.append(f"  {np.array2string(x, precision=4, separator=',')} | "
                       f"{np.array2string(xi, precision=4, separator=',')} | {val:.12g} | {res:.2e}")
        out.append("certificate: " + " ".join(f"{e:.12g}" for e in cert) + (" PASS" if ok else " FAIL"))
    return "\n".join(out) + "\n"
