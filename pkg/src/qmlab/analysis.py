"""L^p norms on the grid, growth exponents and h-sweeps."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .quantization import GridFunction, TorusGrid
from .quasimodes import QuasimodeSpec, build, window_for

INF = math.inf


def lp_norm(u: GridFunction, p: float) -> float:
    """Riemann-sum L^p norm on the torus; ``p = inf`` gives max |u|."""
    if not p >= 1:
        raise ValueError("p must be >= 1")
    a = np.abs(u.values)
    if math.isinf(p):
        return float(a.max())
    if p == 2:
        return u.norm()
    m = a.max()
    if m == 0:
        return 0.0
    # scale out the maximum to keep |u|^p in range
    return float(m * (np.sum((a / m) ** p) * u.grid.cell_volume) ** (1.0 / p))


def critical_p(n: int, r: int) -> float:
    if r >= n:
        raise ValueError("critical exponent needs r < n")
    return 2.0 * (n - r + 2) / (n - r)


@dataclass(frozen=True)
class ExponentQuery:
    n: int
    p: float
    r: int = 1

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not self.p >= 2:
            raise ValueError("p must be >= 2")
        if not 1 <= self.r <= self.n:
            raise ValueError("r must satisfy 1 <= r <= n")


def delta_exponent(q: ExponentQuery | int, p: float | None = None, r: int | None = None) -> float:
    """Growth exponent delta(n, p, r) with effective dimension m = n - r + 1.

    High-p branch (m-1)/2 - m/p for p >= 2(m+1)/(m-1), low-p branch
    (m-1)/4 - (m-1)/(2p) below it.  For r = n the exponent is 0.
    """
    if not isinstance(q, ExponentQuery):
        q = ExponentQuery(q, p, 1 if r is None else r)
    n, p, r = q.n, q.p, q.r
    d = n - r
    if d == 0:
        return 0.0
    if math.isinf(p):
        return d / 2
    if p >= critical_p(n, r):
        return d / 2 - (d + 1) / p
    return d / 4 - d / (2 * p)


def sogge_delta(n: int, p: float) -> float:
    """Classical eigenfunction exponent; coincides with delta(n, p, 1)."""
    if n < 2 or not p >= 2:
        raise ValueError("need n >= 2 and p >= 2")
    if math.isinf(p):
        return (n - 1) / 2
    if p >= 2 * (n + 1) / (n - 1):
        return (n - 1) / 2 - n / p
    return (n - 1) / 4 - (n - 1) / (2 * p)


def fit_exponent(points: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """Least-squares line through (log lam, log ratio): (slope, intercept, rms)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 2 or np.ptp(pts[:, 0]) == 0:
        raise ValueError("need at least two distinct abscissae")
    x, y = pts[:, 0], pts[:, 1]
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    rms = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return float(slope), float(intercept), rms


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    n: int
    r: int
    p: float
    kind: str
    rows: list[tuple[float, float, float, float, float]]  # lam, h, lp, l2, ratio
    slope: float
    intercept: float
    rms: float
    expected: float
    tolerance: float
    saturating: bool
    target: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        """Distance to failure (negative means failed).

        Every family must stay below ``expected + tolerance``; saturating
        families must also land within ``tolerance`` of ``target`` (which
        defaults to ``expected``).
        """
        upper = self.expected + self.tolerance - self.slope
        if self.saturating:
            t = self.expected if self.target is None else self.target
            return min(upper, self.tolerance - abs(self.slope - t))
        return upper

    @property
    def passed(self) -> bool:
        return self.margin >= 0

    def summary(self) -> dict:
        return {
            "kind": self.kind, "n": self.n, "r": self.r, "p": _pstr(self.p),
            "slope": self.slope, "intercept": self.intercept, "rms": self.rms,
            "expected": self.expected, "tolerance": self.tolerance,
            "saturating": self.saturating, "target": self.target,
            "margin": self.margin, "passed": self.passed,
        }


def _pstr(p):
    return "inf" if math.isinf(p) else p


def grid_for(spec: QuasimodeSpec, n: int, headroom: float = 8.0, minimum: int = 8) -> TorusGrid:
    """Smallest power-of-two grid with N >= headroom * (largest occupied |k_i|)."""
    kmax = spec.lam if spec.kind == "localized" else window_for(spec, n).max_abs()
    return TorusGrid.for_frequency(n, kmax, headroom, minimum)


def run_sweep(spec: QuasimodeSpec, n: int, p_list: Iterable[float], lams: Sequence[float], *,
              r: int | None = None, saturating=(), tolerance: float = 0.15,
              headroom: float = 8.0, checks=None) -> dict[float, SweepResult]:
    """Measure ||u||_p / ||u||_2 along ``lams`` and fit the growth exponent.

    ``r`` is the number of operators the family is a joint quasimode of
    (defaults to ``spec.r``).  p-values in ``saturating`` are held to the
    two-sided tolerance, all others only to the upper bound; a mapping
    ``{p: slope}`` sets a family-specific target slope.  ``checks``
    optionally maps each constructed function to extra diagnostics, stored
    per lam in ``SweepResult.extra``.
    """
    lams = [float(v) for v in lams]
    if len(lams) < 4:
        raise ValueError("a sweep needs at least 4 lam values")
    if any(b <= a for a, b in zip(lams, lams[1:])):
        raise ValueError("lam values must be strictly increasing")
    r = spec.r if r is None else r
    p_list = list(p_list)
    targets = dict(saturating) if isinstance(saturating, dict) else {p: None for p in saturating}
    rows = {p: [] for p in p_list}
    extra = {}
    for lam in lams:
        s = QuasimodeSpec(spec.kind, lam, spec.W, spec.r, spec.inner_kind)
        try:
            grid = grid_for(s, n, headroom)
            u = build(s, grid)
        except Exception as exc:
            raise type(exc)(f"constructor failed at lam={lam:g}: {exc}") from exc
        l2 = u.norm()
        for p in p_list:
            lp = lp_norm(u, p)
            rows[p].append((lam, 1.0 / lam, lp, l2, lp / l2))
        if checks is not None:
            extra[lam] = checks(u, s)
        del u
    out = {}
    for p in p_list:
        pts = [(math.log(row[0]), math.log(row[4])) for row in rows[p]]
        slope, intercept, rms = fit_exponent(pts)
        expected = delta_exponent(ExponentQuery(n, p, r))
        out[p] = SweepResult(n, r, p, spec.kind, rows[p], slope, intercept, rms, expected,
                             tolerance, p in targets, targets.get(p), extra)
    return out


CSV_COLUMNS = ["lambda", "h", "p", "lp_norm", "l2_norm", "ratio", "log_lambda", "log_ratio"]


def sweep_to_csv(results: Iterable[SweepResult]) -> str:
    """CSV rows for every result, followed by ``#``-prefixed JSON fit summaries."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    results = list(results)
    for res in results:
        for lam, h, lp, l2, ratio in res.rows:
            w.writerow([repr(lam), repr(h), _pstr(res.p), repr(lp), repr(l2), repr(ratio),
                        repr(math.log(lam)), repr(math.log(ratio))])
    for res in results:
        buf.write("# " + json.dumps(res.summary(), sort_keys=True) + "\n")
    return buf.getvalue()
