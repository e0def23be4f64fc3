"""``qmlab`` command line: config-driven experiments with scripted exit codes.

Exit codes: 0 all checks passed, 1 a mathematical check failed, 2 usage or
config error, 3 numerical precondition rejected (aliasing, ellipticity,
empty lattice window).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import PreconditionError, QmlabError, SymbolSyntaxError
from .symbols import PhasePoint, Symbol, Tolerances, check_admissibility, parse_symbol

log = logging.getLogger("qmlab")

COMMANDS = ("delta", "admissibility", "reduce", "defect", "compose-check", "sweep")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_PRECONDITION = 0, 1, 2, 3

COMMON_KEYS = ("command", "output", "seed", "grad_tol", "indep_tol", "curv_tol")

# recognised keys per command (besides COMMON_KEYS) and the required subset
KEYS = {
    "delta": (("n", "p", "r"), ("n", "p")),
    "admissibility": (("n", "symbols", "x0", "xi0"), ("symbols", "xi0")),
    "reduce": (("n", "symbols", "x0", "xi0", "coordinate_change", "half_width", "direct_substitution", "samples"),
               ("symbols", "xi0")),
    "defect": (("n", "symbols", "kind", "lambda", "W", "r", "inner_kind", "kmax", "N", "x_width", "xi_center",
                "xi_width"), ("n", "symbols", "kind", "lambda")),
    "compose-check": (("n", "symbols", "lambda", "lambdas", "N", "width", "trials"), ("n", "symbols", "lambda")),
    "sweep": (("n", "r", "kind", "W", "inner_kind", "lambdas", "p", "saturating", "targets", "tolerance",
               "headroom"), ("n", "kind", "lambdas", "p")),
}

DESCRIPTIONS = {
    "delta": "exponent delta(n, p, r) and branch continuity at the critical p",
    "admissibility": "the three admissibility conditions at a base point",
    "reduce": "inductive elimination of xi_r..xi_2 and the final graph xi_1 = b",
    "defect": "quasimode defect table ||P_1^k1 ... P_r^kr u|| / ||u||",
    "compose-check": "composition expansion and commutator scaling for a symbol pair",
    "sweep": "L^p growth sweep with fitted exponent vs delta(n, p, r)",
}


class ConfigError(QmlabError):
    pass


@dataclass
class RunConfig:
    command: str
    n: int | None = None
    symbols: list[str] = field(default_factory=list)
    x0: list[float] | None = None
    xi0: list[float] | None = None
    lambdas: list[float] = field(default_factory=list)
    p: list[float] = field(default_factory=list)
    r: int = 1
    W: float = 1.0
    kind: str | None = None
    inner_kind: str = "cluster"
    tolerances: Tolerances = field(default_factory=Tolerances)
    output: str | None = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def parsed_symbols(self) -> list[Symbol]:
        out = []
        for s in self.symbols:
            try:
                out.append(parse_symbol(s, self.n))
            except SymbolSyntaxError as exc:
                raise ConfigError(f"malformed symbol {s!r} at position {exc.position}") from exc
        return out

    def base_point(self) -> PhasePoint:
        xi = self.xi0
        x = self.x0 if self.x0 is not None else [0.0] * len(xi)
        return PhasePoint(x, xi)


def _as_p(v):
    if isinstance(v, str):
        if v.strip().lower() in ("inf", "infinity", "oo"):
            return math.inf
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"invalid p value {v!r}") from None
    return float(v)


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Parse a TOML document into a validated :class:`RunConfig`."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    # a single table (e.g. [sweep]) may hold the keys
    if len(doc) == 1 and isinstance(next(iter(doc.values())), dict):
        name, body = next(iter(doc.items()))
        doc = dict(body)
        doc.setdefault("command", name)
    cmd = doc.get("command", command)
    if command is not None and cmd != command:
        raise ConfigError(f"config command {cmd!r} does not match requested {command!r}")
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown or missing command {cmd!r}; expected one of {', '.join(COMMANDS)}")
    allowed, required = KEYS[cmd]
    unknown = sorted(set(doc) - set(allowed) - set(COMMON_KEYS))
    if unknown:
        raise ConfigError(f"unknown key(s) for '{cmd}': {', '.join(unknown)}")
    missing = [k for k in required if k not in doc]
    if missing:
        raise ConfigError(f"missing required key(s) for '{cmd}': {', '.join(missing)}")

    cfg = RunConfig(command=cmd)
    cfg.tolerances = Tolerances(
        float(doc.get("grad_tol", 1e-8)), float(doc.get("indep_tol", 1e-8)), float(doc.get("curv_tol", 1e-8))
    )
    cfg.output = doc.get("output")
    cfg.seed = int(doc.get("seed", 0))
    if "n" in doc:
        cfg.n = int(doc["n"])
    if "symbols" in doc:
        cfg.symbols = [str(s) for s in _as_list(doc["symbols"])]
    if "xi0" in doc:
        cfg.xi0 = [float(v) for v in doc["xi0"]]
    if "x0" in doc:
        cfg.x0 = [float(v) for v in doc["x0"]]
    if "lambdas" in doc:
        cfg.lambdas = [float(v) for v in doc["lambdas"]]
        if any(b <= a for a, b in zip(cfg.lambdas, cfg.lambdas[1:])):
            raise ConfigError("'lambdas' must be strictly increasing")
    if "lambda" in doc:
        cfg.extra["lambda"] = float(doc["lambda"])
    if "p" in doc:
        cfg.p = [_as_p(v) for v in _as_list(doc["p"])]
    cfg.r = int(doc.get("r", 1))
    cfg.W = float(doc.get("W", 1.0))
    cfg.kind = doc.get("kind")
    cfg.inner_kind = doc.get("inner_kind", "cluster")
    for k in ("coordinate_change", "half_width", "direct_substitution", "samples", "kmax", "N", "x_width",
              "xi_center", "xi_width", "width", "trials", "saturating", "targets", "tolerance", "headroom"):
        if k in doc:
            cfg.extra[k] = doc[k]
    if cfg.symbols:
        if cfg.n is None:
            cfg.n = max(parse_symbol(s).dim for s in cfg.symbols) if cfg.symbols else None
            if cfg.xi0 is not None:
                cfg.n = len(cfg.xi0)
        cfg.parsed_symbols()
    if cfg.xi0 is not None and cfg.n is not None and len(cfg.xi0) != cfg.n:
        raise ConfigError(f"xi0 has {len(cfg.xi0)} entries, expected n={cfg.n}")
    if cmd == "delta" and len(cfg.p) != 1:
        raise ConfigError("'delta' takes a single p")
    return cfg


# ---------------------------------------------------------------------------
# command implementations; each returns an exit code and prints verdicts


def _verdict(ok: bool, label: str, detail: str = "") -> bool:
    print(f"{'PASS' if ok else 'FAIL'} {label}" + (f" {detail}" if detail else ""))
    return ok


def _write(cfg: RunConfig, text: str):
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def run_delta(cfg: RunConfig) -> int:
    from .analysis import ExponentQuery, critical_p, delta_exponent

    n, p, r = cfg.n, cfg.p[0], cfg.r
    value = delta_exponent(ExponentQuery(n, p, r))
    print(f"{value:.12g}")
    ok = True
    if r < n:
        pc = critical_p(n, r)
        d = n - r
        hi, lo = d / 2 - (d + 1) / pc, d / 4 - d / (2 * pc)
        ok = _verdict(abs(hi - lo) <= 1e-12, "branch-continuity", f"critical_p={pc:.12g} gap={abs(hi - lo):.3g}")
    _write(cfg, json.dumps({"n": n, "p": "inf" if math.isinf(p) else p, "r": r, "delta": value}, sort_keys=True) + "\n")
    return EXIT_OK if ok else EXIT_FAIL


def run_admissibility(cfg: RunConfig) -> int:
    rep = check_admissibility(cfg.parsed_symbols(), cfg.base_point(), cfg.tolerances)
    names = ("condition-1 hypersurface", "condition-2 independent-normals", "condition-3 curvature")
    details = (
        "gradient_norms=" + ",".join(f"{g:.6g}" for g in rep.gradient_norms),
        "min_singular_value=" + ("n/a" if rep.normal_matrix_min_singular_value is None
                                 else f"{rep.normal_matrix_min_singular_value:.6g}"),
        "eigenvalues=" + ("n/a" if rep.second_fundamental_form_eigenvalues is None
                          else ",".join(f"{e:.6g}" for e in rep.second_fundamental_form_eigenvalues))
        + f" sign={rep.sign_convention:+d}",
    )
    ok = True
    for name, passed, det in zip(names, rep.passes, details):
        if passed is None:
            print(f"SKIP {name} not-evaluated")
            ok = False
        else:
            ok &= _verdict(passed, name, det)
    _write(cfg, json.dumps({"passes": list(rep.passes), "gradient_norms": list(rep.gradient_norms),
                            "min_singular_value": rep.normal_matrix_min_singular_value,
                            "eigenvalues": rep.second_fundamental_form_eigenvalues,
                            "sign": rep.sign_convention}, sort_keys=True) + "\n")
    return EXIT_OK if ok else EXIT_FAIL


def run_reduce(cfg: RunConfig) -> int:
    from .reduction import DEFAULT_BOX, direct_substitution, format_trace, reduce_all

    syms = cfg.parsed_symbols()
    pt = cfg.base_point()
    C = cfg.extra.get("coordinate_change")
    trace = reduce_all(syms, pt, cfg.tolerances, float(cfg.extra.get("half_width", DEFAULT_BOX)),
                       None if C is None else np.asarray(C, float))
    text = format_trace(trace, int(cfg.extra.get("samples", 5)), cfg.seed)
    if cfg.extra.get("direct_substitution") and trace.stages:
        st = trace.stages[0]
        if st.graph.is_affine:
            direct = direct_substitution(syms[0], st.graph)
            text += f"\n[direct substitution]\np1(xi{st.index + 1} = graph) = {direct}\n"
    sys.stdout.write(text)
    _write(cfg, text)
    ok = _verdict(trace.completed and trace.all_positive, "reduction",
                  "certificates=" + ";".join(",".join(f"{e:.6g}" for e in c) for c in trace.certificates))
    return EXIT_OK if ok else EXIT_FAIL


def run_defect(cfg: RunConfig) -> int:
    from .analysis import grid_for
    from .quantization import TorusGrid
    from .quasimodes import QuasimodeSpec, build, defect_report

    lam = cfg.extra["lambda"]
    spec = QuasimodeSpec(cfg.kind, lam, cfg.W, cfg.r, cfg.inner_kind)
    grid = TorusGrid(cfg.n, int(cfg.extra["N"])) if "N" in cfg.extra else grid_for(spec, cfg.n, minimum=16)
    kw = {}
    if cfg.kind == "localized":
        kw = {"x_width": cfg.extra.get("x_width", 1.0), "xi_center": cfg.extra.get("xi_center"),
              "xi_width": cfg.extra.get("xi_width")}
    u = build(spec, grid, **kw)
    kmax = int(cfg.extra.get("kmax", 3))
    rep = defect_report(cfg.parsed_symbols(), u, spec.h, kmax)
    lines = ["multi_index,defect,normalized,window"]
    ok = True
    bound = 2 * cfg.W * spec.h + (cfg.W * spec.h) ** 2
    for k, v in rep.entries.items():
        w = "" if rep.window_entries is None else repr(rep.window_entries[k])
        lines.append(f"{'-'.join(map(str, k))},{v!r},{rep.normalized[k]!r},{w}")
        if cfg.kind == "cluster" and len(k) == 1 and k[0] >= 1:
            ok &= _verdict(v <= bound ** k[0], f"strong-quasimode k={k[0]}", f"defect={v:.6g} bound={bound ** k[0]:.6g}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    _write(cfg, text)
    return EXIT_OK if ok else EXIT_FAIL


def run_compose_check(cfg: RunConfig) -> int:
    from .analysis import fit_exponent
    from .quantization import TorusGrid, apply_expansion, apply_operator, commutator_defect, moyal_compose
    from .quasimodes import gaussian_packet

    syms = cfg.parsed_symbols()
    if len(syms) != 2:
        raise ConfigError("'compose-check' needs exactly two symbols")
    p, q = syms
    width = float(cfg.extra.get("width", 0.4))
    lam = cfg.extra["lambda"]
    k = [lam] + [0.0] * (cfg.n - 1)
    grid = TorusGrid(cfg.n, int(cfg.extra["N"])) if "N" in cfg.extra else TorusGrid.for_frequency(cfg.n, lam + 8 / width, 4.0)
    u = gaussian_packet(grid, k, width)
    h = 1.0 / lam
    exp = moyal_compose(p, q)
    lhs = apply_operator(p, apply_operator(q, u, h), h)
    err = (lhs - apply_expansion(exp, u, h)).norm() / max(lhs.norm(), 1e-300)
    ok = _verdict(err <= 1e-8, "composition-identity", f"relative_error={err:.3g} terms={len(exp.terms)}")
    out = [f"composition_relative_error,{err!r}"]
    lams = cfg.lambdas
    if lams:
        pts = []
        for lm in lams:
            g = TorusGrid.for_frequency(cfg.n, lm + 8 / width, 4.0)
            v = gaussian_packet(g, [lm] + [0.0] * (cfg.n - 1), width)
            d = commutator_defect(p, q, v, 1.0 / lm)
            out.append(f"commutator,{lm!r},{d!r}")
            pts.append((math.log(lm), math.log(d)))
        slope, _, _ = fit_exponent(pts)
        ok &= _verdict(slope <= -0.9, "commutator-scaling", f"slope_vs_log_1/h={slope:.4f}")
    text = "\n".join(out) + "\n"
    _write(cfg, text)
    return EXIT_OK if ok else EXIT_FAIL


def run_sweep_command(cfg: RunConfig) -> int:
    from .analysis import run_sweep, sweep_to_csv
    from .quasimodes import QuasimodeSpec

    lams = cfg.lambdas
    spec = QuasimodeSpec(cfg.kind, lams[0], cfg.W, cfg.r, cfg.inner_kind)
    r_ops = cfg.r if cfg.kind == "tensor_joint" else 1
    sat = [_as_p(v) for v in _as_list(cfg.extra.get("saturating", []))]
    targets = {_as_p(k): float(v) for k, v in cfg.extra.get("targets", {}).items()}
    saturating = {p: targets.get(p) for p in sat}
    headroom = float(cfg.extra.get("headroom", 8.0))
    res = run_sweep(spec, cfg.n, cfg.p, lams, r=r_ops, saturating=saturating,
                    tolerance=float(cfg.extra.get("tolerance", 0.15)), headroom=headroom)
    text = sweep_to_csv(res.values())
    ok = True
    for p, rr in res.items():
        ok &= _verdict(rr.passed, f"sweep p={'inf' if math.isinf(p) else f'{p:g}'}",
                       f"slope={rr.slope:.4f} delta={rr.expected:.4f} margin={rr.margin:.4f}")
    if cfg.output:
        _write(cfg, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_FAIL


RUNNERS = {
    "delta": run_delta,
    "admissibility": run_admissibility,
    "reduce": run_reduce,
    "defect": run_defect,
    "compose-check": run_compose_check,
    "sweep": run_sweep_command,
}


def dispatch(cfg: RunConfig, threads: int | None = None) -> int:
    """Run the pipeline for ``cfg`` and map failures onto exit codes."""
    try:
        with sfft.set_workers(threads or 1):
            return RUNNERS[cfg.command](cfg)
    except PreconditionError as exc:
        return _error(EXIT_PRECONDITION, exc)
    except (ConfigError, SymbolSyntaxError) as exc:
        return _error(EXIT_USAGE, exc)
    except QmlabError as exc:
        return _error(EXIT_FAIL, exc)
    except (ValueError, TypeError, KeyError) as exc:
        return _error(EXIT_USAGE, exc)


def _error(code: int, exc) -> int:
    reason = " ".join(str(exc).split())
    print(f"ERROR {code}: {reason}", file=sys.stderr)
    return code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"ERROR {EXIT_USAGE}: {' '.join(message.split())}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _keys_epilog(cmd: str) -> str:
    allowed, required = KEYS[cmd]
    req = ", ".join(required)
    opt = ", ".join(k for k in allowed if k not in required)
    common = ", ".join(k for k in COMMON_KEYS if k != "command")
    return f"config keys:\n  required: {req}\n  optional: {opt}\n  common:   {common}"


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qmlab", description="Joint quasimode laboratory.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd, help=DESCRIPTIONS[cmd], description=DESCRIPTIONS[cmd],
                            epilog=_keys_epilog(cmd), formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("-c", "--config", required=True, help="TOML config file")
        sp.add_argument("-o", "--output", help="output path (overrides the config)")
        sp.add_argument("--threads", type=int, default=1, help="FFT worker threads")
        sp.add_argument("--seed", type=int, help="random seed (overrides the config)")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        for name in ("grad-tol", "indep-tol", "curv-tol"):
            sp.add_argument(f"--{name}", type=float, help="tolerance override")
        sp.add_argument("--fit-tol", type=float, help="sweep slope tolerance override")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        return _error(EXIT_USAGE, f"cannot read config: {exc}")
    try:
        cfg = parse_config(text, args.command)
    except (ConfigError, SymbolSyntaxError, ValueError) as exc:
        return _error(EXIT_USAGE, exc)
    if args.output:
        cfg.output = args.output
    if args.seed is not None:
        cfg.seed = args.seed
    t = cfg.tolerances
    cfg.tolerances = Tolerances(
        args.grad_tol if args.grad_tol is not None else t.grad_tol,
        args.indep_tol if args.indep_tol is not None else t.indep_tol,
        args.curv_tol if args.curv_tol is not None else t.curv_tol,
    )
    if args.fit_tol is not None:
        cfg.extra["tolerance"] = args.fit_tol
    return dispatch(cfg, args.threads)


if __name__ == "__main__":
    sys.exit(main())
