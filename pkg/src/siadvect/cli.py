"""Command line front end: configs, experiment orchestration, CSV, dumps.

The config schema is flat key=value text (one key per line, # comments).
Parsing is fail-closed: unknown keys, bad enums, and malformed numbers are
rejected with the offending line number, and nothing is written to disk
unless the whole config validates.  Tables are emitted as deterministic
CSV with a fixed column order so repeated runs are byte-comparable.
"""

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from .core import make_grid
from .experiments import (attach_eoc, builtin_case, error_ref_e,
                          run_experiment)
from .schemes1d import Kappa
from .schemes2d import SchemeSpec
from .solver import SweepPolicy
from .stability import max_amplification, max_amplification_box

CASE_NAMES = ("rotation_euclid", "rotation_maxdist", "exp_velocity",
              "zalesak", "vortex", "vortex_short", "quadratic_2d",
              "cubic_2d", "quadratic_1d", "gaussian_1d")

SCHEME_FAMILIES = ("si1d", "impl1d", "si2d", "ctu")

KAPPA_NAMES = ("kp", "km", "k0", "k3", "im3")

# named scheme+kappa combinations for the stability subcommand
STABILITY_ALIASES = {
    "siLW1d": ("si1d", "kp"), "siF1d": ("si1d", "k0"), "siQ1d": ("si1d", "k3"),
    "siLW2d": ("si2d", "kp"), "siF2d": ("si2d", "k0"), "siQ2d": ("si2d", "k3"),
    "im3": ("impl1d", "im3"), "ctu": ("ctu", "k3"),
}

CSV_HEADER = "M,case,scheme,kappa,N,max_courant,error,eoc,sweeps,residual"


class ConfigError(Exception):
    """Config or usage problem; maps to exit status 2."""


@dataclass(frozen=True)
class RunConfig:
    case: str
    scheme: str
    kappa: str
    grids: tuple
    n_rule: str
    theta: float = 1.0
    sweeps: str = "1"
    out: str = "."
    dump_stride: int = 0


def _fail(lineno, msg):
    raise ConfigError(f"line {lineno}: {msg}")


def parse_kappa(text: str, lineno: int = 0) -> Kappa:
    """One kappa name or const:<value> to a Kappa rule."""
    if text == "kp":
        return Kappa.upwind_sign()
    if text == "km":
        return Kappa.downwind_sign()
    if text == "k0":
        return Kappa.central()
    if text == "k3":
        return Kappa.third_order_semi_implicit()
    if text == "im3":
        return Kappa.third_order_implicit()
    if text.startswith("const:"):
        try:
            return Kappa.constant(float(text[6:]))
        except ValueError as exc:
            _fail(lineno, f"bad kappa {text!r}: {exc}")
    allowed = ", ".join(KAPPA_NAMES) + ", const:<value>"
    _fail(lineno, f"unknown kappa {text!r}; allowed: {allowed}")


def resolve_n(rule: str, M: int, lineno: int = 0) -> int:
    """N rule to a step count: either an integer or a ratio like 5M/4."""
    if "M" not in rule:
        try:
            n = int(rule)
        except ValueError:
            _fail(lineno, f"bad N rule {rule!r}: not an integer")
        if n < 1:
            _fail(lineno, f"bad N rule {rule!r}: N must be >= 1")
        return n
    head, _, tail = rule.partition("M")
    try:
        num = int(head) if head else 1
        den = int(tail[1:]) if tail.startswith("/") else 1
        if tail and not tail.startswith("/"):
            raise ValueError(rule)
    except ValueError:
        _fail(lineno, f"bad N rule {rule!r}; want an integer, M, aM, or aM/b")
    if num < 1 or den < 1:
        _fail(lineno, f"bad N rule {rule!r}: negative or zero ratio")
    if (num * M) % den:
        _fail(lineno, f"N rule {rule!r} gives a fractional step count at M={M}")
    return num * M // den


def parse_policy(text: str, lineno: int = 0) -> SweepPolicy:
    if text.startswith("tol:"):
        try:
            return SweepPolicy.tolerance(float(text[4:]))
        except ValueError:
            _fail(lineno, f"bad sweep policy {text!r}: malformed tolerance")
    try:
        return SweepPolicy.fixed(int(text))
    except ValueError:
        _fail(lineno, f"bad sweep policy {text!r}; want a count or tol:<value>")


def make_scheme(family: str, kappa: str, theta: float = 1.0,
                lineno: int = 0) -> SchemeSpec:
    parts = kappa.split(",")
    if len(parts) > 2:
        _fail(lineno, f"kappa {kappa!r}: at most two comma-separated choices")
    kx = parse_kappa(parts[0], lineno)
    ky = parse_kappa(parts[1], lineno) if len(parts) == 2 else kx
    if family == "si1d":
        return SchemeSpec.semi_implicit_1d(kx)
    if family == "impl1d":
        return SchemeSpec.fully_implicit_1d(kx)
    if family == "si2d":
        return SchemeSpec.semi_implicit_2d(kx, ky)
    if family == "ctu":
        return SchemeSpec.ctu(kx, ky, theta)
    _fail(lineno, f"unknown scheme {family!r}; allowed: "
          + ", ".join(SCHEME_FAMILIES))


def parse_config(text: str) -> RunConfig:
    """Flat key=value config text to a validated RunConfig."""
    seen = {}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            _fail(lineno, f"expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in ("case", "scheme", "kappa", "theta", "M", "N",
                       "sweeps", "out", "dump_stride"):
            _fail(lineno, f"unknown key {key!r}")
        if key in seen:
            _fail(lineno, f"duplicate key {key!r}")
        if not value:
            _fail(lineno, f"empty value for {key!r}")
        seen[key] = value
        lines[key] = lineno

    for key in ("case", "scheme", "kappa", "M", "N"):
        if key not in seen:
            raise ConfigError(f"missing required key {key!r}")

    case = seen["case"]
    if case not in CASE_NAMES:
        _fail(lines["case"], f"unknown case {case!r}; allowed: "
              + ", ".join(CASE_NAMES))
    family = seen["scheme"]
    if family not in SCHEME_FAMILIES:
        _fail(lines["scheme"], f"unknown scheme {family!r}; allowed: "
              + ", ".join(SCHEME_FAMILIES))

    theta = 1.0
    if "theta" in seen:
        if family != "ctu":
            _fail(lines["theta"], "theta applies to the ctu scheme only")
        try:
            theta = float(seen["theta"])
        except ValueError:
            _fail(lines["theta"], f"malformed theta {seen['theta']!r}")
        if not 0.0 <= theta <= 1.0:
            _fail(lines["theta"], f"theta={theta} outside [0, 1]")

    try:
        grids = tuple(int(m) for m in seen["M"].split(","))
    except ValueError:
        _fail(lines["M"], f"malformed M list {seen['M']!r}")
    if any(m < 2 for m in grids):
        _fail(lines["M"], "grid sizes must be >= 2")
    if list(grids) != sorted(grids) or len(set(grids)) != len(grids):
        _fail(lines["M"], "M list must be strictly ascending")

    dump_stride = 0
    if "dump_stride" in seen:
        try:
            dump_stride = int(seen["dump_stride"])
        except ValueError:
            _fail(lines["dump_stride"],
                  f"malformed dump_stride {seen['dump_stride']!r}")
        if dump_stride < 0:
            _fail(lines["dump_stride"], "dump_stride must be >= 0")

    cfg = RunConfig(case=case, scheme=family, kappa=seen["kappa"],
                    grids=grids, n_rule=seen["N"], theta=theta,
                    sweeps=seen.get("sweeps", "1"),
                    out=seen.get("out", "."), dump_stride=dump_stride)
    # constructing the pieces validates enums and number formats
    make_scheme(cfg.scheme, cfg.kappa, cfg.theta, lines["kappa"])
    parse_policy(cfg.sweeps, lines.get("sweeps", 0))
    for m in grids:
        resolve_n(cfg.n_rule, m, lines["N"])
    builtin = builtin_case(cfg.case)
    scheme_dim = 1 if cfg.scheme in ("si1d", "impl1d") else 2
    if builtin.dim != scheme_dim:
        _fail(lines["scheme"],
              f"case {case!r} is {builtin.dim}D but scheme {family!r} "
              f"is {scheme_dim}D")
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"case={cfg.case}", f"scheme={cfg.scheme}", f"kappa={cfg.kappa}"]
    if cfg.scheme == "ctu":
        lines.append(f"theta={cfg.theta:g}")
    lines += [f"M={','.join(str(m) for m in cfg.grids)}", f"N={cfg.n_rule}",
              f"sweeps={cfg.sweeps}", f"out={cfg.out}",
              f"dump_stride={cfg.dump_stride}"]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TableRow:
    M: int
    case: str
    scheme: str
    kappa: str
    N: int
    max_courant: float
    error: float = None
    eoc: float = None
    sweeps: int = 0
    residual: float = 0.0


def _fmt(x, sci=False):
    if x is None:
        return ""
    return f"{x:.5e}" if sci else f"{x:.6g}"


def emit_table(rows) -> str:
    """Rows to CSV text with the fixed column order and 6-digit floats."""
    out = [CSV_HEADER]
    for r in rows:
        out.append(",".join([
            str(r.M), r.case, r.scheme, r.kappa, str(r.N),
            _fmt(r.max_courant), _fmt(r.error, sci=True), _fmt(r.eoc),
            str(r.sweeps), _fmt(r.residual, sci=True)]))
    return "\n".join(out) + "\n"


def dump_field(values, grid, stem: str, time: float = 0.0,
               exact=None) -> list:
    """Full-precision text dump of one nodal field (plus optional exact).

    The format is a # commented header (M, bounds, time) followed by ny
    rows of nx whitespace-separated values, so generic contour plotters
    consume it directly.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != grid.shape:
        raise ValueError(f"field shape {values.shape} != grid {grid.shape}")
    if not np.isfinite(values).all():
        raise ValueError("field contains non-finite values")
    paths = []
    for suffix, data in (("", values), ("_exact", exact)):
        if data is None:
            continue
        path = f"{stem}{suffix}.dat"
        body = "\n".join(" ".join(f"{v:.17g}" for v in row) for row in data)
        try:
            with open(path, "w") as fh:
                fh.write(f"# M {grid.M}\n")
                fh.write(f"# x {grid.x_min:.17g} {grid.x_max:.17g}\n")
                fh.write(f"# y {grid.y_min:.17g} {grid.y_max:.17g}\n")
                fh.write(f"# t {time:.17g}\n")
                fh.write(body + "\n")
        except OSError as exc:
            raise RuntimeError(f"cannot write {path}: {exc}") from exc
        paths.append(path)
    return paths


def read_field_dump(path: str):
    """Read a dump back: (meta dict with M/x/y/t, value array)."""
    meta = {}
    rows = []
    try:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    parts = line[1:].split()
                    key, vals = parts[0], [float(p) for p in parts[1:]]
                    meta[key] = vals[0] if len(vals) == 1 else tuple(vals)
                else:
                    rows.append([float(p) for p in line.split()])
    except OSError as exc:
        raise RuntimeError(f"cannot read {path}: {exc}") from exc
    if "M" not in meta or not rows:
        raise RuntimeError(f"{path}: not a field dump")
    meta["M"] = int(meta["M"])
    return meta, np.asarray(rows, dtype=np.float64)


def _config_rows(cfg: RunConfig, with_eoc: bool):
    scheme = make_scheme(cfg.scheme, cfg.kappa, cfg.theta)
    policy = parse_policy(cfg.sweeps)
    case = builtin_case(cfg.case)
    reports = []
    results = []
    for M in cfg.grids:
        N = resolve_n(cfg.n_rule, M)
        res = run_experiment(case, scheme, M, N, policy,
                             store_series=cfg.dump_stride > 0,
                             series_stride=max(cfg.dump_stride, 1))
        reports.append(res.report)
        results.append(res)
    if with_eoc:
        attach_eoc(reports)
    rows = [TableRow(M=rep.M, case=cfg.case, scheme=cfg.scheme,
                     kappa=cfg.kappa, N=rep.N, max_courant=rep.max_courant,
                     error=rep.error, eoc=rep.eoc, sweeps=res.sweeps,
                     residual=res.residual)
            for rep, res in zip(reports, results)]
    return rows, results


def _stem(cfg: RunConfig) -> str:
    safe_kappa = cfg.kappa.replace(":", "-").replace(",", "+")
    return f"{cfg.case}_{cfg.scheme}_{safe_kappa}"


def _write_outputs(cfg: RunConfig, rows, results) -> list:
    os.makedirs(cfg.out, exist_ok=True)
    paths = []
    csv_path = os.path.join(cfg.out, _stem(cfg) + ".csv")
    with open(csv_path, "w") as fh:
        fh.write(emit_table(rows))
    paths.append(csv_path)
    if cfg.dump_stride > 0:
        for res in results:
            grid = res.final.grid
            for k, (u, t) in enumerate(zip(res.series, res.times)):
                stem = os.path.join(
                    cfg.out, f"{_stem(cfg)}_M{grid.M}_{k:04d}")
                paths += dump_field(u, grid, stem, time=float(t))
    return paths


def _cmd_run(args, with_eoc: bool) -> int:
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    cfg = parse_config(text)
    rows, results = _config_rows(cfg, with_eoc)
    for path in _write_outputs(cfg, rows, results):
        print(path)
    return 0


def _ray_direction(name: str):
    rays = {"x": (1.0, 0.0), "y": (0.0, 1.0),
            "diag": (1.0, 1.0)}
    if name not in rays:
        raise ConfigError(f"unknown ray {name!r}; allowed: x, y, diag")
    return rays[name]


def _cmd_stability(args) -> int:
    if args.scheme in STABILITY_ALIASES:
        family, kappa = STABILITY_ALIASES[args.scheme]
    elif args.scheme in SCHEME_FAMILIES:
        family, kappa = args.scheme, args.kappa
        if kappa is None:
            raise ConfigError(f"scheme {args.scheme!r} needs --kappa")
    else:
        allowed = ", ".join(list(STABILITY_ALIASES) + list(SCHEME_FAMILIES))
        raise ConfigError(f"unknown scheme {args.scheme!r}; allowed: {allowed}")
    scheme = make_scheme(family, kappa, args.theta)
    rx, ry = _ray_direction(args.ray)
    if args.max <= 0:
        raise ConfigError("--max must be positive")
    if args.points < 2:
        raise ConfigError("--points must be >= 2")
    lines = ["C,D,max_abs_s"]
    for t in np.linspace(0.0, args.max, args.points)[1:]:
        c, d = t * rx, t * ry
        if scheme.dim == 1:
            rep = max_amplification(scheme, c)
        else:
            # published 2D limits bound both Courant numbers at once, so a
            # ray point (C, D) reports the supremum over the whole box
            rep = max_amplification_box(scheme, c, d)
        lines.append(f"{c:.6g},{d:.6g},{rep.max_abs_s:.15g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(args.out)
    else:
        sys.stdout.write(text)
    return 0


TABLE_MATRICES = {
    "table1": dict(cases=("rotation_euclid", "rotation_maxdist"),
                   schemes=(("si2d", "kp"), ("si2d", "km"), ("si2d", "k0"),
                            ("si2d", "k3")),
                   grids=(40, 80, 160), n_rules=("5M/4",)),
    "table2": dict(cases=("exp_velocity",),
                   schemes=(("si2d", "kp"), ("si2d", "km"), ("si2d", "k0"),
                            ("ctu", "k3")),
                   grids=(40, 80, 160), n_rules=("M", "M/10")),
    "table3": dict(cases=("zalesak",),
                   schemes=(("si2d", "kp"), ("si2d", "km"), ("si2d", "k0"),
                            ("si2d", "k3")),
                   grids=(40, 80, 160), n_rules=("5M/4",)),
}


def _cmd_table(args) -> int:
    if args.name not in TABLE_MATRICES:
        raise ConfigError(f"unknown table {args.name!r}; allowed: "
                          + ", ".join(TABLE_MATRICES))
    spec = TABLE_MATRICES[args.name]
    os.makedirs(args.out, exist_ok=True)
    written = []
    for case_name in spec["cases"]:
        rows = []
        for family, kappa in spec["schemes"]:
            for n_rule in spec["n_rules"]:
                cfg = RunConfig(case=case_name, scheme=family, kappa=kappa,
                                grids=spec["grids"], n_rule=n_rule,
                                sweeps=args.sweeps)
                part, _ = _config_rows(cfg, with_eoc=True)
                rows += part
        path = os.path.join(args.out, f"{args.name}_{case_name}.csv")
        with open(path, "w") as fh:
            fh.write(emit_table(rows))
        written.append(path)
    if args.name == "table3" and args.vortex_ref:
        written.append(_vortex_table(args))
    for path in written:
        print(path)
    return 0


def _vortex_table(args) -> str:
    """Vortex rows for table3 against a self-computed reference run."""
    case = builtin_case("vortex")
    m_ref = args.vortex_ref
    grids = [m for m in (80, 160, 320) if m_ref % m == 0 and m < m_ref]
    if not grids:
        raise ConfigError(f"--vortex-ref={m_ref} does not refine 80/160/320")
    rows = []
    for family, kappa in TABLE_MATRICES["table3"]["schemes"]:
        scheme = make_scheme(family, kappa)
        ref = run_experiment(case, scheme, m_ref, 5 * m_ref // 4,
                             parse_policy(args.sweeps))
        reports = []
        sweeps = []
        for M in grids:
            res = run_experiment(case, scheme, M, 5 * M // 4,
                                 parse_policy(args.sweeps))
            e = error_ref_e(res.final.values, ref.final.values, M, m_ref)
            rep = res.report
            rep.error = e
            reports.append(rep)
            sweeps.append((res.sweeps, res.residual))
        attach_eoc(reports)
        rows += [TableRow(M=rep.M, case="vortex", scheme=family, kappa=kappa,
                          N=rep.N, max_courant=rep.max_courant,
                          error=rep.error, eoc=rep.eoc, sweeps=s, residual=r)
                 for rep, (s, r) in zip(reports, sweeps)]
    path = os.path.join(args.out, "table3_vortex.csv")
    with open(path, "w") as fh:
        fh.write(emit_table(rows))
    return path


def _cmd_dump(args) -> int:
    meta, values = read_field_dump(args.input)
    x = meta.get("x", (-1.0, 1.0))
    y = meta.get("y", (-1.0, 1.0))
    if values.shape[0] == 1:
        grid = make_grid(x[0], x[1], meta["M"])
    else:
        grid = make_grid(x[0], x[1], meta["M"], y[0], y[1])
    for path in dump_field(values, grid, args.out, time=meta.get("t", 0.0)):
        print(path)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="siadvect",
        description="semi-implicit kappa-scheme advection runs")
    sub = top.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one config file")
    p_run.add_argument("config")
    p_conv = sub.add_parser("converge",
                            help="run the M list of a config and append EOC")
    p_conv.add_argument("config")

    p_st = sub.add_parser("stability", help="map max |S| along a Courant ray")
    p_st.add_argument("--scheme", required=True)
    p_st.add_argument("--kappa")
    p_st.add_argument("--theta", type=float, default=1.0)
    p_st.add_argument("--ray", default="x")
    p_st.add_argument("--max", type=float, required=True)
    p_st.add_argument("--points", type=int, default=101)
    p_st.add_argument("--out")

    p_tab = sub.add_parser("table", help="reproduce a named result table")
    p_tab.add_argument("--name", required=True)
    p_tab.add_argument("--out", default=".")
    p_tab.add_argument("--sweeps", default="1")
    p_tab.add_argument("--vortex-ref", type=int, default=0,
                       help="reference grid for vortex rows (0 skips them)")

    p_dump = sub.add_parser("dump", help="re-emit a stored field dump")
    p_dump.add_argument("--in", dest="input", required=True)
    p_dump.add_argument("--out", required=True)
    return top


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "run":
            return _cmd_run(args, with_eoc=False)
        if args.command == "converge":
            return _cmd_run(args, with_eoc=True)
        if args.command == "stability":
            return _cmd_stability(args)
        if args.command == "table":
            return _cmd_table(args)
        if args.command == "dump":
            return _cmd_dump(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
