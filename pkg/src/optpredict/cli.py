"""Command line front end: ``optpredict <command> [options]``.

Options can also come from a flat ``key=value`` config file (``--config``);
command-line values win. List-valued keys take comma-separated values and
integer ranges ``a..b``.

Exit codes: 0 pass, 1 fail, 2 usage/config error, 3 inconclusive.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from . import klein_gordon as kg
from . import op_core
from . import stochastic as st
from .errors import OptPredictError
from .klein_gordon import KgParams, KgState

COMMANDS = ("bounds", "compare", "theorem1", "theorem2", "identities", "smooth", "lowerbound-scan")
EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_INCONCLUSIVE = 0, 1, 2, 3
VERDICT_EXIT = {st.PASS: 0, st.FAIL: 1, st.INCONCLUSIVE: 3, st.EXPLORATORY: 0}
FIELD_POINTS = 256
E_AGREE_TOL = 1e-6

KEYS = (
    "n", "r", "sigma", "scaled_sigma2", "nu", "t", "samples", "seed", "out", "format",
    "force_hypothesis", "r_max", "smoothness", "v0_file", "field_out",
)


class ConfigError(Exception):
    def __init__(self, key: str, message: str):
        super().__init__(f"invalid value for '{key}': {message}")
        self.key = key


def _ints(key, text) -> list[int]:
    out = []
    for part in str(text).split(","):
        part = part.strip()
        m = re.fullmatch(r"(-?\d+)\.\.(-?\d+)", part)
        try:
            if m:
                lo, hi = int(m.group(1)), int(m.group(2))
                if hi < lo:
                    raise ValueError
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise ConfigError(key, f"expected integers or a..b ranges, got {text!r}") from None
    return out


def _floats(key, text) -> list[float]:
    try:
        vals = [float(p) for p in str(text).split(",")]
    except ValueError:
        raise ConfigError(key, f"expected numbers, got {text!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise ConfigError(key, "values must be finite")
    return vals


def _bool(key, text) -> bool:
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {text!r}")


def read_config_file(path: str) -> dict:
    raw = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError("config", str(exc)) from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(key, "unknown key")
        raw[key] = value
    return raw


@dataclass
class RunConfig:
    command: str
    n: list[int]
    r: list[int]
    sigma: Optional[list[float]]
    scaled_sigma2: Optional[list[float]]
    nu: Optional[float]
    t: Optional[list[float]]
    samples: int
    seed: int
    out: Optional[str]
    output_format: str
    force_hypothesis: bool
    r_max: Optional[int]
    smoothness: int
    v0_file: Optional[str]
    field_out: Optional[str]

    @classmethod
    def from_raw(cls, command: str, raw: dict) -> "RunConfig":
        defaults = {
            "bounds": dict(n="1..8", r="1..3"),
            "compare": dict(n="2", r="1", nu="0.5", t=",".join(f"{0.5 * i:g}" for i in range(21))),
            "theorem1": dict(n="1", r="1", nu="0.5", t="1,5", samples="10000"),
            "theorem2": dict(n="1", r="0,1", nu="0", samples="2000"),
            "identities": dict(n="2", r="2", nu="0.5", samples="10000"),
            "smooth": dict(n="2", r="2", nu="0"),
            "lowerbound-scan": dict(n="4", r="1", nu="0", t=",".join(f"{0.25 * i:g}" for i in range(33))),
        }[command]
        vals = {**defaults, **{k: v for k, v in raw.items() if v is not None}}

        def get(key, conv, default=None):
            return conv(key, vals[key]) if key in vals else default

        cfg = cls(
            command=command,
            n=get("n", _ints),
            r=get("r", _ints),
            sigma=get("sigma", _floats),
            scaled_sigma2=get("scaled_sigma2", _floats),
            nu=get("nu", lambda k, v: _single(k, _floats(k, v))),
            t=get("t", _floats),
            samples=get("samples", lambda k, v: _single(k, _ints(k, v)), 1000),
            seed=get("seed", lambda k, v: _single(k, _ints(k, v)), 0),
            out=vals.get("out"),
            output_format=str(vals.get("format", "csv")).lower(),
            force_hypothesis=get("force_hypothesis", _bool, False),
            r_max=get("r_max", lambda k, v: _single(k, _ints(k, v))),
            smoothness=get("smoothness", lambda k, v: _single(k, _ints(k, v)), 3),
            v0_file=vals.get("v0_file"),
            field_out=vals.get("field_out"),
        )
        cfg.validate()
        return cfg

    def validate(self):
        if self.output_format not in ("csv", "json"):
            raise ConfigError("format", "must be csv or json")
        if not self.n or min(self.n) < 1:
            raise ConfigError("n", "need n >= 1")
        if not self.r or min(self.r) < 0:
            raise ConfigError("r", "need r >= 0")
        if self.sigma is not None and min(self.sigma) <= 0:
            raise ConfigError("sigma", "need sigma > 0")
        if self.scaled_sigma2 is not None and min(self.scaled_sigma2) <= 0:
            raise ConfigError("scaled_sigma2", "need (2n+1) sigma^2 > 0")
        if self.sigma is not None and self.scaled_sigma2 is not None:
            raise ConfigError("sigma", "give either sigma or scaled_sigma2, not both")
        if self.samples < 1:
            raise ConfigError("samples", "need at least one sample")
        if self.seed < 0:
            raise ConfigError("seed", "need a nonnegative seed")
        if self.t is not None and min(self.t) < 0:
            raise ConfigError("t", "need t >= 0")
        if self.nu is not None and self.nu < 0:
            raise ConfigError("nu", "need nu >= 0")
        if self.command == "theorem1" and not self.nu > 0:
            raise ConfigError("nu", "theorem1 needs nu > 0")
        if self.smoothness < 0:
            raise ConfigError("smoothness", "need s >= 0")
        if self.command != "bounds":
            for key in ("n", "sigma", "scaled_sigma2") + (() if self.command == "theorem2" else ("r",)):
                val = getattr(self, key)
                if val is not None and len(val) != 1:
                    raise ConfigError(key, f"{self.command} takes a single value")
        if self.command == "theorem2" and self.r_max is not None and self.r_max <= max(self.r):
            raise ConfigError("r_max", "must exceed every r")

    def sigmas(self, n: int) -> list[float]:
        """Kernel widths for resolution ``n``; default is the theorem boundary for ``nu``."""
        if self.sigma is not None:
            return list(self.sigma)
        if self.scaled_sigma2 is not None:
            return [math.sqrt(s / (2 * n + 1)) for s in self.scaled_sigma2]
        if self.command == "bounds":
            return [math.sqrt(s / (2 * n + 1)) for s in (2.0, 4.0, 8.0, 16.0)]
        return [math.sqrt(kg.theorem_sigma2(n, self.nu or 0.0))]


def _single(key, vals):
    if len(vals) != 1:
        raise ConfigError(key, "expects a single value")
    return vals[0]


class HypothesisRejected(Exception):
    pass


def _check_theorem_hypothesis(cfg: RunConfig, params: KgParams) -> bool:
    ok = params.theorem_hypothesis(cfg.nu or 0.0)
    if not ok and not cfg.force_hypothesis:
        raise HypothesisRejected(
            f"(2n+1) sigma^2 = {params.scaled_sigma2:.6g} is below 6 (nu+1) log(2n+1) "
            f"for n={params.n}, nu={cfg.nu}; pass --force-hypothesis to run anyway"
        )
    return ok


# --------------------------------------------------------------------------
# serialization


def fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            raise ValueError("refusing to serialize a non-finite value")
        return "%.17g" % v
    if isinstance(value, (list, tuple)):
        return ";".join(fmt(v) for v in value)
    if value is None:
        return ""
    return str(value)


def rows_to_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def report_to_csv(rep: st.ExperimentReport) -> str:
    d = rep.to_dict()
    rows = [[rep.experiment, "param", k, v, None] for k, v in d["params"].items()]
    rows += [[rep.experiment, "threshold", k, v, None] for k, v in d["thresholds"].items()]
    rows += [[rep.experiment, "estimate", e["name"], e["value"], e["stderr"]] for e in d["estimates"]]
    rows.append([rep.experiment, "seed", "seed", rep.seed, None])
    rows.append([rep.experiment, "version", "version", rep.version, None])
    rows.append([rep.experiment, "verdict", "verdict", rep.verdict, None])
    return rows_to_csv(["experiment", "kind", "name", "value", "stderr"], rows)


def _json_dump(obj) -> str:
    def clean(x):
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, np.integer):
            return int(x)
        if isinstance(x, np.floating):
            return float(x)
        return x

    return json.dumps(clean(obj), indent=2, allow_nan=False) + "\n"


def table_to_json(experiment: str, params: dict, header: list[str], rows: list[list], verdict: str) -> str:
    return _json_dump(
        {
            "experiment": experiment,
            "params": params,
            "rows": [dict(zip(header, row)) for row in rows],
            "verdict": verdict,
            "version": __version__,
        }
    )


# --------------------------------------------------------------------------
# commands; each returns (exit code, main output, extra files)


BOUNDS_HEADER = ["n", "r", "sigma", "exact_defect_norm", "lemma2_bound", "hypothesis_ok"]


def _bounds_row(n, r, sigma, force):
    params = KgParams(n, r, sigma)
    ok = params.lemma2_hypothesis
    if not ok and not force:
        raise HypothesisRejected(
            f"(2n+1) sigma^2 = {params.scaled_sigma2:.6g} < 2 at n={n}; pass --force-hypothesis to chart it"
        )
    exact = kg.exact_defect_norm(kg.build(params))
    return [n, r, sigma, exact, kg.lemma2_bound(params, force=True), ok]


def cmd_bounds(cfg: RunConfig):
    grid = [(n, r, s) for n in cfg.n for r in cfg.r for s in cfg.sigmas(n)]
    with ThreadPoolExecutor(max_workers=st.worker_count()) as pool:
        rows = list(pool.map(lambda g: _bounds_row(*g, cfg.force_hypothesis), grid))
    bad = [row for row in rows if row[5] and row[3] > row[4]]
    code = EXIT_FAIL if bad else EXIT_PASS
    verdict = st.FAIL if bad else st.PASS
    params = {"n": cfg.n, "r": cfg.r, "force_hypothesis": cfg.force_hypothesis}
    if cfg.output_format == "json":
        return code, table_to_json("bounds", params, BOUNDS_HEADER, rows, verdict), {}
    return code, rows_to_csv(BOUNDS_HEADER, rows), {}


COMPARE_HEADER = [
    "t", "error_direct", "error_quadrature", "error_max_component_diff",
    "lemma1_bound", "theorem1_threshold", "hypothesis_ok",
]
FIELD_HEADER = ["t", "x", "u_exact", "u_approx", "pi_exact", "pi_approx"]


def field_values(state: KgState, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``u`` and ``u_t`` on the points ``x`` from their coefficients."""
    m = state.m
    k = kg.wavenumbers(m)
    signed = np.arange(2 * m + 1) - m
    phase = np.outer(x, k)
    basis = np.where(signed < 0, np.cos(phase), np.sin(phase)) / math.sqrt(math.pi)
    basis[:, m] = 1.0 / math.sqrt(2.0 * math.pi)
    return basis @ state.q, basis @ state.p


def _load_v0(path: str, length: int) -> np.ndarray:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("v0_file", str(exc)) from None
    try:
        v0 = np.array([float(tok) for tok in re.split(r"[\s,]+", text.strip()) if tok])
    except ValueError:
        raise ConfigError("v0_file", "file must contain numbers") from None
    if v0.size != length or not np.all(np.isfinite(v0)):
        raise ConfigError("v0_file", f"expected {length} finite numbers, got {v0.size}")
    return v0


def cmd_compare(cfg: RunConfig):
    n, r, sigma = cfg.n[0], cfg.r[0], cfg.sigmas(cfg.n[0])[0]
    params = KgParams(n, r, sigma)
    ok = _check_theorem_hypothesis(cfg, params)
    sys_kg = kg.build(params)
    if cfg.v0_file:
        v0 = _load_v0(cfg.v0_file, sys_kg.n_constraints)
    else:
        state = st.sample_prior(st.GaussianMeasure(sys_kg), st.RngStream(cfg.seed, 0))
        v0 = st.constraint_values(sys_kg, state)
    lin = sys_kg.linear_system(closed_form=True)
    con = op_core.ConstraintSet(lin, sys_kg.blocks().constraint_matrix())
    nu = cfg.nu or 0.0
    xs = 2.0 * np.pi * np.arange(FIELD_POINTS) / FIELD_POINTS

    rows, field_rows, worst = [], [], 0.0
    violated = False
    for t in cfg.t:
        ex = kg.kg_exact_mean(sys_kg, v0, t)
        ap = kg.kg_approx_mean(sys_kg, v0, t)
        e_direct = (ap - ex).as_vector()
        e_quad = op_core.error_integral(lin, con, v0, t)
        diff = float(np.max(np.abs(e_direct - e_quad)))
        worst = max(worst, diff)
        err = sys_kg.a_norm(ap - ex)
        bound = kg.kg_lemma1_bound(sys_kg, v0, t)
        violated |= err > bound + 1e-9
        rows.append([t, err, lin.a_norm(e_quad), diff, bound, 2.3 * t / float(params.n_points) ** nu, ok])
        ue, pe = field_values(ex, xs)
        ua, pa = field_values(ap, xs)
        field_rows += [[t, x, a, b, c, d] for x, a, b, c, d in zip(xs, ue, ua, pe, pa)]

    failed = worst > E_AGREE_TOL or violated
    code = EXIT_FAIL if failed else EXIT_PASS
    extras = {}
    field_path = cfg.field_out or (f"{cfg.out}.field.csv" if cfg.out else None)
    if field_path:
        extras[field_path] = rows_to_csv(FIELD_HEADER, field_rows)
    meta = {"n": n, "r": r, "sigma": sigma, "nu": nu, "seed": cfg.seed, "hypothesis_ok": ok}
    if cfg.output_format == "json":
        return code, table_to_json("compare", meta, COMPARE_HEADER, rows, st.FAIL if failed else st.PASS), extras
    return code, rows_to_csv(COMPARE_HEADER, rows), extras


def _emit_report(cfg: RunConfig, rep: st.ExperimentReport):
    text = rep.to_json() if cfg.output_format == "json" else report_to_csv(rep)
    return VERDICT_EXIT[rep.verdict], text, {}


def cmd_theorem1(cfg: RunConfig):
    params = KgParams(cfg.n[0], cfg.r[0], cfg.sigmas(cfg.n[0])[0])
    _check_theorem_hypothesis(cfg, params)
    rep = st.verify_theorem1(kg.build(params), cfg.nu, cfg.t, cfg.samples, st.RngStream(cfg.seed))
    return _emit_report(cfg, rep)


def cmd_theorem2(cfg: RunConfig):
    n = cfg.n[0]
    sigma = cfg.sigmas(n)[0]
    params = KgParams(n, 0, sigma)
    _check_theorem_hypothesis(cfg, params)
    r_max = cfg.r_max if cfg.r_max is not None else max(cfg.r) + 2
    rep = st.verify_theorem2(n, sigma, cfg.nu, r_max, cfg.samples, st.RngStream(cfg.seed), r_values=cfg.r)
    return _emit_report(cfg, rep)


def cmd_identities(cfg: RunConfig):
    sys_kg = kg.build(KgParams(cfg.n[0], cfg.r[0], cfg.sigmas(cfg.n[0])[0]))
    energy = st.verify_constraint_energy(sys_kg, cfg.samples, st.RngStream(cfg.seed, 0))
    cov = st.verify_covariance(sys_kg, cfg.samples, st.RngStream(cfg.seed, 1))
    rep = st.ExperimentReport("identities", {**energy.params}, seed=cfg.seed)
    for part in (energy, cov):
        rep.estimates += part.estimates
        rep.thresholds.update({f"{part.experiment}.{k}": v for k, v in part.thresholds.items()})
    rep.params["constraint_energy.verdict"] = energy.verdict
    rep.params["covariance.verdict"] = cov.verdict
    rep.verdict = st.combine_verdicts([energy.verdict, cov.verdict])
    return _emit_report(cfg, rep)


def cmd_smooth(cfg: RunConfig):
    params = KgParams(cfg.n[0], cfg.r[0], cfg.sigmas(cfg.n[0])[0])
    _check_theorem_hypothesis(cfg, params)
    sys_kg = kg.build(params)
    u0, pi0 = st.smooth_profile(sys_kg)
    rep = st.smooth_data_experiment(sys_kg, u0, pi0, cfg.smoothness, nu=cfg.nu)
    return _emit_report(cfg, rep)


def cmd_lowerbound_scan(cfg: RunConfig):
    params = KgParams(cfg.n[0], cfg.r[0], cfg.sigmas(cfg.n[0])[0])
    rep = st.lowerbound_scan(kg.build(params), cfg.t, nu=cfg.nu)
    rep.params["hypothesis_ok"] = params.theorem_hypothesis(cfg.nu or 0.0)
    code, text, extras = _emit_report(cfg, rep)
    return EXIT_PASS, text, extras


HANDLERS = {
    "bounds": cmd_bounds,
    "compare": cmd_compare,
    "theorem1": cmd_theorem1,
    "theorem2": cmd_theorem2,
    "identities": cmd_identities,
    "smooth": cmd_smooth,
    "lowerbound-scan": cmd_lowerbound_scan,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="optpredict", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", metavar="FILE", help="key = value file; command line flags override it")
    ap.add_argument("--n", help="half grid size; bounds accepts lists and ranges like 1..8")
    ap.add_argument("--r", help="resolution level; comma list for bounds and theorem2")
    ap.add_argument("--sigma", help="kernel width")
    ap.add_argument("--scaled-sigma2", dest="scaled_sigma2", help="(2n+1) sigma^2 values, alternative to --sigma")
    ap.add_argument("--nu", help="decay exponent of the probabilistic statements")
    ap.add_argument("--t", help="comma separated times")
    ap.add_argument("--samples", help="Monte Carlo sample count")
    ap.add_argument("--seed", help="base seed (default 0)")
    ap.add_argument("--r-max", dest="r_max", help="reference resolution for theorem2")
    ap.add_argument("--smoothness", help="decay exponent of the smooth profile")
    ap.add_argument("--v0-file", dest="v0_file", help="whitespace separated constraint values for compare")
    ap.add_argument("--field-out", dest="field_out", help="where compare writes the sampled fields")
    ap.add_argument("--out", help="write the main output here instead of stdout")
    ap.add_argument("--format", choices=("csv", "json"))
    ap.add_argument(
        "--force-hypothesis",
        dest="force_hypothesis",
        action="store_const",
        const="true",
        help="run outside the (2n+1) sigma^2 hypothesis and flag the output",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def run(argv=None) -> tuple[int, str, dict]:
    """Parse, execute and return ``(exit code, main output, {path: text})`` without writing."""
    args = build_parser().parse_args(argv)
    raw = read_config_file(args.config) if args.config else {}
    for key in KEYS:
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    cfg = RunConfig.from_raw(args.command, raw)
    code, text, extras = HANDLERS[args.command](cfg)
    if cfg.out:
        extras = {cfg.out: text, **extras}
        text = ""
    return code, text, extras


def main(argv=None) -> int:
    try:
        code, text, files = run(argv)
    except ConfigError as exc:
        print(f"optpredict: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HypothesisRejected as exc:
        print(f"optpredict: hypothesis violated: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OptPredictError as exc:
        print(f"optpredict: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for path, content in files.items():
        with open(path, "w", newline="") as fh:
            fh.write(content)
    if text:
        sys.stdout.write(text)
    return code
