"""``gmeasure`` command-line front end.

Every command reads one JSON config, prints a JSON report on stdout and,
with ``--out``, writes ``report.json`` plus a CSV table into that directory.
Exit codes: 0 holds/success, 1 fails, 2 inconclusive, 3 invalid input.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .blockvar import (
    BlockStructure,
    BlockVariationPair,
    check_conditions,
    delta_bar_prefixes,
    make_blocks,
    r_from_variations,
    rates_from_rho,
    rho_block,
    validity_report,
)
from .coupling import estimate_dbar, iterate_attractor
from .measures import CylinderMeasure
from .renewal import build_spec, renewal_exact
from .symbolic import GFunction, LogisticG, TableG, VariationSequence, variation_sequence

CONFIG_TAG = "gmeasure.config/1"
REPORT_TAG = "gmeasure.report/1"
EXIT_OK, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_INVALID = 0, 1, 2, 3
VARIATION_TERMS_FROM_G = 10**4
COMMANDS = ("check", "blocks", "renewal", "couple", "hellinger", "iterate")

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_word = {"type": "array", "items": {"type": "integer", "minimum": 0}}

_G_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "kind": {"const": "table"},
                "columns": {"type": "array", "minItems": 1, "items": {"type": "array", "items": _num}},
                "memory": {"type": "integer", "minimum": 0},
                "floor": {"type": "number", "minimum": 0},
            },
            "required": ["kind", "columns"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "logistic"},
                "bias": _num,
                "couplings": {"type": "array", "items": _num},
                "tail": {"type": "number", "minimum": 0},
            },
            "required": ["kind", "couplings"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "logistic_power"},
                "K": _num,
                "alpha": {"type": "number", "exclusiveMinimum": 1},
                "depth": _pos_int,
                "bias": _num,
            },
            "required": ["kind", "K", "alpha", "depth"],
            "additionalProperties": False,
        },
    ]
}

SCHEMA = {
    "type": "object",
    "properties": {
        "schema": {"const": CONFIG_TAG},
        "g": _G_SCHEMA,
        "g_tilde": _G_SCHEMA,
        "variations": {
            "oneOf": [
                {
                    "type": "object",
                    "properties": {"power": {"type": "object", "properties": {"K": _num, "alpha": _num},
                                             "required": ["K", "alpha"], "additionalProperties": False}},
                    "required": ["power"], "additionalProperties": False,
                },
                {
                    "type": "object",
                    "properties": {"geometric": {"type": "object", "properties": {"v0": _num, "ratio": _num},
                                                 "required": ["v0", "ratio"], "additionalProperties": False}},
                    "required": ["geometric"], "additionalProperties": False,
                },
                {
                    "type": "object",
                    "properties": {"values": {"type": "array", "items": {"type": "number", "minimum": 0}},
                                   "tail_sq": {"type": "number", "minimum": 0}},
                    "required": ["values"], "additionalProperties": False,
                },
            ]
        },
        "condition": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["square", "berbee_eps", "main"]},
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "threshold": {"type": "number", "exclusiveMinimum": 0},
                "floor": _num,
                "r_tol": {"type": "number", "minimum": 0},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "blocks": {
            "type": "object",
            "properties": {
                "strategy": {"enum": ["geometric", "tail", "unit", "manual"]},
                "c": {"type": "number", "exclusiveMinimum": 1},
                "b": {"type": "array", "items": _pos_int, "minItems": 1},
                "M": _pos_int,
                "max_B": _pos_int,
            },
            "required": ["strategy"],
            "additionalProperties": False,
        },
        "rates": {
            "type": "object",
            "properties": {
                "source": {"enum": ["from_rho", "from_s", "manual"]},
                "r": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "margin": {"type": "number", "minimum": 0},
            },
            "required": ["source"],
            "additionalProperties": False,
        },
        "horizon": {
            "type": "object",
            "properties": {"terms": _pos_int, "steps": _pos_int, "trials": _pos_int, "n_max": {"type": "integer", "minimum": 0}},
            "additionalProperties": False,
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "init": {"enum": ["adversarial", "uniform", "stationary"]},
        "coupling": {"enum": ["maximal", "independent"]},
        "tail_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "hellinger": {
            "type": "object",
            "properties": {"B": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                           "b": {"type": "array", "items": _pos_int}},
            "required": ["B", "b"],
            "additionalProperties": False,
        },
        "iterate": {
            "type": "object",
            "properties": {"nu1": _word, "nu2": _word, "max_depth": _pos_int},
            "required": ["nu1", "nu2"],
            "additionalProperties": False,
        },
    },
    "required": ["schema"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` points at the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name}")


def _require(cfg: dict, key: str, command: str):
    if key not in cfg:
        raise ConfigError(key, f"required by '{command}'")
    return cfg[key]


def validate(cfg) -> dict:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(where, exc.message) from None
    return cfg


def load_config(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from None
    try:
        cfg = json.loads(text, parse_constant=_reject_constant)
    except ValueError as exc:
        raise ConfigError("<document>", f"not valid JSON ({exc})") from None
    return validate(cfg)


def digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ---------------------------------------------------------------- builders


def build_g(spec: dict, field: str = "g") -> GFunction:
    try:
        if spec["kind"] == "table":
            return TableG.from_columns(spec["columns"], spec.get("memory"), spec.get("floor", 1e-9))
        if spec["kind"] == "logistic":
            return LogisticG(float(spec.get("bias", 0.0)), np.asarray(spec["couplings"], float), float(spec.get("tail", 0.0)))
        return LogisticG.power_law(spec["K"], spec["alpha"], spec["depth"], spec.get("bias", 0.0))
    except (ValueError, TypeError) as exc:
        raise ConfigError(field, str(exc)) from None


def build_variations(cfg: dict, n_needed: int) -> VariationSequence:
    if "variations" in cfg:
        v = cfg["variations"]
        if "power" in v:
            return VariationSequence.power(v["power"]["K"], v["power"]["alpha"])
        if "geometric" in v:
            try:
                return VariationSequence.geometric(v["geometric"]["v0"], v["geometric"]["ratio"])
            except ValueError as exc:
                raise ConfigError("variations/geometric", str(exc)) from None
        return VariationSequence(np.asarray(v["values"], float), tail_sq=v.get("tail_sq", math.inf))
    if "g" in cfg:
        g = build_g(cfg["g"])
        # tables have exactly zero variation past their memory
        n = min(n_needed, g.depth + 2) if isinstance(g, TableG) else min(n_needed, VARIATION_TERMS_FROM_G)
        return variation_sequence(g, n)
    raise ConfigError("variations", "give 'variations' or 'g'")


def build_blocks(cfg: dict, command: str, vars_factory=None) -> BlockStructure:
    bc = _require(cfg, "blocks", command)
    strat = bc["strategy"]
    try:
        if strat == "manual":
            if "b" not in bc:
                raise ConfigError("blocks/b", "manual blocks need 'b'")
            return make_blocks("manual", {"b": bc["b"]}, M=bc.get("M"))
        if "M" not in bc and "max_B" not in bc:
            raise ConfigError("blocks", "give 'M' or 'max_B'")
        if strat == "geometric" and "c" not in bc:
            raise ConfigError("blocks/c", "geometric blocks need 'c'")
        vars = vars_factory(10**6) if strat == "tail" else None
        return make_blocks(strat, {"c": bc.get("c")}, vars, M=bc.get("M"), max_B=bc.get("max_B"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("blocks", str(exc)) from None


def build_pair(cfg: dict, command: str) -> BlockVariationPair:
    vf = lambda n: build_variations(cfg, n)  # noqa: E731
    blocks = build_blocks(cfg, command, vf)
    rates = _require(cfg, "rates", command)
    src = rates["source"]
    margin = rates.get("margin", 0.0)
    try:
        if src == "manual":
            if "r" not in rates:
                raise ConfigError("rates/r", "manual rates need 'r'")
            return BlockVariationPair(blocks, np.asarray(rates["r"], float) + margin, "manual")
        if src == "from_rho":
            g = build_g(_require(cfg, "g", command))
            return rates_from_rho(g, blocks, margin)
        pair = r_from_variations(vf(int(blocks.B[-1])), blocks)
        if margin:
            pair = BlockVariationPair(blocks, pair.r + margin, "from_s", pair.s)
        return pair
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("rates", str(exc)) from None


# ---------------------------------------------------------------- output


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def to_csv(header: list, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


# ---------------------------------------------------------------- commands


def cmd_check(cfg: dict) -> tuple[int, dict, tuple]:
    cond = _require(cfg, "condition", "check")
    N = cfg.get("horizon", {}).get("terms", 10**6)
    params = {k: v for k, v in cond.items() if k != "kind"}
    pair = None
    if cond["kind"] == "main":
        if "rates" in cfg:
            pair = build_pair(cfg, "check")
        else:
            bc = _require(cfg, "blocks", "check")
            params.update(blocks=bc["strategy"], c=bc.get("c"), b=bc.get("b"), M=bc.get("M"), max_B=bc.get("max_B", N))
    vars = None if pair is not None else build_variations(cfg, N + 2)
    try:
        verdict = check_conditions(cond["kind"], vars, params, N, pair=pair)
    except ValueError as exc:
        raise ConfigError("condition", str(exc)) from None
    result = {"condition": cond["kind"], "status": verdict.status, "horizon": verdict.horizon, "witness": verdict.witness}
    rows = []
    if "g" in cfg and "blocks" in cfg and "rates" in cfg:
        g = build_g(cfg["g"])
        pair = pair or build_pair(cfg, "check")
        rep = validity_report(g, pair)
        result["validity"] = {"all_valid": rep.all_valid, "l0": rep.l0, "valid": rep.valid, "rho": rep.rho, "source": rep.source}
        rows = [(l + 1, int(B), int(b), r, rho, v, src) for l, (B, b, r, rho, v, src) in
                enumerate(zip(pair.blocks.B, pair.blocks.b, pair.r, rep.rho, rep.valid, rep.source))]
    code = {"holds_at_horizon": EXIT_OK, "fails": EXIT_FAIL}.get(verdict.status, EXIT_INCONCLUSIVE)
    return code, result, ("validity.csv", ["ell", "B_ell", "b_ell", "r_ell", "rho_ell", "valid", "rho_source"], rows)


def cmd_blocks(cfg: dict):
    pair = build_pair(cfg, "blocks")
    db = delta_bar_prefixes(pair)
    s = pair.s if pair.s is not None else [None] * len(pair.r)
    rows = [(l + 1, int(B), int(b), s_, r, d) for l, (B, b, s_, r, d) in
            enumerate(zip(pair.blocks.B, pair.blocks.b, s, pair.r, db))]
    result = {"levels": len(pair.r), "provenance": pair.provenance, "delta_bar": float(db[-1])}
    return EXIT_OK, result, ("blocks.csv", ["ell", "B_ell", "b_ell", "s_ell", "r_ell", "delta_bar_prefix"], rows)


def cmd_renewal(cfg: dict):
    pair = build_pair(cfg, "renewal")
    spec = build_spec(pair)
    N = cfg.get("horizon", {}).get("steps", max(50, 10 * spec.B_M))
    if N < spec.B_M:
        raise ConfigError("horizon/steps", f"must be at least B_M = {spec.B_M}")
    sol = renewal_exact(spec, N)
    result = {"limit": sol.limit, "sum_a": spec.sum_a, "expected_T1": spec.expected_T1, "A_N": float(sol.A[-1]),
              "tail_error": sol.tail_error, "cycle_average": sol.cycle_average, "cycle_error": sol.cycle_error,
              "p": spec.p_sparse(), "N": N}
    return EXIT_OK, result, ("renewal.csv", ["n", "A_n"], list(enumerate(sol.A)))


def cmd_couple(cfg: dict, seed: int | None):
    if seed is None:
        raise ConfigError("seed", "the 'couple' command is stochastic and needs a seed")
    g = build_g(_require(cfg, "g", "couple"))
    g2 = build_g(cfg["g_tilde"], "g_tilde") if "g_tilde" in cfg else g
    pair = build_pair(cfg, "couple")
    hz = cfg.get("horizon", {})
    N, K = hz.get("steps", 10**4), hz.get("trials", 20)
    est = estimate_dbar(g, g2, pair, N, K, seed, init=cfg.get("init", "adversarial"),
                        coupling=cfg.get("coupling", "maximal"), tail_fraction=cfg.get("tail_fraction", 0.1))
    result = {"estimate": est.estimate, "band": est.band, "sigma": est.sigma, "ceiling": est.ceiling,
              "within_ceiling": est.within_ceiling, "trials": K, "horizon": N, "seed": seed,
              "dominance_violations": est.dominance_violations, "validity_violations": est.validity_violations}
    ok = est.within_ceiling and est.dominance_violations == 0
    rows = [(i, seed ^ i, f) for i, f in enumerate(est.per_trial)]
    return (EXIT_OK if ok else EXIT_FAIL), result, ("couple.csv", ["trial", "seed", "tail_disagreement"], rows)


def cmd_hellinger(cfg: dict):
    g = build_g(_require(cfg, "g", "hellinger"))
    hc = cfg.get("hellinger", {"B": [0, 1, 2], "b": [1, 2, 3]})
    rows = []
    ok = True
    for B in hc["B"]:
        for b in hc["b"]:
            try:
                rb = rho_block(g, B, b)
            except ValueError as exc:
                raise ConfigError("hellinger", str(exc)) from None
            if rb.exact is not None and not (rb.exact <= rb.bound_log + 1e-12 and rb.bound_log <= rb.bound_sqrt + 1e-12):
                ok = False
            rows.append((B, b, rb.h, rb.exact, rb.bound_log, rb.bound_sqrt, rb.bound_w, rb.certified))
    result = {"pairs": len(rows), "orderings_hold": ok}
    header = ["B", "b", "h", "rho_exact", "bound_log", "bound_sqrt", "bound_w", "certified"]
    return (EXIT_OK if ok else EXIT_FAIL), result, ("hellinger.csv", header, rows)


def cmd_iterate(cfg: dict):
    g = build_g(_require(cfg, "g", "iterate"))
    if not isinstance(g, TableG):
        raise ConfigError("g", "'iterate' needs a table g-function")
    it = _require(cfg, "iterate", "iterate")
    n_max = cfg.get("horizon", {}).get("n_max", 20)
    try:
        nu1 = CylinderMeasure.point(it["nu1"], g.size)
        nu2 = CylinderMeasure.point(it["nu2"], g.size)
        res = iterate_attractor(g, nu1, nu2, n_max, it.get("max_depth"))
    except ValueError as exc:
        raise ConfigError("iterate", str(exc)) from None
    result = {"final_distance": float(res.distances[-1]), "resolution": float(res.resolution[-1]), "n_max": n_max}
    rows = [(n, d, r) for n, (d, r) in enumerate(zip(res.distances, res.resolution))]
    return EXIT_OK, result, ("iterate.csv", ["n", "distance", "resolution"], rows)


def dispatch(command: str, cfg: dict, seed: int | None = None) -> tuple[int, dict, str | None, str]:
    """Run ``command``; return exit code, report, CSV file name and CSV body."""
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown command {command!r}")
    if seed is None:
        seed = cfg.get("seed")
    if command == "couple":
        code, result, table = cmd_couple(cfg, seed)
    else:
        code, result, table = {"check": cmd_check, "blocks": cmd_blocks, "renewal": cmd_renewal,
                               "hellinger": cmd_hellinger, "iterate": cmd_iterate}[command](cfg)
    name, header, rows = table
    effective = dict(cfg, seed=seed) if seed is not None else cfg
    report = {"schema": REPORT_TAG, "version": __version__, "command": command, "config_digest": digest(effective),
              "config": effective, "exit_code": code, "result": _jsonable(result)}
    return code, report, name, to_csv(header, rows)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="gmeasure", description="Uniqueness and coupling diagnostics for g-measures.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    ap.add_argument("--out", default=None, help="directory for report.json and the CSV table")
    args = ap.parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed", "must be an unsigned 64-bit integer")
        cfg = load_config(args.config)
        code, report, name, body = dispatch(args.command, cfg, args.seed)
    except ConfigError as exc:
        print(f"gmeasure: invalid input at {exc.field}: {exc.message}", file=sys.stderr)
        return EXIT_INVALID
    text = json.dumps(report, sort_keys=True, indent=2)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text + "\n")
        (out / name).write_text(body)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
