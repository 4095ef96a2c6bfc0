"""Command-line front end.

Every verb writes exactly one JSON object (or one CSV table) and exits with
0 on success or a passing verification, 1 on a failing verification and 2
on usage or validation errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .capacity import (ENUMERATION_CAP, CapacityProblem, capacity, capacity_profile, conductivity, content_cover,
                       global_capacity)
from . import constants as const
from . import verify as ver
from .errors import CapmetricError, ParameterError, SpaceFormatError
from .space import DiscreteMMSpace, Domain, load_space

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
VERBS = ("cap", "con", "global-cap", "lambda-profile", "content", "gamma", "gamma-ball", "gamma-chain",
         "c-integral", "sobolev", "hardy", "poincare", "verify", "sweep")
SWEEP_COLUMNS = ("p", "q", "mode", "gamma", "c_S_lower", "c_S_upper", "c_I", "verdict", "error")


# serialization ----------------------------------------------------------------------


def format_number(x: float) -> str:
    """17 significant digits; non-finite values as JSON5-style literals."""
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def to_json(obj: Any, indent: int = 2) -> str:
    """JSON text with every float printed by ``format_number``.

    The standard encoder prints the shortest round-trip repr, which is not
    a fixed digit count, hence this small writer.
    """
    def enc(o: Any, level: int) -> str:
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if o is None or isinstance(o, (bool, np.bool_)):
            return json.dumps(None if o is None else bool(o))
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            return format_number(float(o))
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, np.ndarray):
            o = o.tolist()
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple, frozenset, set)):
            seq = sorted(o) if isinstance(o, (set, frozenset)) else list(o)
            if not seq:
                return "[]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in seq) + "\n" + end + "]"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(obj, 0) + "\n"


def to_csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format_number(float(v))
    return str(v)


# argument parsing ----------------------------------------------------------------------


@dataclass
class RunConfig:
    command: str
    space_path: str | None = None
    theorem: str | None = None
    p: float = 2.0
    q: float | None = None
    omega: str | None = None
    set: str | None = None
    outer: str | None = None
    chain: str | None = None
    rng_seed: int = 0
    enumeration_cap: int = ENUMERATION_CAP
    tolerance: float = ver.TOLERANCE
    output: str = "-"
    format: str = "json"
    timing: bool = False
    extra: dict = field(default_factory=dict)


def parse_set(space: DiscreteMMSpace, text: str | None, what: str) -> list[str]:
    """Comma-separated vertex ids, optionally in braces; ``{}`` is the empty set."""
    if text is None:
        raise ParameterError(f"{what} is required")
    t = text.strip()
    if t.startswith("{") and t.endswith("}"):
        t = t[1:-1]
    ids = [s.strip() for s in t.split(",")] if t.strip() else []
    for v in ids:
        if not v:
            raise ParameterError(f"malformed set literal for {what}: {text!r}")
        if v not in space.vertices:
            raise ParameterError(f"unknown vertex {v!r} in {what}")
    return ids


def parse_chain(space: DiscreteMMSpace, text: str | None) -> list[list[str]]:
    """Sets separated by '|' or ';', smallest first."""
    if not text:
        raise ParameterError("--chain is required")
    return [parse_set(space, part, "--chain") for part in text.replace(";", "|").split("|")]


def parse_grid(text: str) -> list[tuple[float, float]]:
    """'p:q,p:q,...'; the empty string is the empty grid."""
    out = []
    for tok in filter(None, (s.strip() for s in text.split(","))):
        try:
            a, b = tok.split(":")
            out.append((float(a), float(b)))
        except ValueError:
            raise ParameterError(f"malformed grid entry {tok!r}; expected p:q") from None
    return out


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _positive(kind):
    def conv(text: str):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError("must be positive")
        return v

    return conv


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="capmetric", description="Capacities, isocapacitary constants and "
                                 "Sobolev-type inequalities on finite metric measure graphs.")
    ap.add_argument("command", choices=VERBS)
    ap.add_argument("theorem", nargs="?", help="theorem id for 'verify': " + ", ".join(ver.THEOREMS))
    ap.add_argument("--space", dest="space_path", required=True, help="space file")
    ap.add_argument("--omega", help="domain vertices (default: every non-boundary vertex)")
    ap.add_argument("--set", help="the set E, F or K")
    ap.add_argument("--outer", help="outer set G for conductivity")
    ap.add_argument("--chain", help="nested sets 'A|B|C', smallest first")
    ap.add_argument("-p", type=float, default=2.0)
    ap.add_argument("-q", type=float, default=None, help="defaults to p")
    ap.add_argument("--seed", dest="rng_seed", type=_seed, default=0)
    ap.add_argument("--enumeration-cap", type=_positive(int), default=ENUMERATION_CAP)
    ap.add_argument("--tolerance", type=_positive(float), default=ver.TOLERANCE)
    ap.add_argument("--output", default="-", help="output file (default stdout)")
    ap.add_argument("--format", choices=("json", "csv"), default="json")
    ap.add_argument("--timing", action="store_true", help="record wall-clock runtime in reports")
    ap.add_argument("--global", dest="relative_global", action="store_true",
                    help="lambda-profile relative to the far-field boundary")
    ap.add_argument("--sample", type=_positive(int), help="sampled (non-exact) capacity profile")
    ap.add_argument("--r-max", type=_positive(float), help="radius cap for Hausdorff content")
    ap.add_argument("--max-chain-length", type=_positive(int), default=4)
    ap.add_argument("--class", dest="cls", choices=("zero", "median"), default="zero")
    ap.add_argument("--restarts", type=int, default=const.DEFAULT_RESTARTS)
    ap.add_argument("--samples", type=int, default=ver.DEFAULT_SAMPLES)
    ap.add_argument("--tau", type=float, default=1.0)
    ap.add_argument("--grid", default="", help="sweep grid 'p:q,p:q,...'")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    keys = ("relative_global", "sample", "r_max", "max_chain_length", "cls", "restarts", "samples", "tau", "grid")
    return RunConfig(ns.command, ns.space_path, ns.theorem, ns.p, ns.q, ns.omega, ns.set, ns.outer, ns.chain,
                     ns.rng_seed, ns.enumeration_cap, ns.tolerance, ns.output, ns.format, ns.timing,
                     {k: getattr(ns, k) for k in keys})


# dispatch -----------------------------------------------------------------------------


@dataclass
class Outcome:
    payload: dict
    status: int = EXIT_OK
    table: tuple[Sequence[str], list] | None = None


def _domain(space: DiscreteMMSpace, cfg: RunConfig) -> Domain:
    if cfg.omega is None:
        return Domain.of(space)
    return Domain.of(space, parse_set(space, cfg.omega, "--omega"))


def _q(cfg: RunConfig) -> float:
    return cfg.p if cfg.q is None else cfg.q


def _check_pq(cfg: RunConfig) -> None:
    if not cfg.p >= 1 or not _q(cfg) >= 1:
        raise ParameterError("p and q must be >= 1")


def _header(cfg: RunConfig, space: DiscreteMMSpace, **params) -> dict:
    return {"command": cfg.command, "instance_digest": space.digest, "params": params, "rng_seed": cfg.rng_seed}


def _sweep(space: DiscreteMMSpace, cfg: RunConfig) -> Outcome:
    dom = _domain(space, cfg)
    rows, any_fail = [], False
    for p, q in parse_grid(cfg.extra["grid"]):
        row = {"p": p, "q": q, "mode": "subset" if p <= q else "chain", "gamma": None, "c_S_lower": None,
               "c_S_upper": None, "c_I": None, "verdict": None, "error": None}
        try:
            if not (p >= 1 and q >= 1):
                raise ParameterError("p and q must be >= 1")
            est = const.sobolev_constant(dom, p, q, rng_seed=cfg.rng_seed, restarts=cfg.extra["restarts"],
                                         enumeration_cap=cfg.enumeration_cap)
            row["c_S_lower"], row["c_S_upper"] = est.lower, est.upper
            if p <= q:
                row["gamma"] = const.gamma_subset(dom, p, q, enumeration_cap=cfg.enumeration_cap).value
                rep = ver.check_sobolev_pq(dom, p, q, samples=cfg.extra["samples"], rng_seed=cfg.rng_seed,
                                           restarts=cfg.extra["restarts"], tolerance=cfg.tolerance,
                                           enumeration_cap=cfg.enumeration_cap)
            else:
                row["gamma"] = const.gamma_chain(dom, p, q, max_chain_length=cfg.extra["max_chain_length"],
                                                 enumeration_cap=cfg.enumeration_cap).value
                row["c_I"] = const.integral_criterion(dom, p, q, enumeration_cap=cfg.enumeration_cap).value
                rep = ver.check_qp(dom, p, q, samples=cfg.extra["samples"], rng_seed=cfg.rng_seed,
                                   restarts=cfg.extra["restarts"], tolerance=cfg.tolerance,
                                   enumeration_cap=cfg.enumeration_cap)
            row["verdict"] = rep.verdict
            any_fail |= not rep.passed
        except CapmetricError as e:
            row["error"] = str(e)
        rows.append(row)
    payload = _header(cfg, space, omega=list(dom.ids()), grid=cfg.extra["grid"])
    payload["rows"] = rows
    table = (SWEEP_COLUMNS, [[r[c] for c in SWEEP_COLUMNS] for r in rows])
    return Outcome(payload, EXIT_FAIL if any_fail else EXIT_OK, table)


def _verify(space: DiscreteMMSpace, cfg: RunConfig) -> Outcome:
    th = cfg.theorem
    if th not in ver.THEOREMS:
        raise ParameterError(f"unknown theorem id {th!r}; choose from {', '.join(ver.THEOREMS)}")
    p, q = cfg.p, _q(cfg)
    _check_pq(cfg)
    x = cfg.extra
    common = {"rng_seed": cfg.rng_seed, "tolerance": cfg.tolerance, "timing": cfg.timing}
    if th == "ball-p1":
        rep = ver.check_ball_criterion(space, q, samples=x["samples"], **common)
    else:
        dom = _domain(space, cfg)
        capped = {"enumeration_cap": cfg.enumeration_cap}
        if th == "qpey":
            rep = ver.check_qpey(dom, p, q, samples=x["samples"], **common)
        elif th == "capaint":
            rep = ver.check_capaint(dom, p, samples=x["samples"], **common)
        elif th == "conint":
            G = parse_set(space, cfg.outer if cfg.outer is not None else cfg.set, "--outer (G)")
            rep = ver.check_conint(dom, p, space.mask(G), samples=x["samples"], **common)
        elif th == "sobolev-pq":
            rep = ver.check_sobolev_pq(dom, p, q, samples=x["samples"], restarts=x["restarts"], **capped, **common)
        elif th == "hardy":
            rep = ver.check_hardy(dom, p, samples=x["samples"], restarts=x["restarts"], **capped, **common)
        elif th == "qp":
            rep = ver.check_qp(dom, p, q, samples=x["samples"], restarts=x["restarts"],
                               max_chain_length=x["max_chain_length"], **capped, **common)
        elif th == "integral":
            rep = ver.check_integral_criterion(dom, p, q, samples=x["samples"], restarts=x["restarts"],
                                               **capped, **common)
        else:
            rep = ver.check_conductivity(dom, p, q, samples=x["samples"], restarts=x["restarts"],
                                         **capped, **common)
    d = rep.to_dict()
    header = ("name", "lhs", "rhs", "slack", "exact", "pass", "anchor")
    rows = [[l["name"], l["lhs"], l["rhs"], l["slack"], l["exact"], l["pass"], l["anchor"]] for l in d["links"]]
    return Outcome(d, EXIT_OK if rep.passed else EXIT_FAIL, (header, rows))


def dispatch(space: DiscreteMMSpace, cfg: RunConfig) -> Outcome:
    c, p, x = cfg.command, cfg.p, cfg.extra
    if c == "verify":
        return _verify(space, cfg)
    if cfg.theorem is not None:
        raise ParameterError(f"'{c}' takes no positional theorem id")
    if c == "sweep":
        return _sweep(space, cfg)
    _check_pq(cfg)
    q = _q(cfg)
    if c in ("cap", "con"):
        dom = _domain(space, cfg)
        inner = parse_set(space, cfg.set, "--set")
        if c == "cap":
            outer = None if cfg.outer is None else parse_set(space, cfg.outer, "--outer")
            if outer is None:
                res = capacity(CapacityProblem(dom, inner, None, p))
            else:
                res = capacity(CapacityProblem(Domain.of(space, outer), inner, None, p))
        else:
            G = parse_set(space, cfg.outer, "--outer")
            res = conductivity(CapacityProblem(dom, inner, G, p))
        out = _header(cfg, space, p=p, omega=list(dom.ids()), set=inner, outer=cfg.outer)
        out.update(res.to_dict(space))
        return Outcome(out)
    if c == "global-cap":
        K = parse_set(space, cfg.set, "--set")
        out = _header(cfg, space, p=p, set=K)
        out.update(global_capacity(space, K, p).to_dict(space))
        return Outcome(out)
    if c == "lambda-profile":
        dom = _domain(space, cfg)
        prof = capacity_profile(dom, p, relative="global" if x["relative_global"] else "omega",
                                     enumeration_cap=cfg.enumeration_cap, sample=x["sample"],
                                     rng_seed=cfg.rng_seed)
        out = _header(cfg, space, p=p, omega=list(dom.ids()), relative="global" if x["relative_global"] else "omega",
                      sample=x["sample"])
        out.update({"exact": prof.exact, "breaks": prof.breaks.tolist(), "values": prof.values.tolist(),
                    "witnesses": [list(w) for w in prof.witnesses]})
        rows = [[b, v, " ".join(w)] for b, v, w in zip(prof.breaks, prof.values, prof.witnesses)]
        return Outcome(out, table=(("mass", "lambda", "witness"), rows))
    if c == "content":
        K = parse_set(space, cfg.set, "--set")
        res = content_cover(space, K, x["r_max"], ~space.boundary_mask)
        out = _header(cfg, space, set=K, r_max=x["r_max"])
        out.update({"value": res.value, "cover": [{"center": b.center, "radius": b.radius,
                                                   "members": sorted(b.members, key=space.index), "cost": b.cost}
                                                  for b in res.cover]})
        return Outcome(out)
    if c == "gamma":
        dom = _domain(space, cfg)
        g = const.gamma_subset(dom, p, q, enumeration_cap=cfg.enumeration_cap)
        out = _header(cfg, space, p=p, q=q, omega=list(dom.ids()))
        out.update(g.to_dict(cfg.rng_seed))
        return Outcome(out)
    if c == "gamma-ball":
        g = const.gamma_ball(space, q)
        out = _header(cfg, space, q=q)
        out.update(g.to_dict(cfg.rng_seed))
        return Outcome(out)
    if c == "gamma-chain":
        dom = _domain(space, cfg)
        out = _header(cfg, space, p=p, q=q, omega=list(dom.ids()), max_chain_length=x["max_chain_length"])
        if cfg.chain is not None:
            out["value"] = const.chain_value(dom, parse_chain(space, cfg.chain), p, q)
            out["chain"] = parse_chain(space, cfg.chain)
        else:
            out.update(const.gamma_chain(dom, p, q, max_chain_length=x["max_chain_length"],
                                         enumeration_cap=cfg.enumeration_cap).to_dict(cfg.rng_seed))
        return Outcome(out)
    if c == "c-integral":
        dom = _domain(space, cfg)
        g = const.integral_criterion(dom, p, q, enumeration_cap=cfg.enumeration_cap,
                                     relative="global" if x["relative_global"] else "omega")
        out = _header(cfg, space, p=p, q=q, omega=list(dom.ids()))
        out.update(g.to_dict(cfg.rng_seed))
        return Outcome(out)
    if c == "sobolev":
        dom = _domain(space, cfg)
        est = const.sobolev_constant(dom, p, q, x["cls"], rng_seed=cfg.rng_seed, restarts=x["restarts"],
                                     enumeration_cap=cfg.enumeration_cap)
        out = _header(cfg, space, p=p, q=q, omega=list(dom.ids()), restarts=x["restarts"])
        out.update(est.to_dict(space, cfg.rng_seed))
        return Outcome(out)
    if c == "hardy":
        dom = _domain(space, cfg)
        est, g = const.hardy_constant(dom, p, rng_seed=cfg.rng_seed, restarts=x["restarts"],
                                      enumeration_cap=cfg.enumeration_cap)
        out = _header(cfg, space, p=p, omega=list(dom.ids()), restarts=x["restarts"])
        out.update({"sobolev": est.to_dict(space, cfg.rng_seed), "gamma": g.to_dict(cfg.rng_seed)})
        return Outcome(out)
    if c == "poincare":
        est = const.poincare_estimate(space, p, x["tau"], rng_seed=cfg.rng_seed, samples=x["samples"])
        out = _header(cfg, space, p=p, tau=x["tau"])
        out.update({"value": est.value, "center": est.center, "radius": est.radius,
                    "witness": dict(zip(space.vertices, map(float, est.witness)))})
        return Outcome(out)
    raise ParameterError(f"unknown verb {c!r}")  # argparse restricts choices


def _scalar_table(payload: dict) -> tuple[Sequence[str], list]:
    keys = [k for k, v in payload.items() if isinstance(v, (int, float, str, bool)) or v is None]
    return keys, [[payload[k] for k in keys]]


def render(outcome: Outcome, fmt: str) -> str:
    if fmt == "json":
        return to_json(outcome.payload)
    header, rows = outcome.table if outcome.table is not None else _scalar_table(outcome.payload)
    return to_csv(header, rows)


def run(cfg: RunConfig, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        try:
            with open(cfg.space_path, encoding="utf-8") as fh:
                space = load_space(fh.read())
        except OSError as e:
            raise SpaceFormatError(f"cannot read space file: {e}") from None
        outcome = dispatch(space, cfg)
        text = render(outcome, cfg.format)
    except CapmetricError as e:
        print(f"capmetric: error: {e}", file=stderr)
        return EXIT_USAGE
    if cfg.output == "-":
        stdout.write(text)
    else:
        with open(cfg.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return outcome.status


def main(argv: Sequence[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    return run(config_from_args(ns))


if __name__ == "__main__":
    sys.exit(main())
