"""Command line front end.

    covrel verify --config rossler.json --out report.json

Subcommands: explore, verify, delta, words, certify, witness, degree-debug.
Exit codes: 0 success, 1 sound negative (a check came out false), 2 fault.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np

from . import __version__
from .covering import HSet, DegenerateChart, Subdivision, explore, verify_relations
from .integrator import IntegratorConfig
from .interval import Box, IArray, Interval, set_rounding
from .poincare import Section, float_returns
from .system import RosslerParams, rossler

__all__ = ["SchemaError", "IoError", "RunConfig", "parse_config", "run", "main", "default_config_path"]


class SchemaError(ValueError):
    pass


class IoError(OSError):
    pass


_NUM = {"type": ["number", "string"]}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "section", "hsets"],
    "properties": {
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["rossler"]},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"a": _NUM, "b": _NUM},
                },
            },
        },
        "section": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "coord_index": {"type": "integer", "minimum": 0, "maximum": 2},
                "value": {"type": "number"},
                "crossing_sign": {"enum": [1, -1]},
                "constraints": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "prefixItems": [{"type": "integer"}, {"enum": ["<", ">"]}, {"type": "number"}],
                        "minItems": 3,
                        "maxItems": 3,
                    },
                },
            },
        },
        "hsets": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "center", "u_dir", "s_dir"],
                "properties": {"name": {"type": "string"}, "center": _PAIR, "u_dir": _PAIR, "s_dir": _PAIR},
            },
        },
        "relations": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "order": {"type": "integer", "minimum": 2},
                "h_min": {"type": "number", "exclusiveMinimum": 0},
                "h_max": {"type": "number", "exclusiveMinimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_steps": {"type": "integer", "minimum": 1},
                "width_ceiling": {"type": "number", "exclusiveMinimum": 0},
                "method": {"enum": ["lohner", "direct"]},
            },
        },
        "covering": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "subdivision": {
                    "oneOf": [
                        {"type": "integer", "minimum": 1},
                        {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3, "maxItems": 3},
                    ]
                },
                "t_escape": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "robustness": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["both", "analytical", "computational"]},
                "delta_bracket": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2, "maxItems": 2},
                "iters": {"type": "integer", "minimum": 0},
            },
        },
        "symbolic": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "convention": {"enum": ["forward", "paper"]},
                "count_max": {"type": "integer", "minimum": 1},
                "certify_words": {"type": "array", "items": {"type": "string"}},
            },
        },
        "witness": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "length": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "omega": {"type": "number"},
                "amplitude_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "delta": {"type": ["number", "null"], "minimum": 0},
            },
        },
        "rounding": {"enum": ["ulp", "directed"]},
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)

DEFAULTS = {
    "system": {"name": "rossler", "params": {"a": "5.7", "b": "0.2"}},
    "section": {"coord_index": 0, "value": 0.0, "crossing_sign": 1, "constraints": [[1, "<", 0.0]]},
    "relations": None,
    "integrator": {"order": 12, "h_min": 1e-6, "h_max": 0.1, "tol": 1e-13, "max_steps": 20000, "width_ceiling": 1.0, "method": "lohner"},
    "covering": {"subdivision": [64, 8, 256], "t_escape": 20.0},
    "robustness": {"mode": "both", "delta_bracket": [0.0, 0.05], "iters": 12},
    "symbolic": {"convention": "forward", "count_max": 12, "certify_words": ["1", "0,2"]},
    "witness": {"count": 10, "length": 20, "seed": 0, "omega": 1.0, "amplitude_fraction": 0.5, "delta": None},
    "rounding": "ulp",
}


@dataclass
class RunConfig:
    raw: dict  # normalised config (defaults filled in), echoed in reports
    system: object
    section: Section
    hsets: list
    relations: list  # index pairs
    integrator: IntegratorConfig
    subdivision: Subdivision
    t_escape: float

    @property
    def params(self) -> dict:
        return self.raw["system"]["params"]


def default_config_path() -> str:
    return str(resources.files("covrel") / "data" / "rossler.json")


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _float(x, where):
    try:
        v = float(x)
    except (TypeError, ValueError):
        raise SchemaError(f"{where}: {x!r} is not a number") from None
    if not math.isfinite(v):
        raise SchemaError(f"{where}: {x!r} is not finite")
    return v


def parse_config(path) -> RunConfig:
    """Read and validate a JSON run configuration."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as err:
        raise IoError(f"cannot read config {path}: {err.strerror or err}") from None
    try:
        cfg = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as err:
        raise SchemaError(f"{path}: not valid UTF-8 ({err})") from None
    except json.JSONDecodeError as err:
        raise SchemaError(f"{path}: invalid JSON at line {err.lineno} column {err.colno}: {err.msg}") from None
    return config_from_dict(cfg, source=path)


def config_from_dict(cfg: dict, source: str = "<config>") -> RunConfig:
    try:
        _VALIDATOR.validate(cfg)
    except jsonschema.ValidationError as err:
        loc = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise SchemaError(f"{source}: at {loc}: {err.message}") from None
    raw = _merge(DEFAULTS, cfg)
    params = {k: str(v) for k, v in raw["system"]["params"].items()}
    raw["system"]["params"] = params
    try:
        system = rossler(RosslerParams(**params))
    except Exception as err:
        raise SchemaError(f"{source}: at system/params: {err}") from None
    sec = raw["section"]
    section = Section(int(sec["coord_index"]), float(sec["value"]), int(sec["crossing_sign"]),
                      tuple((int(c[0]), c[1], float(c[2])) for c in sec["constraints"]), 3)
    hsets = []
    names = []
    for n, h in enumerate(raw["hsets"]):
        where = f"{source}: at hsets/{n}"
        vals = {k: [_float(x, f"{where}/{k}") for x in h[k]] for k in ("center", "u_dir", "s_dir")}
        try:
            hsets.append(HSet(h["name"], vals["center"], vals["u_dir"], vals["s_dir"]))
        except DegenerateChart as err:
            raise SchemaError(f"{where}: degenerate chart: {err}") from None
        if h["name"] in names:
            raise SchemaError(f"{where}/name: duplicate h-set name {h['name']!r}")
        names.append(h["name"])
    if raw["relations"] is None:
        from .covering import LEMMA_PATTERN

        if len(hsets) < 3:
            raise SchemaError(f"{source}: at relations: default pattern needs three h-sets")
        raw["relations"] = [[names[a], names[b]] for a, b in LEMMA_PATTERN]
    relations = []
    for n, (a, b) in enumerate(raw["relations"]):
        for x in (a, b):
            if x not in names:
                raise SchemaError(f"{source}: at relations/{n}: unknown h-set {x!r}")
        relations.append((names.index(a), names.index(b)))
    try:
        integ = IntegratorConfig(**raw["integrator"])
    except ValueError as err:
        raise SchemaError(f"{source}: at integrator: {err}") from None
    lo, hi = raw["robustness"]["delta_bracket"]
    if lo > hi:
        raise SchemaError(f"{source}: at robustness/delta_bracket: lower end exceeds upper end")
    sub = Subdivision.coerce(raw["covering"]["subdivision"])
    return RunConfig(raw, system, section, hsets, relations, integ, sub, float(raw["covering"]["t_escape"]))


# ---------------------------------------------------------------------------
# serialisation


def _num(x) -> str:
    """Full-precision decimal string (round-trips exactly)."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _iv(x) -> list:
    if x is None:
        return None
    if isinstance(x, Interval):
        return [_num(x.lo), _num(x.hi)]
    return [_num(x[0]), _num(x[1])]


def _box(B) -> list:
    if B is None:
        return None
    return [_iv(c) for c in B]


def _cert_json(c, hsets) -> dict:
    return {
        "source": c.source,
        "target": c.target,
        "verified": bool(c.verified),
        "orientation": int(c.orientation),
        "margins": {k: _num(v) for k, v in c.margins.items()},
        "return_time": _iv(c.return_time),
        "subdivision": list(c.subdivision),
        "failures": [[int(j), str(kind)] for j, kind in c.failures[:50]],
        "failure_count": len(c.failures),
        "enclosure": _box(c.enclosure),
        "transversality": _iv(c.transversality),
    }


def _write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".report-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def deterministic_part(report: dict) -> dict:
    """The report without its metadata (what must be reproducible)."""
    return {k: v for k, v in report.items() if k != "meta"}


# ---------------------------------------------------------------------------
# subcommands


def _chart_norm(N: HSet) -> float:
    return float(np.max(N.chart_enclosure().mag().sum(axis=-1)) * (1 + 1e-15))


def _verify(rc: RunConfig, threads: int, delta: float = 0.0, all_pairs: bool = False):
    pairs = list(rc.relations)
    if all_pairs:
        k = len(rc.hsets)
        pairs += [(a, b) for a in range(k) for b in range(k) if (a, b) not in rc.relations]
    certs = verify_relations(rc.system, rc.section, rc.hsets, pairs, rc.integrator, rc.subdivision, delta, threads)
    return certs[: len(rc.relations)], certs[len(rc.relations):]


def _cmd_explore(rc, args, rep):
    hs = explore(rc.system, rc.section, rc.integrator)
    rep["explored_hsets"] = [h.to_dict() for h in hs]
    for h in hs:
        print(f"{h.name}: center={h.center} u_dir={h.u_dir} s_dir={h.s_dir}")
    return 0


def _cmd_verify(rc, args, rep):
    certs, others = _verify(rc, args.threads, all_pairs=True)
    rep["relations"] = [_cert_json(c, rc.hsets) for c in certs]
    rep["other_pairs"] = [{"source": c.source, "target": c.target, "verified": bool(c.verified)} for c in others]
    for c in certs:
        m = ", ".join(f"{k}={v:.4g}" for k, v in c.margins.items())
        print(f"{c.source} => {c.target}: {'verified' if c.verified else 'NOT verified'} (orientation {c.orientation:+d}; {m})")
        for j, kind in c.failures[:5]:
            print(f"    piece {j}: {kind}")
    extra = [f"{c.source}=>{c.target}" for c in others if c.verified]
    if extra:
        print("also verified outside the configured pattern:", ", ".join(extra))
    return 0 if all(c.verified for c in certs) else 1


def _cmd_delta(rc, args, rep):
    from .robustness import NeverVerified, analytical_delta, computational_delta_search, global_enclosure

    mode = args.mode or rc.raw["robustness"]["mode"]
    lo, hi = args.delta_bracket or rc.raw["robustness"]["delta_bracket"]
    iters = args.iters if args.iters is not None else rc.raw["robustness"]["iters"]
    certs, _ = _verify(rc, args.threads)
    rep["relations"] = [_cert_json(c, rc.hsets) for c in certs]
    if not all(c.verified for c in certs):
        print("relations do not verify at delta = 0; no delta can be certified")
        rep["robustness"] = {"mode": mode, "delta_certified": _num(0.0), "L": None, "t_max": None, "Z": None}
        return 1
    rob = {"mode": mode}
    dA = None
    Z = global_enclosure(certs)
    t_max = max(c.return_time.hi for c in certs)
    if mode in ("both", "analytical"):
        scales = [_chart_norm(rc.hsets[b]) for a, b in rc.relations]
        ra = analytical_delta(certs, Z, t_max, scales, [c.transversality for c in certs], system=rc.system)
        dA = ra.delta_certified
        rob["analytical"] = {"delta_certified": _num(dA), "L": _num(ra.L), "t_max": _num(ra.t_max),
                             "per_relation": [{k: (_num(v) if isinstance(v, float) else v) for k, v in r.items()} for r in ra.per_relation]}
        rob.update({"delta_certified": _num(dA), "L": _num(ra.L), "t_max": _num(ra.t_max), "Z": _box(Z)})
        print(f"analytical delta = {dA:.6g} (L = {ra.L:.6g}, t_max = {t_max:.6g})")
    if mode in ("both", "computational"):
        lo_eff = max(lo, dA) if dA is not None else lo

        def progress(d, ok):
            print(f"  delta = {d:.6g}: {'pass' if ok else 'fail'}", flush=True)

        try:
            rc_ = computational_delta_search(rc.system, rc.section, rc.hsets, rc.relations, rc.integrator, (lo_eff, hi), iters,
                                             rc.subdivision, args.threads, progress=progress)
        except NeverVerified as err:
            print(f"computational route: {err}")
            rob["computational"] = {"delta_certified": _num(0.0), "bracket": [_num(lo_eff), _num(hi)], "error": str(err)}
            rep["robustness"] = rob
            return 1
        rob["computational"] = {
            "delta_certified": _num(rc_.delta_certified),
            "bracket": [_num(lo_eff), _num(hi)],
            "iters": iters,
            "trace": [[_num(d), bool(ok)] for d, ok in rc_.trace],
            "relations_at_delta": rc_.per_relation and [
                {"relation": r["relation"], "margins": {k: _num(v) for k, v in r["margins"].items()}} for r in rc_.per_relation
            ],
        }
        rob["mode"] = "computational" if mode == "computational" else "both"
        rob["delta_certified"] = _num(rc_.delta_certified)
        rob.setdefault("L", None)
        rob.setdefault("t_max", _num(t_max))
        rob["Z"] = _box(Z)
        print(f"computational delta = {rc_.delta_certified:.6g}")
    rep["robustness"] = rob
    return 0 if float(rob["delta_certified"]) > 0 else 1


def _cmd_words(rc, args, rep):
    from .symbolic import count_words, entropy, enumerate_words, graph_to_matrix, periodic_words

    conv = args.convention or rc.raw["symbolic"]["convention"]
    k = len(rc.hsets)
    A = graph_to_matrix(rc.relations, k, conv)
    nmax = rc.raw["symbolic"]["count_max"]
    n = args.len
    words = enumerate_words(n, A)
    rep["symbolic"] = {
        "convention": conv,
        "matrix": A.tolist(),
        "counts": {str(m): count_words(m, A) for m in range(1, nmax + 1)},
        "entropy": _num(entropy(A)) if A.any() else None,
        "words": [",".join(map(str, w)) for w in words],
        "periodic_words": [str(w) for w in periodic_words(n, A)],
    }
    print(f"transition matrix ({conv}): {A.tolist()}")
    print(f"{len(words)} admissible words of length {n}:")
    for w in words:
        print("  " + ",".join(map(str, w)))
    return 0


def _cmd_certify(rc, args, rep):
    from .symbolic import NewtonInconclusive, NotAdmissible, PoincareSectionMap, Word, certify_periodic_orbit

    texts = args.word or rc.raw["symbolic"]["certify_words"]
    pmap = PoincareSectionMap(rc.system, rc.section, rc.integrator, rc.t_escape)
    out = []
    ok_all = True
    for t in texts:
        w = Word.parse(t, cyclic=True)
        try:
            c = certify_periodic_orbit(rc.system, rc.section, rc.hsets, w, rc.integrator, rc.relations, pmap)
            out.append({"word": str(w), "certified": True, "box": _box(c.box), "krawczyk": _box(c.krawczyk),
                        "search_box": _box(c.search_box), "orbit": [_box(o) for o in c.orbit],
                        "radius": _num(c.radius), "contraction": _num(c.contraction)})
            print(f"word ({w}): unique periodic point in {c.box}")
        except (NewtonInconclusive, NotAdmissible) as err:
            ok_all = False
            out.append({"word": str(w), "certified": False, "error": f"{type(err).__name__}: {err}"})
            print(f"word ({w}): not certified ({err})")
    rep["periodic_orbits"] = out
    return 0 if ok_all else 1


def random_words(relations, count: int, length: int, seed: int) -> list:
    """Seeded random forward-admissible words (first symbol uniform)."""
    rng = np.random.default_rng(seed)
    succ = {}
    for a, b in relations:
        succ.setdefault(a, []).append(b)
    for a in succ:
        succ[a].sort()
    starts = sorted(succ)
    words = []
    for _ in range(count):
        w = [starts[int(rng.integers(len(starts)))]]
        while len(w) < length:
            nxt = succ.get(w[-1])
            if not nxt:
                break
            w.append(nxt[int(rng.integers(len(nxt)))])
        words.append(tuple(w))
    return words


def write_csv(path: str, result, section) -> None:
    ts, xs = result.trajectory
    hits = set()
    rows = []
    for t, x in zip(ts, xs):
        rows.append((float(t), *map(float, x), 0))
    for t, p in zip(result.times, result.points):
        u = np.full(section.dim, float(section.value))
        u[list(section.free)] = p
        rows.append((float(t), *map(float, u), 1))
        hits.add(float(t))
    rows.sort(key=lambda r: (r[0], r[-1]))
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "y", "z", "section_hit"])
        for r in rows:
            wr.writerow([_num(r[0]), _num(r[1]), _num(r[2]), _num(r[3]), r[4]])


def _cmd_witness(rc, args, rep):
    from .symbolic import ShadowingFailed, witness_trajectory

    wc = rc.raw["witness"]
    delta = args.delta_value if args.delta_value is not None else (wc["delta"] or 0.0)
    amp = wc["amplitude_fraction"] * delta
    pert = ("sinusoid", wc["omega"], amp) if amp > 0 else "zero"
    words = [tuple(args.word_tuple)] if args.word_tuple else random_words(rc.relations, wc["count"], wc["length"], wc["seed"])
    out = []
    ok_all = True
    for n, w in enumerate(words):
        try:
            r = witness_trajectory(rc.system, rc.section, rc.hsets, w, delta, pert, 0.0, rc.relations,
                                   record=bool(args.csv) and n == 0)
            out.append({"word": ",".join(map(str, w)), "placed": True, "non_rigorous": True,
                        "times": [_num(t) for t in r.times], "charts": [[_num(v) for v in c] for c in r.charts]})
            print(f"word {','.join(map(str, w))}: all {len(w)} crossings inside (max |p| = {np.max(np.abs(r.charts[:, 0])):.3f})")
            if args.csv and n == 0:
                write_csv(args.csv, r, rc.section)
        except ShadowingFailed as err:
            ok_all = False
            out.append({"word": ",".join(map(str, w)), "placed": False, "non_rigorous": True, "error": str(err)})
            print(f"word {','.join(map(str, w))}: shadowing failed ({err})")
    rep["witnesses"] = out
    rep["witness_setup"] = {"delta": _num(delta), "perturbation": "zero" if pert == "zero" else
                            {"kind": "sinusoid", "omega": _num(wc["omega"]), "amplitude": _num(amp)}}
    return 0 if ok_all else 1


def chart_map(rc: RunConfig, src: HSet, dst: HSet, h: float = 0.005):
    """Float map from ``src`` chart coordinates to ``dst`` chart coordinates."""
    free = list(rc.section.free)

    def f(pq):
        x = src.inverse_chart(pq)
        U = np.full((len(x), rc.section.dim), float(rc.section.value))
        U[:, free] = x
        _, pts = float_returns(rc.system, rc.section, U, 1, h=h, t_max=rc.t_escape)
        return dst.chart(pts[:, 0][:, free])

    return f


def _cmd_degree(rc, args, rep):
    from .degree import TargetOnBoundaryImage, covering_degree

    out = []
    for a, b in rc.relations:
        try:
            deg = covering_degree(chart_map(rc, rc.hsets[a], rc.hsets[b]), args.samples)
            err = None
        except TargetOnBoundaryImage as e:
            deg, err = None, str(e)
        out.append({"source": rc.hsets[a].name, "target": rc.hsets[b].name, "degree": deg, "error": err})
        print(f"{rc.hsets[a].name} => {rc.hsets[b].name}: winding degree {deg}" + (f" ({err})" if err else ""))
    rep["degree_oracle"] = out
    return 0


COMMANDS = {
    "explore": _cmd_explore,
    "verify": _cmd_verify,
    "delta": _cmd_delta,
    "words": _cmd_words,
    "certify": _cmd_certify,
    "witness": _cmd_witness,
    "degree-debug": _cmd_degree,
}


def _parser():
    p = argparse.ArgumentParser(prog="covrel", description="Covering relations and robustness checks on the Rossler section.")
    p.add_argument("subcommand", choices=sorted(COMMANDS))
    p.add_argument("--config", default=None, help="JSON run configuration (default: packaged rossler.json)")
    p.add_argument("--out", default=None, help="report JSON path")
    p.add_argument("--subdivision", default=None, help="K, or U,S,E for unstable x stable boxes and edge segments")
    p.add_argument("--delta-bracket", nargs=2, type=float, metavar=("LO", "HI"), default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--mode", choices=["both", "analytical", "computational"], default=None)
    p.add_argument("--convention", choices=["forward", "paper"], default=None)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--len", type=int, default=2, help="word length for 'words'")
    p.add_argument("--word", action="append", default=None, help="word for 'certify' (repeatable), e.g. 0,2")
    p.add_argument("--witness-word", dest="word_tuple", type=lambda s: [int(x) for x in s.split(",")], default=None)
    p.add_argument("--delta-value", type=float, default=None, help="delta for 'witness' (amplitude = fraction * delta)")
    p.add_argument("--csv", default=None, help="trajectory CSV for 'witness' (first word)")
    p.add_argument("--samples", type=int, default=4096, help="boundary samples for 'degree-debug'")
    return p


def run(subcommand: str, rc: RunConfig, args) -> tuple:
    """Run one subcommand; returns ``(exit_code, report)``."""
    set_rounding(rc.raw["rounding"])
    rep = {
        "meta": {},
        "config_echo": rc.raw,
        "relations": [],
        "robustness": None,
        "symbolic": None,
        "witnesses": [],
    }
    code = COMMANDS[subcommand](rc, args, rep)
    return code, rep


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    t0 = time.time()
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    try:
        if args.threads < 1:
            raise SchemaError("--threads must be >= 1")
        rc = parse_config(args.config or default_config_path())
        if args.subdivision:
            parts = [int(x) for x in str(args.subdivision).split(",")]
            sub = Subdivision.coerce(parts[0] if len(parts) == 1 else parts)
            rc.subdivision = sub
            rc.raw["covering"]["subdivision"] = list(sub)
        code, rep = run(args.subcommand, rc, args)
    except (SchemaError, IoError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 2
    except Exception as err:  # faults inside the computation
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 2
    rep["meta"] = {
        "tool": "covrel",
        "version": __version__,
        "subcommand": args.subcommand,
        "started": started,
        "elapsed_seconds": round(time.time() - t0, 3),
        "threads": args.threads,
        "exit_code": code,
    }
    if args.out:
        _write_atomic(args.out, json.dumps(rep, indent=2, sort_keys=False) + "\n")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
