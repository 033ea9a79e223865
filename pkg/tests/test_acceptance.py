"""Acceptance criteria 1-10.

Each test prints one line ``criterion N: PASS|FAIL ...`` and then asserts.
The expensive runs (verify, delta search) are shared through module caches.
Run with ``pytest tests/test_acceptance.py -v``.
"""

import json
import math
import time

import numpy as np
import pytest

from covrel.cli import chart_map, default_config_path, deterministic_part, main, parse_config, random_words
from covrel.degree import TargetOnBoundaryImage, affine_degree, covering_degree, winding_degree
from covrel.integrator import IntegratorConfig, flow
from covrel.interval import Box
from covrel.poincare import Section, poincare_batch, poincare_map, rossler_section
from covrel.symbolic import certify_periodic_orbit, count_words, entropy, enumerate_words, graph_to_matrix, witness_trajectory
from covrel.system import linear_decay, planar_rotation, rossler

from test_interval import fuzz_intervals
from test_poincare import REF_SLACK, point_batch, reference_return

PATTERN = {("N0", "N2"), ("N1", "N0"), ("N1", "N1"), ("N2", "N0"), ("N2", "N1")}
STATE = {}


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok

    return emit


def run_cli(tmp_path_factory, name, *args):
    out = tmp_path_factory.mktemp("acc") / f"{name}.json"
    t0 = time.time()
    code = main([*args, "--out", str(out)])
    dt = time.time() - t0
    rep = json.loads(out.read_text()) if out.exists() else None
    return code, rep, dt, out


def test_criterion_01_interval_soundness(report):
    t0 = time.time()
    bad = fuzz_intervals(10_000, seed=2024)
    dt = time.time() - t0
    ok = bad == 0 and dt < 10
    report(1, ok, f"10000 fuzz cases, {bad} violations, {dt:.2f} s")
    assert ok


def test_criterion_02_integrator_closed_form(report):
    t0 = time.time()
    x = flow(linear_decay(1), Box.point([1.0]), 1.0).at_time[0]
    ratios = {}
    for p in (3, 4, 6):
        w = [flow(linear_decay(1), Box.point([1.0]), 1.0, IntegratorConfig(order=p, h_min=h, h_max=h, tol=1e-300)).at_time[0].width
             for h in (0.25, 0.125, 0.0625)]
        ratios[p] = min(a / b for a, b in zip(w, w[1:]))
    dt = time.time() - t0
    conv = all(r >= 2 ** (p - 1) / 4 for p, r in ratios.items())
    ok = x.contains(0.3678794411714423) and x.width <= 1e-6 and conv and dt < 5
    report(2, ok, f"enclosure {x}, width {x.width:.2e}, min halving factors "
                  + ", ".join(f"p={p}: {r:.1f}" for p, r in ratios.items()) + f", {dt:.2f} s")
    assert ok


def test_criterion_03_poincare_closed_form(report):
    t0 = time.time()
    sec2 = Section(0, 0.0, 1, ((1, "<", 0.0),), 2)
    im = poincare_map(planar_rotation(), sec2, Box.point([-1.0]))
    circle = im.return_time.contains(2 * math.pi) and im.return_time.width <= 1e-8
    rng = np.random.default_rng(7)
    P = np.column_stack([rng.uniform(-10.5, -3.5, 100), rng.uniform(0.02, 0.04, 100)])
    sec = rossler_section()
    res = poincare_batch(rossler(), sec, point_batch(sec, P), IntegratorConfig())
    miss = 0
    for (y, z), r in zip(P, res):
        if isinstance(r, Exception):
            miss += 1
            continue
        t, _ = reference_return(y, z)
        if not (r.return_time.lo - REF_SLACK <= t <= r.return_time.hi + REF_SLACK):
            miss += 1
    dt = time.time() - t0
    ok = circle and miss == 0 and dt < 60
    report(3, ok, f"circle return time width {im.return_time.width:.2e}, "
                  f"Rossler misses {miss}/100 (reference slack {REF_SLACK:g}), {dt:.1f} s")
    assert ok


def verify_run(tmp_path_factory, threads):
    key = f"verify{threads}"
    if key not in STATE:
        STATE[key] = run_cli(tmp_path_factory, key, "verify", "--threads", str(threads))
    return STATE[key]


def test_criterion_04_lemma_pattern(report, tmp_path_factory):
    code, rep, dt, _ = verify_run(tmp_path_factory, 1)
    got = {(r["source"], r["target"]) for r in rep["relations"] if r["verified"]}
    extra = {(r["source"], r["target"]) for r in rep["other_pairs"] if r["verified"]}
    mins = [min(float(v) for v in r["margins"].values()) for r in rep["relations"]]
    ok = code == 0 and got == PATTERN and not extra and min(mins) > 0 and dt <= 15 * 60
    report(4, ok, f"exit {code}, verified {sorted(got)}, extra {sorted(extra)}, smallest margin {min(mins):.4f}, {dt:.0f} s")
    assert ok


def test_criterion_05_degree_oracle(report):
    t0 = time.time()
    rc = parse_config(default_config_path())
    STATE.setdefault("verify1", None)
    rep = STATE["verify1"][1] if STATE["verify1"] else None
    orient = {(r["source"], r["target"]): r["orientation"] for r in rep["relations"]} if rep else {}
    agree = []
    for a, b in rc.relations:
        N, M = rc.hsets[a], rc.hsets[b]
        d = covering_degree(chart_map(rc, N, M), 4096)
        agree.append((N.name, M.name, d, orient.get((N.name, M.name))))
    rng = np.random.default_rng(11)
    n_aff = bad_aff = 0
    D = ((-1.0, 1.0), (-1.0, 1.0))
    while n_aff < 50:
        B = rng.normal(size=(2, 2))
        x0 = rng.uniform(-2, 2, 2)
        c = rng.uniform(-1, 1, 2)
        if abs(np.linalg.det(B)) < 0.2 or np.linalg.cond(B) > 20 or np.min(np.abs(np.abs(x0) - 1)) < 0.05:
            continue
        try:
            w = winding_degree(lambda x: (x - x0) @ B.T + c, D, c)
        except TargetOnBoundaryImage:
            continue
        n_aff += 1
        bad_aff += w != affine_degree(B, x0, D, c)
    dt = time.time() - t0
    ok = bool(orient) and all(d == o for _, _, d, o in agree) and bad_aff == 0 and dt < 30
    report(5, ok, "; ".join(f"{a}=>{b}: degree {d:+d} vs orientation {o}" for a, b, d, o in agree)
                  + f"; affine disagreements {bad_aff}/50, {dt:.1f} s")
    assert ok


def test_criterion_06_robustness(report, tmp_path_factory):
    code, rep, dt, out = run_cli(tmp_path_factory, "delta", "delta")
    rob = rep["robustness"] if rep else None
    dA = float(rob["analytical"]["delta_certified"]) if rob and "analytical" in rob else 0.0
    comp = (rob or {}).get("computational", {})
    dC = float(comp.get("delta_certified", 0.0))
    reverified = len(comp.get("relations_at_delta") or []) == 5
    STATE["delta"] = dC
    STATE["delta_report"] = str(out)
    ok = code == 0 and dA > 0 and dC >= dA and reverified and dt <= 60 * 60
    report(6, ok, f"delta_A = {dA:.6g}, delta_C = {dC:.6g}, relations re-verified at delta_C: {reverified}, "
                  f"exit {code}, {dt / 60:.1f} min")
    assert ok


def test_criterion_07_symbolic(report):
    t0 = time.time()
    A = graph_to_matrix([(0, 2), (1, 0), (1, 1), (2, 0), (2, 1)], 3)
    counts = all(count_words(n, A) == int(np.linalg.matrix_power(A, n - 1).sum()) for n in range(1, 13))
    brute = all(len(enumerate_words(n, A)) == count_words(n, A) for n in range(1, 9))
    two = count_words(2, A) == 5
    trace = all(len(enumerate_words(n, A, cyclic=True)) == int(np.trace(np.linalg.matrix_power(A, n))) for n in range(1, 11))
    h = entropy(A)
    rate = math.log(count_words(80, A) / count_words(79, A))
    dt = time.time() - t0
    ok = counts and brute and two and trace and abs(h - rate) < 1e-6 and dt < 10
    report(7, ok, f"counts {counts}, n=2 count {count_words(2, A)}, trace identity {trace}, "
                  f"entropy {h:.9f} vs growth {rate:.9f}, {dt:.2f} s")
    assert ok


def test_criterion_08_periodic_orbits(report):
    t0 = time.time()
    rc = parse_config(default_config_path())
    lines, ok = [], True
    for w in [(1,), (0, 2)]:
        try:
            c = certify_periodic_orbit(rc.system, rc.section, rc.hsets, w, rc.integrator, rc.relations)
            lines.append(f"({','.join(map(str, w))}) in {c.box} radius {c.radius:g}")
        except Exception as err:
            ok = False
            lines.append(f"({','.join(map(str, w))}) failed: {err}")
    dt = time.time() - t0
    ok = ok and dt < 600
    report(8, ok, "; ".join(lines) + f", {dt:.1f} s")
    assert ok


def test_criterion_09_witnesses(report):
    t0 = time.time()
    rc = parse_config(default_config_path())
    dC = STATE.get("delta", 0.0)
    words = random_words(rc.relations, 10, 20, seed=0)
    placed = 0
    for w in words:
        try:
            witness_trajectory(rc.system, rc.section, rc.hsets, w, dC, ("sinusoid", 1.0, dC / 2), relations=rc.relations)
            placed += 1
        except Exception:
            pass
    dt = time.time() - t0
    ok = dC > 0 and placed == 10 and dt < 600
    report(9, ok, f"{placed}/10 words of length 20 placed at delta {dC:.6g}, amplitude {dC / 2:.6g}, {dt:.0f} s")
    assert ok


def test_criterion_10_determinism(report, tmp_path_factory):
    r1 = verify_run(tmp_path_factory, 1)
    r2 = verify_run(tmp_path_factory, 3)
    a = json.dumps(deterministic_part(r1[1]), sort_keys=True)
    b = json.dumps(deterministic_part(r2[1]), sort_keys=True)
    # the files themselves differ only in the meta block
    fa = r1[3].read_text().split('"config_echo"', 1)[1]
    fb = r2[3].read_text().split('"config_echo"', 1)[1]
    ok = a == b and fa == fb and r1[0] == r2[0] == 0
    report(10, ok, f"--threads 1 vs --threads 3 reports identical outside meta: {a == b and fa == fb}")
    assert ok
