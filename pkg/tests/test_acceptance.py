"""Acceptance criteria, one test each.

Every test prints a single ``ACCEPTANCE <k> PASS|FAIL: ...`` line and then
asserts the same conditions it reports.
"""

import time

import numpy as np

from dyadiclab import config, suites
from dyadiclab.core import DyadicModel, analyze, random_step_function, synthesize
from dyadiclab.norms import (bloom_nu, composition_operator, operator_norm_p2, operator_norm_svd, paraproduct_operator,
                             sparse_operator_op)
from dyadiclab.sparse import random_sparse
from dyadiclab.weights import power_weight, random_weight

ALPHAS = [0.3, -0.3, 0.6, -0.6, 0.8, -0.8, 0.9, -0.9]


def announce(capsys, k, ok, text):
    with capsys.disabled():
        print(f"\nACCEPTANCE {k} {'PASS' if ok else 'FAIL'}: {text}", flush=True)


def test_criterion_1_exact_identities(capsys):
    start = time.perf_counter()
    parts = []
    for n in (1, 2):
        cfg = config.load("identities", overrides={"mode": "rational", "seed": 11})
        cfg.update(model={"n": n, "D": 4}, draws=50)
        parts.append(suites.run_identities(cfg))
    elapsed = time.perf_counter() - start
    checks = [c for r in parts for c in r.checks]
    residual = max(float(c.error) for c in checks if c.error is not None)
    ok = all(r.ok for r in parts) and residual == 0 and elapsed < 60
    announce(capsys, 1, ok, f"{len(checks)} exact checks over n=1,2 D=4 x 50 draws, "
                            f"max residual {residual}, {elapsed:.1f} s")
    assert all(r.ok for r in parts)
    assert residual == 0
    assert elapsed < 60


def test_criterion_2_explicit_bounds(capsys):
    start = time.perf_counter()
    cfg = config.load("bounds", overrides={"seed": 12})
    cfg["model"] = {"n": 1, "D": 10}
    cfg["draws"] = 200
    rep = suites.run_bounds(cfg)
    elapsed = time.perf_counter() - start
    bounds = [c for c in rep.checks if c.kind == "bound"]
    violations = sum(not c.ok for c in bounds)
    ok = rep.ok and elapsed < 300
    worst = min((v["min_slack"] for v in rep.meta["slack"].values() if v["min_slack"] is not None))
    announce(capsys, 2, ok, f"{len(bounds)} bound checks over 200 draws at D=10, {violations} violations, "
                            f"min slack {worst:.4f}, {elapsed:.1f} s")
    assert violations == 0 and rep.ok
    assert elapsed < 300


def test_criterion_3_bloom_sparse_bound(capsys):
    start = time.perf_counter()
    model = DyadicModel(1, 8)
    rng = np.random.default_rng(13)
    slacks, pairs, disagreements = [], 0, 0
    ok = True
    for i in range(60):
        rep = suites.bloom_draw(model, rng, i)
        c = rep.checks[0]
        ok &= rep.ok
        slacks.append(c.slack)
        pairs += i % 3 == 0
    # the iterative norm against a dense SVD on a few draws
    rng = np.random.default_rng(14)
    for _ in range(5):
        s = random_sparse(model, rng, 2.0)
        mu = power_weight(model, float(rng.uniform(-0.9, 0.9)))
        lam = mu.power(-1.0)
        op = sparse_operator_op(s, bloom_nu(mu, lam, 2.0))
        a, b = operator_norm_p2(op, mu, lam).value, operator_norm_svd(op, mu, lam)
        disagreements += abs(a - b) > 1e-8 * b
    elapsed = time.perf_counter() - start
    q = np.quantile(slacks, [0, 0.5, 1])
    ok = ok and disagreements == 0
    announce(capsys, 3, ok, f"60 draws ({pairs} with (w, 1/w)), 0 violations required; "
                            f"slack min/median/max {q[0]:.3f}/{q[1]:.3f}/{q[2]:.3f}, {elapsed:.1f} s")
    assert ok


def test_criterion_4_domination(capsys):
    start = time.perf_counter()
    summaries = {}
    results = []
    for algorithm in ("paraproduct", "bilinear"):
        cfg = config.load("dominate", overrides={"seed": 15})
        cfg["model"] = {"n": 1, "D": 8}
        cfg["operation"].update(algorithm=algorithm, runs=30, **{"lambda": 2.0})
        if algorithm == "bilinear":
            # heavy tails so that the stopping sets are not empty
            cfg["functions"].update(f={"kind": "random", "sigma": 2.0}, g={"kind": "random", "sigma": 2.0})
        out = suites.run_dominate(cfg)
        results.append(out)
        carleson = max(r.measured_carleson for r in out.results)
        packing = max(nd.child_measure / float(nd.cube.volume) for r in out.results for nd in r.nodes)
        c_emp = max(r.empirical_constant for r in out.results)
        summaries[algorithm] = (out.report.ok, carleson, packing, c_emp)
    ratios = []
    for seed in range(5):
        for algorithm in ("paraproduct", "bilinear"):
            res = suites.depth_stability(seed, algorithm=algorithm)
            consts = [r.empirical_constant for r in res.values()]
            ok_all = all(r.ok for r in res.values())
            ratios.append(max(consts) / min(consts) if ok_all and min(consts) > 0 else np.inf)
    elapsed = time.perf_counter() - start
    ok = (all(s[0] and s[1] <= 2 + 1e-12 and s[2] <= 0.5 + 1e-15 and np.isfinite(s[3]) for s in summaries.values())
          and max(ratios) <= 2 and elapsed < 600)
    text = "; ".join(f"{k}: 30 runs, Carleson <= {v[1]:.4f}, child packing <= {v[2]:.4f}, max C_emp {v[3]:.3f}"
                     for k, v in summaries.items())
    announce(capsys, 4, ok, f"{text}; depth 6/8/10 C_emp ratio <= {max(ratios):.3f}; {elapsed:.1f} s")
    assert all(r.report.ok for r in results)
    assert ok


def test_criterion_5_sharpness_sweep(capsys):
    start = time.perf_counter()
    cfg = config.load("sharpness")
    cfg["model"] = {"n": 1, "D": 12}
    cfg["operation"]["alphas"] = ALPHAS
    rep, sweep = suites.run_sharpness(cfg)
    elapsed = time.perf_counter() - start
    rows_ok = sweep.ok
    span = sweep.char_span
    slope = sweep.fit["slope"]
    ok = rows_ok and span >= 10 and slope > 1 and elapsed < 900
    announce(capsys, 5, ok, f"{len(sweep.rows)} rows, per-row inequalities {'hold' if rows_ok else 'FAIL'}; "
                            f"[w]_A2 span {span:.2f} (need >= 10); fitted exponent {slope:.3f} "
                            f"(residual {sweep.fit['residual']:.3f}, stderr {sweep.fit['stderr']:.3f}); "
                            f"{elapsed:.1f} s")
    assert rows_ok, "per-row inequalities"
    assert slope > 1, "superlinear growth"
    assert elapsed < 900
    assert span >= 10, f"A_2 characteristics span only {span:.2f}"


def test_criterion_6_oracle_agreement(capsys):
    rng = np.random.default_rng(16)
    worst = 0.0
    count = 0
    for n, depth in [(1, 3), (1, 5), (2, 2)]:
        model = DyadicModel(n, depth)
        for _ in range(6):
            b = random_step_function(model, rng)
            mu, lam = random_weight(model, rng, 1.5), power_weight(model, float(rng.uniform(-0.9, 0.9)))
            ops = [paraproduct_operator("Pi", b), paraproduct_operator("PiStar", b),
                   composition_operator(b, random_step_function(model, rng)),
                   sparse_operator_op(random_sparse(model, rng, 2.0), mu)]
            if n >= 2:
                ops.append(paraproduct_operator("Gamma", b))
            for op in ops:
                est = operator_norm_p2(op, mu, lam).value
                ref = operator_norm_svd(op, mu, lam)
                worst = max(worst, abs(est - ref) / ref)
                count += 1
    trips = 0
    for n, depth in [(1, 5), (2, 3)]:
        model = DyadicModel(n, depth)
        for _ in range(20):
            f = random_step_function(model, rng, exact=True)
            trips += synthesize(analyze(f)).equals(f)
    ok = worst <= 1e-8 and trips == 40
    announce(capsys, 6, ok, f"{count} norms vs dense SVD, worst relative gap {worst:.2e}; "
                            f"{trips}/40 exact round trips")
    assert worst <= 1e-8
    assert trips == 40
