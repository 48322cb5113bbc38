"""Acceptance criteria 1-10, each at its stated size and tolerance.

Run on its own with ``pytest tests/test_acceptance.py -v``; every criterion
prints one PASS/FAIL line, collected again in the terminal summary.
"""

import time

import numpy as np
import pytest

from ilbench import verify
from ilbench.cliff import CliffConfig
from ilbench.harness import figure2_config, results_csv, run_experiment

EXPERT_RETURN = 100 / 1.08


def _check(report, criterion, result, limit_s):
    ok = result.passed and result.seconds < limit_s
    report(criterion, ok, f"{result.name}: {result.trials - result.violations}/{result.trials} ok "
                          f"(need rate >= {result.min_pass_rate:.2f}), {result.seconds:.2f}s "
                          f"(limit {limit_s:g}s) {result.detail}")
    assert result.passed, result
    assert result.seconds < limit_s, result


def test_criterion_1_hellinger_sandwich(acceptance_report):
    _check(acceptance_report, "1", verify.check_hellinger_sandwich(10_000), 1.0)


def test_criterion_2_exp_weights_regret(acceptance_report):
    _check(acceptance_report, "2", verify.check_ew_regret(1000), 5.0)


def test_criterion_3_performance_difference(acceptance_report):
    _check(acceptance_report, "3", verify.check_performance_difference(500), 30.0)


def test_criterion_4_divergence_inequalities(acceptance_report):
    results = [verify.check_statewise_bound(1000), verify.check_decoupled_hellinger(1000),
               verify.check_symmetric_evaluation(1000)]
    total = sum(r.seconds for r in results)
    ok = all(r.passed for r in results) and total < 120
    acceptance_report("4", ok, "; ".join(f"{r.name}: {r.violations} violations / {r.trials}" for r in results)
                      + f", {total:.2f}s (limit 120s)")
    assert ok, results


def test_criterion_5_stagger_bound(acceptance_report):
    _check(acceptance_report, "5", verify.check_stagger_bound(100, delta=0.1), 120.0)


def test_criterion_6_tragger_bound(acceptance_report):
    _check(acceptance_report, "6", verify.check_tragger_bound(100, delta=0.1), 120.0)


def test_criterion_7_cliff_stationarity(acceptance_report):
    _check(acceptance_report, "7", verify.check_cliff_stationarity(), 1.0)


def test_criterion_9_offline_coverage(acceptance_report):
    _check(acceptance_report, "9", verify.check_offline_coverage(2000, N0=50, H=50), 60.0)


# -- criteria 8 and 10 share the 200-run cliff experiment --------------------------------------


@pytest.fixture(scope="module")
def figure2_run():
    start = time.perf_counter()
    curves = run_experiment(figure2_config(200), threads=1)
    return curves, time.perf_counter() - start


def _first_cost_reaching(curve, level):
    hit = np.nonzero(curve.return_mean >= level)[0]
    return curve.cost[hit[0]] if hit.size else np.inf


def test_criterion_8_cliff_curve_shape(figure2_run, acceptance_report):
    curves, seconds = figure2_run
    bc, stagger, ws3200 = curves["bc"], curves["stagger"], curves["WS(3200)"]
    assert bc.cost[-1] == 20000
    final = {k: c.return_mean[-1] for k, c in curves.items()}

    a = final["WS(800)"] > final["bc"] and final["WS(800)"] > final["stagger"]

    level = 0.9 * EXPERT_RETURN
    ws_cost, bc_cost = _first_cost_reaching(ws3200, level), _first_cost_reaching(bc, level)
    b = ws_cost < bc_cost

    N0, H = CliffConfig.figure2().N0, CliffConfig.figure2().H
    k2000 = int(np.searchsorted(stagger.cost, 2000))
    annotated = stagger.annotations[k2000]
    rate = stagger.cov_E[k2000] * N0 / annotated
    c = rate <= 3 * (2 / H)

    mask = (bc.cov_Eprime > 0.5) & (bc.return_mean < 0.5 * EXPERT_RETURN)
    d = bool(mask.any())
    witness = f"cost {bc.cost[mask][0]:g}" if d else "none"

    detail = (f"(a) WS(800) {final['WS(800)']:.1f} vs BC {final['bc']:.1f}, STAGGER {final['stagger']:.1f}; "
              f"(b) 90% of expert at cost WS(3200) {ws_cost:g} vs BC {bc_cost:g}; "
              f"(c) E-coverage rate {rate:.4f} <= {3 * 2 / H:.2f}; (d) witness {witness}; {seconds:.0f}s")
    acceptance_report("8", a and b and c and d, detail)
    assert a and b and c and d, detail


def test_criterion_10_thread_count_determinism(figure2_run, acceptance_report):
    curves, _ = figure2_run
    single = results_csv(curves).encode()
    multi = results_csv(run_experiment(figure2_config(200), threads=2)).encode()
    ok = single == multi
    acceptance_report("10", ok, f"results.csv {len(single)} bytes, threads 1 vs 2 identical: {ok}")
    assert ok
