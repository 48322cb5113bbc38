import math

import numpy as np
import pytest

from ilbench.cliff import (
    B,
    B_PRIME,
    E,
    E_PRIME,
    CliffConfig,
    build_cliff,
    coverage_stats,
    full_coverage_offline_count,
    theorem_bounds,
    with_variant,
)
from ilbench.errors import ConfigurationError
from ilbench.learners import MemorizingLearner
from ilbench.mdp import StochTabular, exact_return, rollout, value_functions, visitation_distribution

FIG2 = CliffConfig.figure2()


@pytest.fixture(scope="module")
def fig2():
    return build_cliff(FIG2)


@pytest.fixture(scope="module")
def small():
    return build_cliff(CliffConfig(N0=4, N1=6, H=12, A=5, beta=0.3, reward_variant="R1"))


def expert_block_simulation(beta, H, n, rng):
    """Independent vectorized simulation of the expert's block path: fraction of steps in E."""
    in_e = rng.random(n) < 1 / (1 + beta)
    total = np.zeros(n)
    for _ in range(H):
        total += in_e
        in_e = np.where(in_e, rng.random(n) >= beta, True)
    return total


def test_figure2_builds_despite_theory_gap():
    assert FIG2.violations() == []
    assert "N1 >= 160 N0" in CliffConfig(**{**FIG2.__dict__, "theoretical_mode": True}).violations()


def test_theoretical_beta():
    cfg = CliffConfig.theorem(H=50, N0=3)
    assert cfg.beta == pytest.approx(8 / 42)
    assert cfg.beta == pytest.approx(0.190476, abs=1e-6)
    cfg.validate()


def test_theoretical_mode_lists_every_violation():
    cfg = CliffConfig(N0=10, N1=100, H=20, A=30, beta=0.5, theoretical_mode=True)
    with pytest.raises(ConfigurationError) as err:
        build_cliff(cfg)
    msg = str(err.value)
    for needle in ("H >= 50", "A >= 10 H", "beta = 8 / (H - 8)", "N1 >= 500", "N1 >= 160 N0"):
        assert needle in msg


def test_state_layout(fig2):
    mdp, _ = fig2
    assert mdp.num_states == 1202
    assert (FIG2.b, FIG2.b_prime) == (1200, 1201)
    rho = mdp.initial_dist
    assert rho[0] == pytest.approx(1 / (1.08 * 200))
    assert rho[200] == pytest.approx(0.08 / (1.08 * 1000))
    assert rho[1200] == rho[1201] == 0.0


def test_transition_rows(small):
    mdp, expert = small
    c = mdp.config
    s_e, s_ep = 1, c.N0 + 2
    a_exp = expert.action(0, s_e)
    wrong = (a_exp + 1) % c.A
    nxt = mdp.next_state_dist(0, s_e, wrong)
    assert nxt[c.b] == 1.0
    nxt = mdp.next_state_dist(0, s_e, a_exp)
    np.testing.assert_allclose(nxt[:c.N0], (1 - c.beta) / c.N0)
    np.testing.assert_allclose(nxt[c.N0:c.b], c.beta / c.N1)
    np.testing.assert_allclose(mdp.next_state_dist(0, s_ep, expert.action(0, s_ep))[:c.N0], 1 / c.N0)
    assert mdp.next_state_dist(0, s_ep, wrong)[c.b_prime] == 1.0
    assert mdp.next_state_dist(0, c.b, 0)[c.b] == 1.0
    assert mdp.next_state_dist(0, c.b_prime, wrong)[c.b_prime] == 1.0
    np.testing.assert_allclose(mdp.next_state_dist(0, c.b_prime, expert.action(0, c.b_prime))[:c.N0], 1 / c.N0)


@pytest.mark.parametrize("cfg", [FIG2, CliffConfig.theorem()], ids=["figure2", "theorem"])
def test_expert_visitation_is_stationary(cfg):
    mdp, expert = build_cliff(cfg)
    d = visitation_distribution(mdp, expert)
    assert np.abs(d - mdp.initial_dist).max() <= 1e-12
    assert d[:, [cfg.b, cfg.b_prime]].max() <= 1e-15


def test_expert_return_figure2(fig2):
    mdp, expert = fig2
    assert exact_return(mdp, expert) == pytest.approx(100 / 1.08, abs=1e-9)
    assert mdp.structured_return(expert) == pytest.approx(100 / 1.08, abs=1e-9)


def test_expert_return_matches_independent_simulation():
    totals = expert_block_simulation(0.08, 100, 100_000, np.random.default_rng(0))
    se = totals.std(ddof=1) / math.sqrt(len(totals))
    assert abs(totals.mean() - 100 / 1.08) < 3 * se


def test_expert_return_matches_package_rollouts(fig2):
    mdp, expert = fig2
    rng = np.random.default_rng(1)
    totals = np.array([rollout(mdp, expert, rng).total_reward for _ in range(3000)])
    se = totals.std(ddof=1) / math.sqrt(len(totals))
    assert abs(totals.mean() - 100 / 1.08) < 3.5 * se


@pytest.mark.parametrize("cfg", [with_variant(FIG2, "R1"), CliffConfig.theorem()], ids=["figure2", "theorem"])
def test_r1_expert_return_is_horizon(cfg):
    mdp, expert = build_cliff(cfg)
    assert exact_return(mdp, expert) == pytest.approx(cfg.H, abs=1e-9)


def test_r1_expert_values_on_e():
    mdp, expert = build_cliff(CliffConfig.theorem())
    V, _ = value_functions(mdp, expert)
    H = mdp.horizon
    for h in range(H):
        np.testing.assert_allclose(V[h, :3], H - h, atol=1e-9)


def test_expert_trajectories_avoid_failure_states(fig2):
    mdp, expert = fig2
    rng = np.random.default_rng(2)
    for _ in range(200):
        states = rollout(mdp, expert, rng).states
        assert FIG2.b not in states and FIG2.b_prime not in states


def test_random_expert_assignment_is_invariant():
    base = build_cliff(CliffConfig(N0=5, N1=8, H=10, A=4, beta=0.2))
    shuffled = build_cliff(CliffConfig(N0=5, N1=8, H=10, A=4, beta=0.2, expert_seed=3))
    assert not np.array_equal(base[1].table, shuffled[1].table)
    assert exact_return(*base) == pytest.approx(exact_return(*shuffled), abs=1e-12)
    learner = MemorizingLearner(15, 4)
    for s in (0, 2, 6):
        learner.observe(0, s, shuffled[1].action(0, s))
    pi = learner.propose()
    assert shuffled[0].structured_return(pi) == pytest.approx(exact_return(shuffled[0], pi), abs=1e-12)


def test_structured_return_matches_generic(small):
    mdp, expert = small
    rng = np.random.default_rng(3)
    for _ in range(5):
        pi = StochTabular(rng.dirichlet(np.ones(mdp.num_actions), size=mdp.num_states))
        assert mdp.structured_return(pi) == pytest.approx(exact_return(mdp, pi), abs=1e-12)


def test_block_visitation_matches_state_visitation(small):
    mdp, _ = small
    c = mdp.config
    learner = MemorizingLearner(mdp.num_states, c.A)
    learner.observe(0, 0, 0)
    learner.observe(0, c.N0, 0)
    pi = learner.propose()
    d = visitation_distribution(mdp, pi)
    blocks = mdp.block_visitation(pi)
    np.testing.assert_allclose(blocks[:, E], d[:, :c.N0].sum(axis=1), atol=1e-12)
    np.testing.assert_allclose(blocks[:, E_PRIME], d[:, c.N0:c.b].sum(axis=1), atol=1e-12)
    np.testing.assert_allclose(blocks[:, B], d[:, c.b], atol=1e-12)
    np.testing.assert_allclose(blocks[:, B_PRIME], d[:, c.b_prime], atol=1e-12)


def test_fast_state_sampling_matches_marginals(small):
    mdp, _ = small
    pi = MemorizingLearner(mdp.num_states, mdp.num_actions).propose()
    d = visitation_distribution(mdp, pi)
    rng = np.random.default_rng(4)
    n, h = 20_000, 3
    counts = np.bincount([mdp.sample_state(pi, h, rng) for _ in range(n)], minlength=mdp.num_states)
    sigma = np.sqrt(d[h] * (1 - d[h]) / n)
    assert np.all(np.abs(counts / n - d[h]) <= 4 * sigma + 1e-12)


def test_wrong_action_probability_in_unannotated_e_prime(fig2):
    mdp, expert = fig2
    learner = MemorizingLearner(mdp.num_states, FIG2.A)
    for s in range(FIG2.N0):
        learner.observe(0, s, expert.action(0, s))
    p = mdp.expert_prob(learner.propose())
    assert 1 - p[FIG2.N0 + 5] == pytest.approx(1 - 1 / FIG2.A)
    assert p[:FIG2.N0].min() == 1.0


def test_coverage_stats():
    cfg = FIG2
    assert coverage_stats(set(), cfg) == (0.0, 0.0, False)
    assert coverage_stats(set(range(cfg.num_states)), cfg) == (1.0, 1.0, True)
    assert coverage_stats(set(range(cfg.N0)), cfg) == (1.0, 0.0, False)
    assert coverage_stats({cfg.N0, cfg.b_prime}, cfg) == (0.0, 1 / cfg.N1, True)


def test_theorem_bounds():
    bounds = theorem_bounds(CliffConfig.theorem(H=50, N0=3, N1=500))
    assert bounds["bc_threshold"] == pytest.approx(3.125)
    assert bounds["stagger_threshold"] == pytest.approx(12.5)
    assert bounds["ws_offline"] == 1
    assert bounds["ws_interactive"] == 3
    with pytest.raises(ConfigurationError):
        theorem_bounds(FIG2)


def test_full_coverage_offline_count():
    # N0 / ((1 - beta) H) * ln(N0 / delta) with N0 = H = 50, beta = 8/42
    assert full_coverage_offline_count(50, 50, 8 / 42) == math.ceil(42 / 34 * math.log(500)) == 8
