import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ilbench.cliff import CliffConfig, build_cliff
from ilbench.errors import ConfigurationError, InputError
from ilbench.oracle import AnnotationLedger, ExpertOracle, OfflineDataset, generate_offline


@pytest.fixture(scope="module")
def cliff():
    return build_cliff(CliffConfig(N0=6, N1=10, H=5, A=4, beta=0.25, expert_seed=11))


def test_state_query_returns_expert_action(cliff):
    mdp, expert = cliff
    oracle = ExpertOracle(expert)
    for s in range(mdp.num_states):
        assert oracle.query_state(s) == expert.table[s]
        assert oracle.query_state(s) == oracle.query_state(s)
    assert oracle.query_counter_state == 3 * mdp.num_states


def test_state_query_out_of_range(cliff):
    with pytest.raises(ConfigurationError):
        ExpertOracle(cliff[1]).query_state(10_000)


def test_state_query_cost_with_ratio(cliff):
    ledger = AnnotationLedger(5, cost_ratio=2)
    oracle = ExpertOracle(cliff[1], ledger)
    for k in range(7):
        oracle.query_state(k)
    assert ledger.total_cost == 14
    assert ledger.n_int == 7 and ledger.n_off == 0


def test_cost_ratio_below_one_rejected():
    with pytest.raises(ConfigurationError):
        AnnotationLedger(5, cost_ratio=0.5)


def test_trajectory_query(cliff):
    mdp, expert = cliff
    ledger = AnnotationLedger(mdp.horizon)
    oracle = ExpertOracle(expert, ledger)
    states = [0, 3, 7, 1, 2]
    answers = oracle.query_trajectory(states)
    assert answers == tuple(oracle.query_state(s, step=h) for h, s in enumerate(states))
    assert oracle.query_counter_traj == 1
    with pytest.raises(InputError):
        oracle.query_trajectory([0, 1, 2])


def test_trajectory_query_billed_per_state():
    ledger = AnnotationLedger(100)
    ledger.log_trajectory_query(0, list(range(100)), [0] * 100)
    assert ledger.total_cost == 100
    flat = AnnotationLedger(100, traj_flat_fee=7.0)
    flat.log_trajectory_query(0, list(range(100)), [0] * 100)
    assert flat.total_cost == 7.0


def test_dedup_mode_bills_once():
    ledger = AnnotationLedger(3, dedup=True)
    for _ in range(4):
        ledger.log_state_query(None, 0, 5, 1)
    assert ledger.total_cost == 1 and ledger.n_int == 4
    default = AnnotationLedger(3)
    for _ in range(4):
        default.log_state_query(None, 0, 5, 1)
    assert default.total_cost == 4


@settings(max_examples=40, deadline=None)
@given(ops=st.lists(st.sampled_from(["off", "state", "traj"]), max_size=12), C=st.integers(1, 4))
def test_cost_additivity(ops, C):
    """Total cost is H * N_off + C * N_int whatever the interleaving."""
    H = 3
    forward, backward = AnnotationLedger(H, C), AnnotationLedger(H, C)
    for ledger, seq in ((forward, ops), (backward, ops[::-1])):
        for op in seq:
            if op == "off":
                ledger.log_offline_trajectory([(h, 0, 0) for h in range(H)])
            elif op == "state":
                ledger.log_state_query(None, 0, 1, 0)
            else:
                ledger.log_trajectory_query(None, [0] * H, [0] * H)
    assert forward.total_cost == backward.total_cost
    assert forward.total_cost == H * forward.n_off + C * forward.n_int


def test_generate_offline_empty(cliff):
    mdp, expert = cliff
    ledger = AnnotationLedger(mdp.horizon)
    data = generate_offline(mdp, ExpertOracle(expert, ledger), 0, np.random.default_rng(0))
    assert len(data) == 0 and ledger.total_cost == 0
    with pytest.raises(InputError):
        generate_offline(mdp, ExpertOracle(expert), -1, np.random.default_rng(0))


def test_generated_data_is_expert_consistent_and_safe(cliff):
    mdp, expert = cliff
    ledger = AnnotationLedger(mdp.horizon)
    data = generate_offline(mdp, ExpertOracle(expert, ledger), 50, np.random.default_rng(1))
    assert ledger.n_off == 50 and ledger.total_cost == 50 * mdp.horizon
    for h, s, a in data.pairs():
        assert a == expert.action(h, s)
        assert s < mdp.config.b


def test_figure2_800_pairs():
    mdp, expert = build_cliff(CliffConfig.figure2())
    data = generate_offline(mdp, ExpertOracle(expert), 8, np.random.default_rng(2))
    assert data.num_pairs == 800


def test_prefix_reveal(cliff):
    mdp, expert = cliff
    data = generate_offline(mdp, ExpertOracle(expert), 4, np.random.default_rng(3))
    H = mdp.horizon
    first = data.prefix_reveal(H)
    assert [s for _, s, _ in first] == list(data.trajectories[0][0])
    assert [h for h, _, _ in first] == list(range(H))
    assert data.prefix_reveal(0) == []
    assert all(a == expert.action(h, s) for h, s, a in data.prefix_reveal(H + 2))
    with pytest.raises(InputError):
        data.prefix_reveal(data.num_pairs + 1)


def test_offline_state_distribution_matches_start_distribution():
    cfg = CliffConfig(N0=4, N1=6, H=10, A=3, beta=0.3)
    mdp, expert = build_cliff(cfg)
    data = generate_offline(mdp, ExpertOracle(expert), 10_000, np.random.default_rng(4))
    states = np.concatenate([s for s, _ in data.trajectories])
    counts = np.bincount(states, minlength=mdp.num_states)[:cfg.b]
    expected = mdp.initial_dist[:cfg.b] * counts.sum()
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    # 9 degrees of freedom; the 99.9% quantile is about 27.9
    assert chi2 < 27.9


def test_jsonl_round_trip(cliff, tmp_path):
    mdp, expert = cliff
    data = generate_offline(mdp, ExpertOracle(expert), 3, np.random.default_rng(5))
    path = tmp_path / "d.jsonl"
    data.to_jsonl(path)
    assert len(path.read_text().splitlines()) == 3
    assert OfflineDataset.from_jsonl(path).trajectories == data.trajectories
    path.write_text('{"states": [0, 1], "actions": [0]}\n')
    with pytest.raises(InputError):
        OfflineDataset.from_jsonl(path)
