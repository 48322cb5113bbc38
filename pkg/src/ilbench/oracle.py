"""Expert oracles, offline demonstrations and the annotation-cost ledger."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError
from .mdp import DetTabular, TabularMdp


class AnnotationLedger:
    """Running record of every expert annotation and what it cost.

    Offline data is billed one unit per (state, action) pair, so ``N_off``
    whole trajectories cost ``H * N_off``.  Each interactive state query costs
    ``cost_ratio``; a trajectory query is billed as ``H`` state queries unless
    ``traj_flat_fee`` is set.  With ``dedup=True`` a repeat query on an already
    annotated key is free (the default bills every query).
    """

    def __init__(self, horizon: int, cost_ratio: float = 1.0, dedup: bool = False,
                 traj_flat_fee: float | None = None):
        if cost_ratio < 1:
            raise ConfigurationError("cost ratio C must be at least 1")
        self.horizon = int(horizon)
        self.cost_ratio = float(cost_ratio)
        self.dedup = dedup
        self.traj_flat_fee = traj_flat_fee
        self.offline_pairs: list[tuple[int, int, int]] = []
        self.interactive_queries: list[tuple[int | None, object, object]] = []
        self.n_off = 0
        self.n_int = 0
        self.offline_cost = 0.0
        self.interactive_cost = 0.0
        self._seen: set = set()

    @property
    def total_cost(self) -> float:
        return self.offline_cost + self.interactive_cost

    @property
    def annotations(self) -> int:
        return len(self.offline_pairs) + self.n_int

    def log_offline_trajectory(self, steps_states_actions) -> None:
        triples = list(steps_states_actions)
        self.offline_pairs.extend(triples)
        self.n_off += 1
        self.offline_cost += len(triples)

    def log_offline_pairs(self, triples) -> None:
        """Bill revealed demonstration pairs; a pair at step 0 starts a new trajectory."""
        triples = list(triples)
        self.offline_pairs.extend(triples)
        self.n_off += sum(1 for h, _, _ in triples if h == 0)
        self.offline_cost += len(triples)

    def log_offline_pair(self, step: int, state: int, action: int) -> None:
        self.offline_pairs.append((step, state, action))
        if step == 0:
            self.n_off += 1
        self.offline_cost += 1

    def log_state_query(self, round_: int | None, step: int, state: int, action: int) -> None:
        self.interactive_queries.append((round_, (step, state), action))
        self.n_int += 1
        if self.dedup:
            key = (step, state)
            if key in self._seen:
                return
            self._seen.add(key)
        self.interactive_cost += self.cost_ratio

    def log_trajectory_query(self, round_: int | None, states, actions) -> None:
        self.interactive_queries.append((round_, tuple(states), tuple(actions)))
        self.n_int += len(states)
        if self.traj_flat_fee is not None:
            self.interactive_cost += self.traj_flat_fee
            return
        fresh = 0
        for h, s in enumerate(states):
            if self.dedup:
                if (h, s) in self._seen:
                    continue
                self._seen.add((h, s))
            fresh += 1
        self.interactive_cost += self.cost_ratio * fresh


class ExpertOracle:
    """State-wise and trajectory-wise access to a deterministic expert."""

    def __init__(self, expert: DetTabular, ledger: AnnotationLedger | None = None):
        self.expert = expert
        self.ledger = ledger
        self.query_counter_state = 0
        self.query_counter_traj = 0

    def _check_state(self, state: int) -> None:
        if not 0 <= state < self.expert.num_states:
            raise ConfigurationError(f"state {state} out of range")

    def query_state(self, state: int, step: int = 0, round: int | None = None) -> int:
        state = int(state)
        self._check_state(state)
        action = self.expert.action(step, state)
        self.query_counter_state += 1
        if self.ledger is not None:
            self.ledger.log_state_query(round, step, int(state), action)
        return action

    def query_trajectory(self, states, round: int | None = None) -> tuple[int, ...]:
        states = [int(s) for s in states]
        horizon = self.ledger.horizon if self.ledger is not None else self.expert.horizon
        if horizon is not None and len(states) != horizon:
            raise InputError(f"trajectory query needs {horizon} states, got {len(states)}")
        for s in states:
            self._check_state(s)
        actions = tuple(self.expert.action(h, s) for h, s in enumerate(states))
        self.query_counter_traj += 1
        if self.ledger is not None:
            self.ledger.log_trajectory_query(round, states, actions)
        return actions


@dataclass
class OfflineDataset:
    """Reward-free expert trajectories, each a pair of state and action tuples."""

    trajectories: list[tuple[tuple[int, ...], tuple[int, ...]]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def num_pairs(self) -> int:
        return sum(len(s) for s, _ in self.trajectories)

    def pairs(self) -> list[tuple[int, int, int]]:
        """All ``(step, state, action)`` triples in trajectory order."""
        return [(h, s, a) for states, actions in self.trajectories
                for h, (s, a) in enumerate(zip(states, actions))]

    def prefix_reveal(self, k: int) -> list[tuple[int, int, int]]:
        """The first ``k`` triples, walking through trajectories in order."""
        if k < 0 or k > self.num_pairs:
            raise InputError(f"cannot reveal {k} of {self.num_pairs} pairs")
        out = []
        for states, actions in self.trajectories:
            for h, (s, a) in enumerate(zip(states, actions)):
                if len(out) == k:
                    return out
                out.append((h, s, a))
        return out

    def to_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for states, actions in self.trajectories:
                f.write(json.dumps({"states": list(states), "actions": list(actions)}) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "OfflineDataset":
        trajs = []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                obj = json.loads(line)
                if len(obj["states"]) != len(obj["actions"]):
                    raise InputError("states and actions differ in length")
                trajs.append((tuple(obj["states"]), tuple(obj["actions"])))
        return cls(trajs)


def generate_offline(mdp: TabularMdp, oracle: ExpertOracle, n: int, rng: np.random.Generator) -> OfflineDataset:
    """``n`` i.i.d. expert rollouts with rewards stripped; billed to the oracle's ledger."""
    if n < 0:
        raise InputError("number of trajectories must be non-negative")
    data = OfflineDataset()
    for _ in range(n):
        traj = mdp.rollout(oracle.expert, rng)
        data.trajectories.append((traj.states, traj.actions))
        if oracle.ledger is not None:
            oracle.ledger.log_offline_trajectory(
                (h, s, a) for h, (s, a) in enumerate(zip(traj.states, traj.actions)))
    return data
