"""Behavior cloning and the interactive / hybrid DAgger-style training loops.

Every interactive loop returns the uniform first-step mixture over the
policies it rolled out, plus one :class:`TrainRecord` per round.  A
``monitor(record, learner)`` callback, when given, is invoked after each
learner update; the experiment harness uses it to evaluate snapshots without
keeping them all alive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, InputError
from .learners import (
    ExpWeightsLearner,
    MemorizingLearner,
    PolicyClass,
    make_learner,
)
from .mdp import FirstStepMixture, Policy, TabularMdp
from .oracle import AnnotationLedger, ExpertOracle


@dataclass(slots=True)
class TrainRecord:
    round: int
    snapshot: int
    annotations: int
    cost: float
    states: tuple[int, ...]
    answers: tuple[int, ...]
    policy: Policy


Monitor = Callable[[TrainRecord, object], None]


def _as_learner(mdp: TabularMdp, learner, eta: float = 1.0):
    if isinstance(learner, PolicyClass):
        return ExpWeightsLearner(learner, eta)
    if isinstance(learner, str):
        if learner != "memorizing":
            raise ConfigurationError(f"learner {learner!r} needs an explicit policy class")
        return MemorizingLearner(mdp.num_states, mdp.num_actions)
    return learner


def _ledger(mdp: TabularMdp, oracle: ExpertOracle) -> AnnotationLedger:
    if oracle.expert.num_states != mdp.num_states or oracle.expert.num_actions != mdp.num_actions:
        raise ConfigurationError("oracle expert does not match the MDP")
    if oracle.ledger is None:
        oracle.ledger = AnnotationLedger(mdp.horizon)
    return oracle.ledger


def run_bc(mdp: TabularMdp, pairs, learner_kind: str = "memorizing",
           policy_class: PolicyClass | None = None) -> Policy:
    """Zero-log-loss fit to ``(step, state, action)`` demonstrations.

    The memorizing learner returns its annotated-state policy; class-based
    learners return the uniform mixture over the consistent members, which is
    exactly the set of log-loss minimizers under realizability.
    """
    pairs = list(pairs)
    if learner_kind == "memorizing":
        learner = MemorizingLearner(mdp.num_states, mdp.num_actions)
        learner.seed_offline(pairs)
        return learner.propose()
    learner = make_learner(learner_kind, policy_class=policy_class)
    learner.seed_offline(pairs)
    return FirstStepMixture.uniform(learner.policy_class.members)


def _state_loop(mdp, oracle, learner, n_int, rng, monitor, first_round=0):
    ledger = _ledger(mdp, oracle)
    H = mdp.horizon
    records, proposals = [], []
    for n in range(n_int):
        policy = learner.propose()
        h = int(rng.integers(H))
        s = int(mdp.sample_state(policy, h, rng))
        a = oracle.query_state(s, step=h, round=first_round + n)
        learner.observe(h, s, a)
        rec = TrainRecord(n, n, ledger.annotations, ledger.total_cost, (s,), (a,), policy)
        proposals.append(policy)
        records.append(rec)
        if monitor is not None:
            monitor(rec, learner)
    return proposals, records


def _output(proposals, fallback: Policy) -> Policy:
    return FirstStepMixture.uniform(proposals) if proposals else fallback


def run_stagger(mdp: TabularMdp, oracle: ExpertOracle, learner, n_int: int,
                rng: np.random.Generator, monitor: Monitor | None = None):
    """Interactive loop with one state-wise expert query per rollout."""
    if n_int < 1:
        raise InputError("STAGGER needs at least one round")
    learner = _as_learner(mdp, learner)
    proposals, records = _state_loop(mdp, oracle, learner, n_int, rng, monitor)
    return _output(proposals, learner.propose()), records


def run_warm_stagger(mdp: TabularMdp, oracle: ExpertOracle, learner, offline_pairs, n_int: int,
                     rng: np.random.Generator, monitor: Monitor | None = None):
    """Restrict the learner to the offline demonstrations, then run the STAGGER loop."""
    if n_int < 0:
        raise InputError("interactive budget must be non-negative")
    learner = _as_learner(mdp, learner)
    learner.seed_offline(list(offline_pairs))
    proposals, records = _state_loop(mdp, oracle, learner, n_int, rng, monitor)
    return _output(proposals, learner.propose()), records


def _trajectory_loop(mdp, oracle, learner, n_rounds, rng, monitor):
    ledger = _ledger(mdp, oracle)
    records, proposals = [], []
    for n in range(n_rounds):
        policy = learner.propose_first_step()
        traj = mdp.rollout(policy, rng)
        answers = oracle.query_trajectory(traj.states, round=n)
        learner.observe_trajectory(traj.states, answers)
        rec = TrainRecord(n, n, ledger.annotations, ledger.total_cost, traj.states, answers, policy)
        proposals.append(policy)
        records.append(rec)
        if monitor is not None:
            monitor(rec, learner)
    return proposals, records


def run_tragger(mdp: TabularMdp, oracle: ExpertOracle, learner, n_rounds: int,
                rng: np.random.Generator, monitor: Monitor | None = None):
    """Interactive loop querying the expert on every state of each rollout."""
    if n_rounds < 1:
        raise InputError("TRAGGER needs at least one round")
    learner = _as_learner(mdp, learner)
    proposals, records = _trajectory_loop(mdp, oracle, learner, n_rounds, rng, monitor)
    return _output(proposals, learner.propose_first_step()), records


def run_warm_tragger(mdp: TabularMdp, oracle: ExpertOracle, learner, offline_pairs, budget: int,
                     rng: np.random.Generator, monitor: Monitor | None = None):
    """TRAGGER over the offline-consistent class with ``budget // H`` trajectory rounds.

    With fewer than ``H`` interactive annotations no round runs and the
    behavior-cloning policy (the learner's proposal on the offline data) is
    returned.
    """
    if budget < 0:
        raise InputError("interactive budget must be non-negative")
    learner = _as_learner(mdp, learner)
    learner.seed_offline(list(offline_pairs))
    proposals, records = _trajectory_loop(mdp, oracle, learner, budget // mdp.horizon, rng, monitor)
    return _output(proposals, learner.propose_first_step()), records
