"""Exact policy divergences on small MDPs by full trajectory enumeration.

Trajectory laws are stored on the product grid of state sequences and action
sequences: entry ``[i, j]`` is the probability of the ``i``-th state sequence
together with the ``j``-th action sequence, both in lexicographic order.  The
law factorizes as ``P^M(s || a) * pi(a || s)``: the dynamics' causally
conditioned probability of the states given the actions, times the policy's
causally conditioned probability of the actions given the states.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import EnumerationTooLarge, InputError
from .learners import COMPLETION_LIMIT, PolicyClass
from .mdp import DetTabular, FirstStepMixture, Policy, TabularMdp, visitation_distribution

PATH_LIMIT = 1_000_000


def hellinger_sq(p, q) -> float:
    """Squared Hellinger distance ``sum_i (sqrt p_i - sqrt q_i)^2``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InputError("distributions have different supports")
    if np.any(p < 0) or np.any(q < 0) or np.any(np.isnan(p)) or np.any(np.isnan(q)):
        raise InputError("probabilities must be non-negative")
    return float(((np.sqrt(p) - np.sqrt(q)) ** 2).sum(axis=-1))


def hellinger_to_delta(p, a) -> np.ndarray:
    """Hellinger distance from each row of ``p`` to the point mass on ``a``: ``2(1 - sqrt p_a)``."""
    p = np.asarray(p, dtype=float)
    pa = np.take_along_axis(p, np.asarray(a)[..., None], axis=-1)[..., 0]
    return 2.0 * (1.0 - np.sqrt(pa))


@lru_cache(maxsize=64)
def sequences(n: int, length: int) -> np.ndarray:
    """All length-``length`` sequences over ``range(n)``, lexicographic, shape ``(n**length, length)``."""
    grid = np.array(list(itertools.product(range(n), repeat=length)), dtype=np.int64)
    grid.setflags(write=False)
    return grid.reshape(-1, length)


def _guard(mdp: TabularMdp) -> None:
    paths = (mdp.num_states * mdp.num_actions) ** mdp.horizon
    if paths > PATH_LIMIT:
        raise EnumerationTooLarge(f"{paths} trajectories exceed the enumeration limit {PATH_LIMIT}")


def _dense_kernel(mdp: TabularMdp, h: int) -> np.ndarray:
    k = mdp.step_matrix(h)
    return k.toarray() if sp.issparse(k) else np.asarray(k)


def causal_dynamics(mdp: TabularMdp) -> np.ndarray:
    """``P^M(s_{1:H} || a_{1:H-1})`` on the (state sequence, action sequence) grid."""
    _guard(mdp)
    S, A, H = mdp.num_states, mdp.num_actions, mdp.horizon
    ss, aa = sequences(S, H), sequences(A, H)
    out = np.repeat(mdp.initial_dist[ss[:, 0]][:, None], len(aa), axis=1)
    for h in range(H - 1):
        k = _dense_kernel(mdp, h)
        rows = ss[:, h][:, None] * A + aa[:, h][None, :]
        out = out * k[rows, ss[:, h + 1][:, None]]
    return out


def causal_policy(policy: Policy, num_states: int, num_actions: int, horizon: int) -> np.ndarray:
    """``pi(a_{1:H} || s_{1:H})`` on the grid, for Markovian policies and first-step mixtures."""
    ss, aa = sequences(num_states, horizon), sequences(num_actions, horizon)
    if isinstance(policy, FirstStepMixture):
        out = np.zeros((len(ss), len(aa)))
        for w, m in zip(policy.weights, policy.members):
            if w > 0:
                out += w * causal_policy(m, num_states, num_actions, horizon)
        return out
    if not policy.markovian:
        raise TypeError(f"no causal law for {type(policy).__name__}")
    out = np.ones((len(ss), len(aa)))
    for h in range(horizon):
        probs = policy.action_probs(h)
        out = out * probs[ss[:, h][:, None], aa[:, h][None, :]]
    return out


@dataclass(frozen=True)
class TrajectoryLaw:
    """Joint law of ``(s_{1:H}, a_{1:H})`` on the enumeration grid."""

    states: np.ndarray
    actions: np.ndarray
    prob: np.ndarray

    @property
    def state_marginal(self) -> np.ndarray:
        return self.prob.sum(axis=1)

    def as_dict(self, tol: float = 0.0) -> dict:
        out = {}
        for i, j in zip(*np.nonzero(self.prob > tol)):
            out[(tuple(self.states[i]), tuple(self.actions[j]))] = float(self.prob[i, j])
        return out


def trajectory_law(mdp: TabularMdp, policy: Policy) -> TrajectoryLaw:
    S, A, H = mdp.num_states, mdp.num_actions, mdp.horizon
    prob = causal_dynamics(mdp) * causal_policy(policy, S, A, H)
    return TrajectoryLaw(sequences(S, H), sequences(A, H), prob)


def tree_trajectory_law(mdp: TabularMdp, policy: Policy) -> dict:
    """Trajectory law by expanding the episode step by step (independent of the grid code).

    A first-step mixture branches on its member before the first state is
    drawn; every other policy branches on ``pi_h(.|s)`` at each step.
    """
    _guard(mdp)
    out: dict = {}
    if isinstance(policy, FirstStepMixture):
        for w, m in zip(policy.weights, policy.members):
            for key, p in tree_trajectory_law(mdp, m).items():
                out[key] = out.get(key, 0.0) + w * p
        return out
    H = mdp.horizon

    def expand(h, s, states, actions, prob):
        probs = policy.action_probs(h)[s]
        for a in np.flatnonzero(probs > 0):
            pa = prob * probs[a]
            st, ac = states + (s,), actions + (int(a),)
            if h == H - 1:
                out[(st, ac)] = out.get((st, ac), 0.0) + pa
                continue
            nxt = mdp.next_state_dist(h, s, int(a))
            for s2 in np.flatnonzero(nxt > 0):
                expand(h + 1, int(s2), st, ac, pa * nxt[s2])

    for s0 in np.flatnonzero(mdp.initial_dist > 0):
        expand(0, int(s0), (), (), float(mdp.initial_dist[s0]))
    return out


def enumerated_return(mdp: TabularMdp, policy: Policy) -> float:
    """Expected return as an explicit sum over every trajectory."""
    law = trajectory_law(mdp, policy)
    H = mdp.horizon
    totals = np.zeros((len(law.states), len(law.actions)))
    for h in range(H):
        totals += mdp.rewards[law.states[:, h][:, None], law.actions[:, h][None, :]]
    return float((law.prob * totals).sum())


# -- divergences ----------------------------------------------------------------------------


def traj_l1_divergence(mdp: TabularMdp, pi: Policy, pi_prime: Policy) -> float:
    """``E^pi sum_h P_{a' ~ pi'(.|s_h)}[a_h != a']`` by enumeration; ``pi_prime`` Markovian."""
    law = trajectory_law(mdp, pi)
    miss = np.zeros_like(law.prob)
    for h in range(mdp.horizon):
        probs = pi_prime.action_probs(h)
        miss += 1.0 - probs[law.states[:, h][:, None], law.actions[:, h][None, :]]
    return float((law.prob * miss).sum())


def traj_linf_semimetric(mdp: TabularMdp, pi: Policy, pi_prime: Policy) -> float:
    """``E^pi P_{a' ~ pi'(.||s)}[a_{1:H} != a'_{1:H}]`` by enumeration."""
    law = trajectory_law(mdp, pi)
    agree = causal_policy(pi_prime, mdp.num_states, mdp.num_actions, mdp.horizon)
    return float(1.0 - (law.prob * agree).sum())


def statewise_hellinger_error(mdp: TabularMdp, policies, expert: Policy) -> float:
    """Sum over the sequence of ``E_{s ~ d^pi}[D_H^2(pi(.|s), pi^E(.|s))]``, with ``d^pi`` step-averaged."""
    H = mdp.horizon
    total = 0.0
    for pi in policies:
        d = visitation_distribution(mdp, pi)
        for h in range(H):
            e = expert.action_probs(h)
            dist = ((np.sqrt(pi.action_probs(h)) - np.sqrt(e)) ** 2).sum(axis=1)
            total += float(d[h] @ dist) / H
    return total


def decoupled_hellinger(mdp: TabularMdp, pi: Policy, expert: Policy) -> float:
    """``E_{s ~ P^pi}[D_H^2(pi(.||s), pi^E(.||s))]`` with action-sequence laws over ``A^H``."""
    S, A, H = mdp.num_states, mdp.num_actions, mdp.horizon
    dyn = causal_dynamics(mdp)
    pol = causal_policy(pi, S, A, H)
    exp_law = causal_policy(expert, S, A, H)
    p_states = (dyn * pol).sum(axis=1)
    d2 = ((np.sqrt(pol) - np.sqrt(exp_law)) ** 2).sum(axis=1)
    return float(p_states @ d2)


def agreement_indicator(policy: DetTabular, expert: DetTabular, horizon: int, num_states: int) -> np.ndarray:
    """Per state sequence: does ``policy`` pick the expert action at every step."""
    ss = sequences(num_states, horizon)
    ok = np.ones(len(ss), dtype=bool)
    for h in range(horizon):
        ok &= policy.step_table(h)[ss[:, h]] == expert.step_table(h)[ss[:, h]]
    return ok


def symmetric_F(mdp: TabularMdp, nu: DetTabular, nu_prime: DetTabular, expert: DetTabular) -> tuple[float, float]:
    """``(F(nu; nu'), F(nu'; nu))``: mass of one policy's state sequences on which the other leaves the expert."""
    S, H = mdp.num_states, mdp.horizon
    p_nu = trajectory_law(mdp, nu).state_marginal
    p_nup = trajectory_law(mdp, nu_prime).state_marginal
    f1 = float(p_nu @ ~agreement_indicator(nu_prime, expert, H, S))
    f2 = float(p_nup @ ~agreement_indicator(nu, expert, H, S))
    return f1, f2


def deterministic_decomposition(policy: Policy, num_states: int, num_actions: int, horizon: int) -> FirstStepMixture:
    """First-step mixture over all ``A^(S H)`` step-indexed deterministic tables matching ``policy``.

    Member ``(a_{h,s})`` gets weight ``prod_{h,s} pi_h(a_{h,s} | s)``.
    """
    n = num_actions ** (num_states * horizon)
    if n > COMPLETION_LIMIT:
        raise EnumerationTooLarge(f"{n} deterministic policies exceed {COMPLETION_LIMIT}")
    probs = np.stack([policy.action_probs(h) for h in range(horizon)])
    members, weights = [], []
    for flat in itertools.product(range(num_actions), repeat=num_states * horizon):
        table = np.array(flat).reshape(horizon, num_states)
        w = float(np.prod(probs[np.arange(horizon)[:, None], np.arange(num_states)[None, :], table]))
        members.append(DetTabular(table, num_actions))
        weights.append(w)
    return FirstStepMixture(np.array(weights), members)


class ClassTrajectoryTables:
    """State-sequence laws and expert agreement of every member of a deterministic class.

    Makes the decoupled Hellinger distance of any first-step mixture over the
    class a pair of matrix-vector products, which is what the trajectory-wise
    estimation error needs round after round.
    """

    def __init__(self, mdp: TabularMdp, policy_class: PolicyClass, expert: DetTabular):
        S, H = mdp.num_states, mdp.horizon
        _guard(mdp)
        ss = sequences(S, H)
        self.state_probs = np.empty((len(policy_class), len(ss)))
        self.agree = np.empty((len(policy_class), len(ss)))
        kernels = [_dense_kernel(mdp, h) for h in range(H - 1)]
        for i, member in enumerate(policy_class):
            p = mdp.initial_dist[ss[:, 0]].copy()
            for h in range(H - 1):
                acts = member.step_table(h)[ss[:, h]]
                p *= kernels[h][ss[:, h] * mdp.num_actions + acts, ss[:, h + 1]]
            self.state_probs[i] = p
            self.agree[i] = agreement_indicator(member, expert, H, S)

    def decoupled_hellinger(self, weights) -> float:
        w = np.asarray(weights, dtype=float)
        p_states = w @ self.state_probs
        hit = np.clip(w @ self.agree, 0.0, 1.0)
        return float(p_states @ (2.0 * (1.0 - np.sqrt(hit))))
