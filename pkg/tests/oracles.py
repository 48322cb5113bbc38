"""Brute-force reference computations written independently of the package internals.

Everything here walks explicit Python loops over all state and action
sequences, reading the MDP only through ``next_state_dist`` and the policy
only through ``action_probs``.
"""

import itertools

import numpy as np

from ilbench.mdp import TabularMdp


def paths(mdp, policy):
    """Yield ``(states, actions, probability)`` for every trajectory of a Markovian policy."""
    S, A, H = mdp.num_states, mdp.num_actions, mdp.horizon
    probs = [policy.action_probs(h) for h in range(H)]
    for states in itertools.product(range(S), repeat=H):
        p_s = mdp.initial_dist[states[0]]
        if p_s == 0:
            continue
        for actions in itertools.product(range(A), repeat=H):
            p = p_s
            for h in range(H):
                p *= probs[h][states[h], actions[h]]
                if h + 1 < H:
                    p *= mdp.next_state_dist(h, states[h], actions[h])[states[h + 1]]
                if p == 0:
                    break
            if p > 0:
                yield states, actions, p


def brute_return(mdp, policy):
    return sum(p * sum(mdp.rewards[s, a] for s, a in zip(st, ac)) for st, ac, p in paths(mdp, policy))


def brute_visitation(mdp, policy):
    d = np.zeros((mdp.horizon, mdp.num_states))
    for st, _, p in paths(mdp, policy):
        for h, s in enumerate(st):
            d[h, s] += p
    return d


def brute_value(mdp, policy, h, s):
    """``V_h(s)`` by enumerating continuations from ``(h, s)``."""
    H, A = mdp.horizon, mdp.num_actions
    if h == H:
        return 0.0
    pa = policy.action_probs(h)[s]
    total = 0.0
    for a in range(A):
        if pa[a] == 0:
            continue
        total += pa[a] * brute_q(mdp, policy, h, s, a)
    return total


def brute_q(mdp, policy, h, s, a):
    q = mdp.rewards[s, a]
    if h + 1 < mdp.horizon:
        nxt = mdp.next_state_dist(h, s, a)
        q += sum(nxt[s2] * brute_value(mdp, policy, h + 1, s2) for s2 in range(mdp.num_states) if nxt[s2] > 0)
    return q


def random_mdp(rng, S, A, H):
    if H < 2 or rng.random() < 0.5:
        P = rng.dirichlet(np.ones(S), size=(S, A))
    else:
        P = rng.dirichlet(np.ones(S), size=(H - 1, S, A))
    return TabularMdp(rng.dirichlet(np.ones(S)), P, rng.random((S, A)), H)
