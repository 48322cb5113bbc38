"""Finite-horizon tabular MDPs, tabular policies, rollouts and exact evaluation.

Steps are 0-indexed throughout: an episode visits ``s_0, ..., s_{H-1}`` and the
kernel used to leave step ``h`` is ``mdp.step_matrix(h)`` for ``h < H - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, InputError

PROB_TOL = 1e-12


def _check_prob_vector(p: np.ndarray, what: str, tol: float = PROB_TOL) -> None:
    if np.any(~np.isfinite(p)) or np.any(p < 0):
        raise ConfigurationError(f"{what} has negative or non-finite entries")
    if abs(float(p.sum()) - 1.0) > tol:
        raise ConfigurationError(f"{what} sums to {p.sum()!r}, not 1")


def sample_index(cdf: np.ndarray, u: float) -> int:
    """Inverse-CDF draw: smallest index whose cumulative mass exceeds ``u``."""
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(i, len(cdf) - 1)


class TabularMdp:
    """Finite episodic MDP with deterministic rewards.

    ``transitions`` is one of

    * a dense ``(S, A, S)`` array (homogeneous kernel reused at every step),
    * a dense ``(H - 1, S, A, S)`` array (one kernel per step),
    * a sparse ``(S * A, S)`` matrix, rows indexed by ``s * A + a`` (homogeneous),
    * a list of ``H - 1`` such sparse matrices.
    """

    def __init__(
        self,
        initial_dist,
        transitions,
        rewards,
        horizon: int,
        return_bound: float | None = None,
    ):
        self.rewards = np.asarray(rewards, dtype=float)
        if self.rewards.ndim != 2:
            raise ConfigurationError("rewards must be an (S, A) table")
        self.num_states, self.num_actions = self.rewards.shape
        self.horizon = int(horizon)
        if self.horizon < 1:
            raise ConfigurationError("horizon must be positive")
        self.initial_dist = np.asarray(initial_dist, dtype=float)
        if self.initial_dist.shape != (self.num_states,):
            raise ConfigurationError("initial distribution has the wrong length")
        _check_prob_vector(self.initial_dist, "initial distribution")
        if np.any(self.rewards < 0) or np.any(self.rewards > 1):
            raise ConfigurationError("rewards must lie in [0, 1]")
        self._set_transitions(transitions)
        self._rho_cdf = np.cumsum(self.initial_dist)
        bound = self.max_trajectory_reward()
        if return_bound is None:
            return_bound = bound
        elif return_bound < bound - 1e-9:
            raise ConfigurationError(
                f"return bound {return_bound} is below the best trajectory reward {bound}"
            )
        self.return_bound = float(return_bound)

    # -- transition storage -------------------------------------------------

    def _set_transitions(self, transitions) -> None:
        S, A = self.num_states, self.num_actions
        n_kernels = max(self.horizon - 1, 0)
        if isinstance(transitions, (list, tuple)) and transitions and sp.issparse(transitions[0]):
            if len(transitions) != n_kernels:
                raise ConfigurationError("need one sparse kernel per transition step")
            kernels = [sp.csr_array(k, dtype=float) for k in transitions]
            self.homogeneous = False
        elif sp.issparse(transitions):
            kernels = [sp.csr_array(transitions, dtype=float)]
            self.homogeneous = True
        else:
            P = np.asarray(transitions, dtype=float)
            if P.shape == (S, A, S):
                kernels = [P.reshape(S * A, S)]
                self.homogeneous = True
            elif P.shape == (n_kernels, S, A, S):
                kernels = [P[h].reshape(S * A, S) for h in range(n_kernels)]
                self.homogeneous = False
            else:
                raise ConfigurationError(f"transition array has shape {P.shape}")
        for k in kernels:
            self._validate_kernel(k)
        self._kernels = kernels

    def _validate_kernel(self, k) -> None:
        S, A = self.num_states, self.num_actions
        if k.shape != (S * A, S):
            raise ConfigurationError(f"kernel has shape {k.shape}, expected {(S * A, S)}")
        data = k.data if sp.issparse(k) else k
        if np.any(data < 0) or np.any(~np.isfinite(data)):
            raise ConfigurationError("transition probabilities must be finite and non-negative")
        sums = np.asarray(k.sum(axis=1)).ravel()
        if np.any(np.abs(sums - 1.0) > PROB_TOL):
            raise ConfigurationError("every transition row must sum to 1")

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self._kernels[0]) if self._kernels else False

    def step_matrix(self, h: int):
        """``(S*A, S)`` kernel taking ``s_h`` to ``s_{h+1}``."""
        if not 0 <= h < self.horizon - 1:
            raise IndexError(f"no transition out of step {h}")
        return self._kernels[0] if self.homogeneous else self._kernels[h]

    def next_state_dist(self, h: int, s: int, a: int) -> np.ndarray:
        k = self.step_matrix(h)
        row = s * self.num_actions + a
        if sp.issparse(k):
            out = np.zeros(self.num_states)
            lo, hi = k.indptr[row], k.indptr[row + 1]
            out[k.indices[lo:hi]] = k.data[lo:hi]
            return out
        return np.array(k[row])

    def max_trajectory_reward(self) -> float:
        """Largest summed reward over trajectories reachable with positive probability."""
        S, A = self.num_states, self.num_actions
        best = self.rewards.max(axis=1)
        for h in range(self.horizon - 2, -1, -1):
            k = self.step_matrix(h)
            if sp.issparse(k):
                vals = best[k.indices]
                vals = np.where(k.data > 0, vals, -np.inf)
                nxt = np.maximum.reduceat(vals, k.indptr[:-1])
            else:
                nxt = np.where(k > 0, best[None, :], -np.inf).max(axis=1)
            best = (self.rewards + nxt.reshape(S, A)).max(axis=1)
        return float(best[self.initial_dist > 0].max())

    # -- sampling -------------------------------------------------------------

    def rollout(self, policy: "Policy", rng: np.random.Generator, steps: int | None = None) -> "Trajectory":
        """Sample one episode, or its first ``steps`` steps when given."""
        policy.check_dims(self)
        n = self.horizon if steps is None else int(steps)
        if not 0 < n <= self.horizon:
            raise InputError(f"steps must lie in [1, {self.horizon}]")
        policy = policy.start_episode(rng)
        states, actions, rewards = [], [], []
        s = sample_index(self._rho_cdf, rng.random())
        for h in range(n):
            a = policy.sample_action(h, s, rng)
            states.append(s)
            actions.append(a)
            rewards.append(float(self.rewards[s, a]))
            if h + 1 < n:
                s = sample_index(np.cumsum(self.next_state_dist(h, s, a)), rng.random())
        return Trajectory(tuple(states), tuple(actions), tuple(rewards))

    def sample_state(self, policy: "Policy", h: int, rng: np.random.Generator) -> int:
        """Draw ``s_h`` under ``policy`` by rolling out the first ``h + 1`` steps."""
        return self.rollout(policy, rng, steps=h + 1).states[h]


@dataclass(frozen=True)
class Trajectory:
    """States, actions and rewards of one episode (or of a requested prefix)."""

    states: tuple[int, ...]
    actions: tuple[int, ...]
    rewards: tuple[float, ...]

    def __post_init__(self):
        if not len(self.states) == len(self.actions) == len(self.rewards):
            raise InputError("trajectory fields differ in length")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))


# -- policies -----------------------------------------------------------------


class Policy:
    """Base class. Markovian subclasses implement ``action_probs``."""

    num_states: int
    num_actions: int
    stationary: bool = True
    markovian: bool = True

    def action_probs(self, h: int) -> np.ndarray:
        raise TypeError(f"{type(self).__name__} is not Markovian")

    def sample_action(self, h: int, s: int, rng: np.random.Generator) -> int:
        return sample_index(np.cumsum(self.action_probs(h)[s]), rng.random())

    def start_episode(self, rng: np.random.Generator) -> "Policy":
        return self

    def check_dims(self, mdp: TabularMdp) -> None:
        if self.num_states != mdp.num_states or self.num_actions != mdp.num_actions:
            raise ConfigurationError(
                f"policy is {self.num_states}x{self.num_actions}, "
                f"MDP is {mdp.num_states}x{mdp.num_actions}"
            )
        horizon = getattr(self, "horizon", None)
        if not self.stationary and horizon is not None and horizon < mdp.horizon:
            raise ConfigurationError("step-indexed policy is shorter than the horizon")


class DetTabular(Policy):
    """Deterministic policy given by an action table, ``(S,)`` or ``(H, S)``."""

    def __init__(self, table, num_actions: int):
        self.table = np.asarray(table, dtype=np.int64)
        self.table.setflags(write=False)
        if self.table.ndim not in (1, 2):
            raise ConfigurationError("action table must be (S,) or (H, S)")
        self.num_actions = int(num_actions)
        self.num_states = self.table.shape[-1]
        self.stationary = self.table.ndim == 1
        self.horizon = None if self.stationary else self.table.shape[0]
        if np.any(self.table < 0) or np.any(self.table >= self.num_actions):
            raise ConfigurationError("action table entry out of range")
        self._lookup = self.table.tolist()

    def step_table(self, h: int) -> np.ndarray:
        return self.table if self.stationary else self.table[h]

    def action(self, h: int, s: int) -> int:
        return self._lookup[s] if self.stationary else self._lookup[h][s]

    def action_probs(self, h: int) -> np.ndarray:
        probs = np.zeros((self.num_states, self.num_actions))
        probs[np.arange(self.num_states), self.step_table(h)] = 1.0
        return probs

    def sample_action(self, h, s, rng):
        return self.action(h, s)

    def __eq__(self, other):
        return (
            isinstance(other, DetTabular)
            and self.num_actions == other.num_actions
            and np.array_equal(self.table, other.table)
        )

    def __hash__(self):
        return hash((self.table.shape, self.table.tobytes(), self.num_actions))

    def __repr__(self):
        return f"DetTabular({self.table.tolist()}, num_actions={self.num_actions})"


class StochTabular(Policy):
    """Stochastic policy with an ``(S, A)`` or ``(H, S, A)`` probability table."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=float)
        self.probs.setflags(write=False)
        if self.probs.ndim not in (2, 3):
            raise ConfigurationError("probability table must be (S, A) or (H, S, A)")
        if np.any(self.probs < 0) or np.any(np.abs(self.probs.sum(-1) - 1) > PROB_TOL):
            raise ConfigurationError("every action distribution must be a probability vector")
        self.num_states, self.num_actions = self.probs.shape[-2:]
        self.stationary = self.probs.ndim == 2
        self.horizon = None if self.stationary else self.probs.shape[0]

    def action_probs(self, h):
        return self.probs if self.stationary else self.probs[h]


class EachStepMixture(Policy):
    """Mixture over a policy class that redraws its member at every step."""

    def __init__(self, weights, policy_class):
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (len(policy_class),):
            raise ConfigurationError("one weight per class member is required")
        _check_prob_vector(self.weights, "mixture weights")
        self.policy_class = policy_class
        self.num_states = policy_class.num_states
        self.num_actions = policy_class.num_actions
        self.stationary = policy_class.stationary
        self.horizon = policy_class.horizon
        self._cdf = np.cumsum(self.weights)

    def action_probs(self, h):
        S = self.num_states
        probs = np.zeros((S, self.num_actions))
        tables = self.policy_class.step_tables(h)
        live = self.weights > 0
        np.add.at(
            probs,
            (np.broadcast_to(np.arange(S), tables[live].shape), tables[live]),
            np.broadcast_to(self.weights[live, None], tables[live].shape),
        )
        return probs

    def sample_action(self, h, s, rng):
        member = sample_index(self._cdf, rng.random())
        return self.policy_class[member].action(h, s)


class FirstStepMixture(Policy):
    """Draws one member at the start of an episode and follows it throughout."""

    markovian = False

    def __init__(self, weights, members: Sequence[Policy]):
        self.weights = np.asarray(weights, dtype=float)
        self.members = list(members)
        if not self.members or self.weights.shape != (len(self.members),):
            raise ConfigurationError("one weight per member is required")
        _check_prob_vector(self.weights, "mixture weights")
        self.num_states = self.members[0].num_states
        self.num_actions = self.members[0].num_actions
        if any(
            m.num_states != self.num_states or m.num_actions != self.num_actions
            for m in self.members
        ):
            raise ConfigurationError("mixture members disagree on dimensions")
        self.stationary = all(m.stationary for m in self.members)
        self._cdf = np.cumsum(self.weights)

    @classmethod
    def uniform(cls, members: Sequence[Policy]) -> "FirstStepMixture":
        n = len(members)
        return cls(np.full(n, 1.0 / n), members)

    def start_episode(self, rng):
        return self.members[sample_index(self._cdf, rng.random())].start_episode(rng)

    def check_dims(self, mdp):
        for m in self.members:
            m.check_dims(mdp)


# -- exact evaluation -----------------------------------------------------------


def rollout(mdp: TabularMdp, policy: Policy, rng: np.random.Generator, steps: int | None = None) -> Trajectory:
    """Sample a trajectory of ``policy`` in ``mdp`` (a prefix if ``steps`` is given)."""
    return mdp.rollout(policy, rng, steps)


def monte_carlo_return(mdp: TabularMdp, policy: Policy, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Mean episode return over ``n`` rollouts and its standard error."""
    totals = np.array([mdp.rollout(policy, rng).total_reward for _ in range(n)])
    se = float(totals.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return float(totals.mean()), se


def _policy_values(mdp: TabularMdp, policy: Policy, h: int, q: np.ndarray) -> np.ndarray:
    if isinstance(policy, DetTabular):
        return q[np.arange(mdp.num_states), policy.step_table(h)]
    return (policy.action_probs(h) * q).sum(axis=1)


def _backward(mdp: TabularMdp, policy: Policy, visit=None) -> np.ndarray:
    """Backward recursion; calls ``visit(h, V_h, Q_h)`` and returns V as (H, S)."""
    if not policy.markovian:
        raise TypeError("backward recursion needs a Markovian policy")
    policy.check_dims(mdp)
    S, A, H = mdp.num_states, mdp.num_actions, mdp.horizon
    V = np.zeros((H, S))
    nxt = None
    for h in range(H - 1, -1, -1):
        q = mdp.rewards
        if nxt is not None:
            q = q + (mdp.step_matrix(h) @ nxt).reshape(S, A)
        V[h] = _policy_values(mdp, policy, h, q)
        if visit is not None:
            visit(h, V[h], q)
        nxt = V[h]
    return V


def _policy_chain(mdp: TabularMdp, policy: Policy):
    """Yield ``(h, r_pi, P_pi)`` with the step-``h`` reward vector and ``(S, S)`` kernel under the policy.

    The kernel is ``None`` at the last step.  For homogeneous MDPs and
    stationary policies it is formed once and reused.
    """
    S, A, H = mdp.num_states, mdp.num_actions, mdp.horizon
    cached = None
    for h in range(H):
        reuse = cached is not None and mdp.homogeneous and policy.stationary
        if not reuse:
            if isinstance(policy, DetTabular):
                acts = policy.step_table(h)
                r_pi = mdp.rewards[np.arange(S), acts]
                rows = np.arange(S) * A + acts
                P_pi = mdp.step_matrix(h)[rows] if h < H - 1 else None
            else:
                probs = policy.action_probs(h)
                r_pi = (probs * mdp.rewards).sum(axis=1)
                P_pi = None
                if h < H - 1:
                    mix = sp.csr_array((probs.ravel(), np.arange(S * A), np.arange(0, S * A + 1, A)),
                                       shape=(S, S * A))
                    P_pi = mix @ mdp.step_matrix(h)
                    if not sp.issparse(mdp.step_matrix(h)):
                        P_pi = np.asarray(P_pi)
            cached = (r_pi, P_pi)
        r_pi, P_pi = cached
        yield h, r_pi, (P_pi if h < H - 1 else None)


def exact_return(mdp: TabularMdp, policy: Policy) -> float:
    """Expected episode return, by dynamic programming."""
    if isinstance(policy, FirstStepMixture):
        return float(sum(w * exact_return(mdp, m) for w, m in zip(policy.weights, policy.members)))
    if not policy.markovian:
        raise TypeError("exact evaluation needs a Markovian policy or a first-step mixture")
    policy.check_dims(mdp)
    steps = list(_policy_chain(mdp, policy))
    v = np.zeros(mdp.num_states)
    for h, r_pi, P_pi in reversed(steps):
        v = r_pi + (P_pi @ v if P_pi is not None else 0.0)
    return float(mdp.initial_dist @ v)


def value_functions(mdp: TabularMdp, policy: Policy) -> tuple[np.ndarray, np.ndarray]:
    """State values ``V[h, s]`` and action values ``Q[h, s, a]``."""
    Q = np.zeros((mdp.horizon, mdp.num_states, mdp.num_actions))

    def keep(h, v, q):
        Q[h] = q

    V = _backward(mdp, policy, keep)
    return V, Q


def recoverability_mu(mdp: TabularMdp, expert: Policy) -> float:
    """Smallest ``mu >= 0`` with ``V_h(s) - Q_h(s, a) <= mu`` under the expert."""
    worst = [0.0]

    def track(h, v, q):
        worst[0] = max(worst[0], float((v[:, None] - q).max()))

    _backward(mdp, expert, track)
    return worst[0]


def visitation_distribution(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    """Per-step state marginals ``d[h, s] = P(s_h = s)``; average over h for d^pi."""
    if isinstance(policy, FirstStepMixture):
        return sum(w * visitation_distribution(mdp, m) for w, m in zip(policy.weights, policy.members))
    if not policy.markovian:
        raise TypeError("visitation needs a Markovian policy or a first-step mixture")
    policy.check_dims(mdp)
    d = np.zeros((mdp.horizon, mdp.num_states))
    d[0] = mdp.initial_dist
    for h, _, P_pi in _policy_chain(mdp, policy):
        if P_pi is not None:
            d[h + 1] = P_pi.T @ d[h]
    return d


# -- serialization ----------------------------------------------------------------


def mdp_to_json(mdp: TabularMdp) -> dict:
    """JSON-ready dict; sparse kernels are written as COO triples under ``P_sparse``."""
    out = {
        "S": mdp.num_states,
        "A": mdp.num_actions,
        "H": mdp.horizon,
        "rho": mdp.initial_dist.tolist(),
        "homogeneous": mdp.homogeneous,
        "R": mdp.rewards.tolist(),
        "R_max": mdp.return_bound,
    }
    n = 1 if mdp.homogeneous else mdp.horizon - 1
    kernels = [mdp.step_matrix(h) for h in range(n)] if mdp.horizon > 1 else []
    if mdp.horizon == 1:
        kernels = mdp._kernels
    S, A = mdp.num_states, mdp.num_actions
    if mdp.is_sparse:
        rows, cols, vals = [], [], []
        for h, k in enumerate(kernels):
            coo = k.tocoo()
            rows.extend((coo.row + h * S * A).tolist())
            cols.extend(coo.col.tolist())
            vals.extend(coo.data.tolist())
        out["P_sparse"] = {"rows": rows, "cols": cols, "vals": vals}
    else:
        dense = np.stack([np.asarray(k).reshape(S, A, S) for k in kernels])
        out["P"] = (dense[0] if mdp.homogeneous else dense).tolist()
    return out


def mdp_from_json(obj: dict) -> TabularMdp:
    S, A, H = int(obj["S"]), int(obj["A"]), int(obj["H"])
    if "P_sparse" in obj:
        coo = obj["P_sparse"]
        rows = np.asarray(coo["rows"], dtype=np.int64)
        n = 1 if obj["homogeneous"] else H - 1
        full = sp.csr_array(
            (np.asarray(coo["vals"], float), (rows, np.asarray(coo["cols"], np.int64))),
            shape=(n * S * A, S),
        )
        kernels = [full[h * S * A:(h + 1) * S * A] for h in range(n)]
        transitions = kernels[0] if obj["homogeneous"] else kernels
    else:
        transitions = np.asarray(obj["P"], dtype=float)
    return TabularMdp(obj["rho"], transitions, obj["R"], H, obj.get("R_max"))


def policy_to_json(policy: Policy) -> dict:
    if isinstance(policy, DetTabular):
        return {"kind": "det", "table": policy.table.tolist(), "A": policy.num_actions}
    if isinstance(policy, StochTabular):
        return {"kind": "stoch", "probs": policy.probs.tolist()}
    if isinstance(policy, EachStepMixture):
        return {
            "kind": "each_step",
            "weights": policy.weights.tolist(),
            "class": [policy_to_json(m) for m in policy.policy_class],
        }
    if isinstance(policy, FirstStepMixture):
        return {
            "kind": "first_step",
            "weights": policy.weights.tolist(),
            "members": [policy_to_json(m) for m in policy.members],
        }
    if hasattr(policy, "to_stoch"):
        return policy_to_json(policy.to_stoch())
    raise TypeError(f"cannot serialize {type(policy).__name__}")


def policy_from_json(obj: dict) -> Policy:
    from .learners import PolicyClass

    kind = obj["kind"]
    if kind == "det":
        return DetTabular(obj["table"], obj["A"])
    if kind == "stoch":
        return StochTabular(obj["probs"])
    if kind == "each_step":
        return EachStepMixture(obj["weights"], PolicyClass([policy_from_json(m) for m in obj["class"]]))
    if kind == "first_step":
        return FirstStepMixture(obj["weights"], [policy_from_json(m) for m in obj["members"]])
    raise InputError(f"unknown policy kind {kind!r}")
