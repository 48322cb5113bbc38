"""The cliff MDP separating offline, interactive and hybrid imitation.

State layout: ids ``[0, N0)`` form the ideal block E, ``[N0, N0 + N1)`` the
recoverable block E', then the absorbing failure state b and the trap b'.

Every transition out of E, E' or b' either lands on one of the four blocks'
uniform distributions or on a fixed singleton, and the reward only depends on
the block and on whether the expert action was played.  For a stationary
policy the quantities that matter are therefore four numbers: the mean
probability of the expert action over E, over E', and at b and b'.  The
:class:`CliffMdp` methods exploit this to evaluate and sample in ``O(H)``
time instead of touching the ~10^6-entry kernel, which is still available
(built on first use) for generic code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .learners import MemorizingPolicy
from .mdp import DetTabular, Policy, StochTabular, TabularMdp, Trajectory

E, E_PRIME, B, B_PRIME = range(4)
REWARD_VARIANTS = ("R1", "R_E_only")


@dataclass(frozen=True)
class CliffConfig:
    N0: int
    N1: int
    H: int
    A: int
    beta: float
    reward_variant: str = "R_E_only"
    theoretical_mode: bool = False
    expert_seed: int | None = None

    @classmethod
    def figure2(cls) -> "CliffConfig":
        """Simulation variant: beta is taken as given, not as 8/(H - 8)."""
        return cls(N0=200, N1=1000, H=100, A=1001, beta=0.08, reward_variant="R_E_only")

    @classmethod
    def theorem(cls, H: int = 50, N0: int = 3, N1: int = 500, A: int | None = None,
                reward_variant: str = "R1") -> "CliffConfig":
        """Smallest-by-default instance meeting every theoretical constraint."""
        return cls(N0=N0, N1=N1, H=H, A=10 * H if A is None else A, beta=8 / (H - 8),
                   reward_variant=reward_variant, theoretical_mode=True)

    @property
    def num_states(self) -> int:
        return self.N0 + self.N1 + 2

    @property
    def b(self) -> int:
        return self.N0 + self.N1

    @property
    def b_prime(self) -> int:
        return self.N0 + self.N1 + 1

    def violations(self) -> list[str]:
        bad = []
        if self.N0 < 1 or self.N1 < 1:
            bad.append("N0 and N1 must be positive")
        if self.H < 1:
            bad.append("H must be positive")
        if self.A < 2:
            bad.append("A must be at least 2")
        if not 0 < self.beta < 1:
            bad.append("beta must lie in (0, 1)")
        if self.reward_variant not in REWARD_VARIANTS:
            bad.append(f"reward_variant must be one of {REWARD_VARIANTS}")
        if self.theoretical_mode:
            H = self.H
            if H < 50:
                bad.append("H >= 50")
            if H < 1.25 * math.log(10 * self.N0):
                bad.append("H >= (5/4) ln(10 N0)")
            if self.A < 10 * H:
                bad.append("A >= 10 H")
            if H > 8 and abs(self.beta - 8 / (H - 8)) > 1e-12:
                bad.append("beta = 8 / (H - 8)")
            if self.N1 < 500:
                bad.append("N1 >= 500")
            if self.N1 < 160 * self.N0:
                bad.append("N1 >= 160 N0")
        return bad

    def validate(self) -> None:
        bad = self.violations()
        if bad:
            raise ConfigurationError("invalid cliff configuration: " + "; ".join(bad))


def block_of(config: CliffConfig) -> np.ndarray:
    """Block label (E, E_PRIME, B, B_PRIME) of every state id."""
    out = np.empty(config.num_states, dtype=np.int64)
    out[:config.N0] = E
    out[config.N0:config.b] = E_PRIME
    out[config.b] = B
    out[config.b_prime] = B_PRIME
    return out


def expert_actions(config: CliffConfig) -> np.ndarray:
    if config.expert_seed is None:
        return np.zeros(config.num_states, dtype=np.int64)
    return np.random.default_rng(config.expert_seed).integers(config.A, size=config.num_states)


class CliffMdp(TabularMdp):
    """Homogeneous cliff MDP with block-level fast paths."""

    def __init__(self, config: CliffConfig):
        config.validate()
        self.config = config
        c = config
        self.num_states, self.num_actions, self.horizon = c.num_states, c.A, c.H
        self.homogeneous = True
        self.blocks = block_of(c)
        self.expert_actions = expert_actions(c)
        rho = np.zeros(c.num_states)
        rho[:c.N0] = 1.0 / ((1 + c.beta) * c.N0)
        rho[c.N0:c.b] = c.beta / ((1 + c.beta) * c.N1)
        self.initial_dist = rho
        self._rho_cdf = np.cumsum(rho)
        # reward when playing the expert action / any other action, per block
        r1 = c.reward_variant == "R1"
        self.block_reward_expert = np.array([1.0, 1.0 if r1 else 0.0, 0.0, 1.0 if r1 else 0.0])
        self.block_reward_other = np.array([1.0, 1.0 if r1 else 0.0, 0.0, 0.0])
        self.block_start = np.array([1 / (1 + c.beta), c.beta / (1 + c.beta), 0.0, 0.0])
        self.return_bound = float(c.H)
        self._rewards = None
        self._kernel = None
        self._cache_key = None
        self._cache_count = -1
        self._cache = None

    # -- lazily materialized tables ---------------------------------------------

    @property
    def rewards(self) -> np.ndarray:
        if self._rewards is None:
            R = np.repeat(self.block_reward_other[self.blocks][:, None], self.num_actions, axis=1)
            R[np.arange(self.num_states), self.expert_actions] = self.block_reward_expert[self.blocks]
            R.setflags(write=False)
            self._rewards = R
        return self._rewards

    @property
    def _kernels(self):
        if self._kernel is None:
            self._kernel = self._build_kernel()
            self._validate_kernel(self._kernel)
        return [self._kernel]

    def _build_kernel(self) -> sp.csr_array:
        c = self.config
        S, A = c.num_states, c.A
        e_ids = np.arange(c.N0)
        ep_ids = np.arange(c.N0, c.b)
        rows, cols, vals = [], [], []
        # non-expert actions: E -> b, E' -> b', b -> b, b' -> b'
        sink = np.where(self.blocks == E, c.b, np.where(self.blocks == E_PRIME, c.b_prime,
                                                         np.where(self.blocks == B, c.b, c.b_prime)))
        all_rows = np.arange(S * A)
        s_of_row = all_rows // A
        other = (all_rows % A) != self.expert_actions[s_of_row]
        other |= self.blocks[s_of_row] == B
        rows.append(all_rows[other])
        cols.append(sink[s_of_row[other]])
        vals.append(np.ones(int(other.sum())))

        def spread(states, targets, prob):
            r = np.repeat(states * A + self.expert_actions[states], len(targets))
            rows.append(r)
            cols.append(np.tile(targets, len(states)))
            vals.append(np.full(len(r), prob))

        spread(e_ids, e_ids, (1 - c.beta) / c.N0)
        spread(e_ids, ep_ids, c.beta / c.N1)
        spread(ep_ids, e_ids, 1.0 / c.N0)
        spread(np.array([c.b_prime]), e_ids, 1.0 / c.N0)
        k = sp.csr_array(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(S * A, S))
        k.sum_duplicates()
        return k

    def max_trajectory_reward(self) -> float:
        return float(self.horizon)

    # -- block-level reductions -------------------------------------------------------

    def expert_prob(self, policy: Policy) -> np.ndarray:
        """Probability that a stationary Markovian policy plays the expert action, per state."""
        if not policy.stationary or not policy.markovian:
            raise ConfigurationError("block reduction needs a stationary Markovian policy")
        policy.check_dims(self)
        if isinstance(policy, MemorizingPolicy):
            mask = policy.annotated_mask()
            agree = policy._actions == self.expert_actions
            return np.where(mask, agree.astype(float), 1.0 / self.num_actions)
        if isinstance(policy, DetTabular):
            return (policy.table == self.expert_actions).astype(float)
        if isinstance(policy, StochTabular):
            return policy.probs[np.arange(self.num_states), self.expert_actions]
        return policy.action_probs(0)[np.arange(self.num_states), self.expert_actions]

    def block_probs(self, p_expert: np.ndarray) -> np.ndarray:
        """Mean expert-action probability over E, E', b and b'."""
        c = self.config
        return np.array([p_expert[:c.N0].mean(), p_expert[c.N0:c.b].mean(),
                         p_expert[c.b], p_expert[c.b_prime]])

    def block_kernel(self, q: np.ndarray) -> np.ndarray:
        """4x4 transition matrix between blocks given block expert probabilities ``q``."""
        beta = self.config.beta
        T = np.zeros((4, 4))
        T[E] = [(1 - beta) * q[E], beta * q[E], 1 - q[E], 0.0]
        T[E_PRIME] = [q[E_PRIME], 0.0, 0.0, 1 - q[E_PRIME]]
        T[B, B] = 1.0
        T[B_PRIME] = [q[B_PRIME], 0.0, 0.0, 1 - q[B_PRIME]]
        return T

    def block_rewards(self, q: np.ndarray) -> np.ndarray:
        return q * self.block_reward_expert + (1 - q) * self.block_reward_other

    def _block_model(self, policy: Policy):
        """(block marginals per step, block probabilities) with a one-entry cache."""
        memo = policy.__class__ is MemorizingPolicy
        if memo and policy._first_seen is self._cache_key and policy.num_annotated == self._cache_count:
            return self._cache
        q = self.block_probs(self.expert_prob(policy))
        T = self.block_kernel(q)
        # forward pass over the four blocks, written out because it runs once per new annotation
        beta = self.config.beta
        qe, qp, qbp = float(q[E]), float(q[E_PRIME]), float(q[B_PRIME])
        x = self.block_start.tolist()
        rows, cdf = [], []
        for _ in range(self.horizon):
            rows.append(x)
            cdf.append([x[0], x[0] + x[1], x[0] + x[1] + x[2], x[0] + x[1] + x[2] + x[3]])
            e, ep, b, bp = x
            x = [(1 - beta) * qe * e + qp * ep + qbp * bp, beta * qe * e,
                 b + (1 - qe) * e, (1 - qp) * ep + (1 - qbp) * bp]
        model = (np.array(rows), q, T, cdf)
        if memo:
            # holding the array itself (not its id) rules out stale hits after reuse of memory
            self._cache_key, self._cache_count, self._cache = policy._first_seen, policy.num_annotated, model
        return model

    def structured_return(self, policy: Policy) -> float:
        """Exact expected return of a stationary policy via the block reduction."""
        d, q = self._block_model(policy)[:2]
        return float((d @ self.block_rewards(q)).sum())

    def block_visitation(self, policy: Policy) -> np.ndarray:
        """``(H, 4)`` probability of being in each block at each step."""
        return self._block_model(policy)[0].copy()

    # -- sampling ---------------------------------------------------------------------------

    def _uniform_in_block(self, block: int, rng: np.random.Generator) -> int:
        c = self.config
        if block == E:
            return int(rng.integers(c.N0))
        if block == E_PRIME:
            return c.N0 + int(rng.integers(c.N1))
        return c.b if block == B else c.b_prime

    def sample_state(self, policy: Policy, h: int, rng: np.random.Generator) -> int:
        """Draw ``s_h`` from the policy's step-``h`` state distribution.

        Given the block, the state is uniform inside it, so the block
        marginals determine the law of ``s_h`` exactly.
        """
        if not (policy.stationary and policy.markovian):
            return super().sample_state(policy, h, rng)
        cdf = self._block_model(policy)[3][h]
        u = rng.random() * cdf[3]
        block = 0
        while block < 3 and u >= cdf[block]:
            block += 1
        return self._uniform_in_block(block, rng)

    def _next_state(self, s: int, played_expert: bool, rng: np.random.Generator) -> int:
        c = self.config
        block = self.blocks[s]
        if block == B:
            return c.b
        if not played_expert:
            return c.b if block == E else c.b_prime
        if block == E and rng.random() < c.beta:
            return self._uniform_in_block(E_PRIME, rng)
        return self._uniform_in_block(E, rng)

    def rollout(self, policy: Policy, rng: np.random.Generator, steps: int | None = None) -> Trajectory:
        n = self.horizon if steps is None else int(steps)
        if not policy.markovian or not 0 < n <= self.horizon:
            return super().rollout(policy, rng, steps)
        policy.check_dims(self)
        c = self.config
        u = rng.random()
        s = int(np.searchsorted(self._rho_cdf, u * self._rho_cdf[-1], side="right"))
        s = min(s, c.b - 1)
        states, actions, rewards = [], [], []
        for h in range(n):
            a = policy.sample_action(h, s, rng)
            hit = a == self.expert_actions[s]
            block = self.blocks[s]
            states.append(s)
            actions.append(a)
            rewards.append(float(self.block_reward_expert[block] if hit else self.block_reward_other[block]))
            if h + 1 < n:
                s = self._next_state(s, hit, rng)
        return Trajectory(tuple(states), tuple(actions), tuple(rewards))


def build_cliff(config: CliffConfig) -> tuple[CliffMdp, DetTabular]:
    """The cliff MDP for ``config`` and its deterministic expert."""
    mdp = CliffMdp(config)
    return mdp, DetTabular(mdp.expert_actions, config.A)


def coverage_stats(annotated_states, config: CliffConfig) -> tuple[float, float, bool]:
    """Fractions of E and E' that are annotated, and whether b' is."""
    ids = np.unique(np.asarray(list(annotated_states), dtype=np.int64))
    n_e = int(np.count_nonzero(ids < config.N0))
    n_ep = int(np.count_nonzero((ids >= config.N0) & (ids < config.b)))
    return n_e / config.N0, n_ep / config.N1, bool(np.any(ids == config.b_prime))


def theorem_bounds(config: CliffConfig) -> dict:
    """Closed-form annotation thresholds for the theoretical instance."""
    if not config.theoretical_mode:
        raise ConfigurationError("theorem bounds are only defined in theoretical mode")
    config.validate()
    c = config
    ws_off = math.ceil(c.N0 / ((1 - c.beta) * c.H) * math.log(10 * c.N0))
    return {
        "bc_threshold": c.N1 / 160,
        "stagger_threshold": c.H * c.N0 / 12,
        "ws_offline": ws_off,
        "ws_interactive": 3,
    }


def full_coverage_offline_count(N0: int, H: int, beta: float, delta: float = 0.1) -> int:
    """Number of expert trajectories after which E is fully covered w.p. about ``1 - delta``."""
    return math.ceil(N0 / ((1 - beta) * H) * math.log(N0 / delta))


def with_variant(config: CliffConfig, reward_variant: str) -> CliffConfig:
    return replace(config, reward_variant=reward_variant)
