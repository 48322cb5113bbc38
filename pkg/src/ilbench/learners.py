"""Online learners over a finite deterministic policy class.

Two learners act on an explicit :class:`PolicyClass`: exponential weights
(log loss) and a version space (0-1 loss).  A third, the memorizing learner,
never enumerates the class; it plays the expert action on annotated states and
a uniform action elsewhere, which is what a version-space learner over the
full class of deterministic tables amounts to.
"""

from __future__ import annotations

import itertools
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, EmptyModelError, EnumerationTooLarge, InputError, RealizabilityError
from .mdp import DetTabular, EachStepMixture, FirstStepMixture, Policy, StochTabular

COMPLETION_LIMIT = 4096


class PolicyClass:
    """Ordered finite set of distinct deterministic tabular policies."""

    def __init__(self, members: Sequence[DetTabular]):
        members = list(members)
        if not members:
            raise ConfigurationError("a policy class needs at least one member")
        shape = members[0].table.shape
        A = members[0].num_actions
        for m in members:
            if not isinstance(m, DetTabular):
                raise ConfigurationError("class members must be deterministic tables")
            if m.table.shape != shape or m.num_actions != A:
                raise ConfigurationError("class members disagree on table shape")
        if len(set(members)) != len(members):
            raise ConfigurationError("class members must be pairwise distinct")
        self.members = members
        self.num_actions = A
        self.num_states = shape[-1]
        self.stationary = len(shape) == 1
        self.horizon = None if self.stationary else shape[0]
        self.tables = np.stack([m.table for m in members])
        self.tables.setflags(write=False)

    def __len__(self) -> int:
        return len(self.members)

    def __getitem__(self, i: int) -> DetTabular:
        return self.members[i]

    def __iter__(self):
        return iter(self.members)

    def index(self, policy: DetTabular) -> int:
        return self.members.index(policy)

    def step_tables(self, h: int) -> np.ndarray:
        """``(B, S)`` actions of every member at step ``h``."""
        return self.tables if self.stationary else self.tables[:, h]

    def actions_at(self, h: int, s: int) -> np.ndarray:
        return self.step_tables(h)[:, s]

    def consistent_mask(self, pairs: Iterable[tuple[int, int, int]]) -> np.ndarray:
        """Members agreeing with every ``(step, state, action)`` triple."""
        mask = np.ones(len(self), dtype=bool)
        for h, s, a in pairs:
            mask &= self.actions_at(h, s) == a
        return mask

    def restrict(self, pairs: Iterable[tuple[int, int, int]]) -> "PolicyClass":
        """The sub-class consistent with the pairs; raises if nothing survives."""
        mask = self.consistent_mask(pairs)
        if not mask.any():
            raise RealizabilityError("no class member is consistent with the demonstrations")
        return PolicyClass([m for m, keep in zip(self.members, mask) if keep])

    def completion(self, horizon: int, weights=None) -> tuple["PolicyClass", np.ndarray]:
        """Each-step completion: every way of picking one member per step.

        Returns the completed class together with the product weights
        ``prod_h weights[i_h]`` (members with equal tables are merged).
        """
        B = len(self)
        if B ** horizon > COMPLETION_LIMIT:
            raise EnumerationTooLarge(f"completion would have {B}**{horizon} members")
        weights = np.full(B, 1.0 / B) if weights is None else np.asarray(weights, float)
        merged: dict[bytes, tuple[np.ndarray, float]] = {}
        for combo in itertools.product(range(B), repeat=horizon):
            table = np.stack([self.step_tables(h)[i] for h, i in enumerate(combo)])
            w = float(np.prod(weights[list(combo)]))
            key = table.tobytes()
            if key in merged:
                merged[key] = (table, merged[key][1] + w)
            else:
                merged[key] = (table, w)
        tables = [t for t, _ in merged.values()]
        cls = PolicyClass([DetTabular(t, self.num_actions) for t in tables])
        return cls, np.array([w for _, w in merged.values()])


def all_deterministic_policies(num_states: int, num_actions: int) -> PolicyClass:
    """Every stationary deterministic table; only sensible for tiny S and A."""
    if num_actions ** num_states > COMPLETION_LIMIT:
        raise EnumerationTooLarge("class of all tables is too large to enumerate")
    combos = itertools.product(range(num_actions), repeat=num_states)
    return PolicyClass([DetTabular(np.array(c), num_actions) for c in combos])


# -- losses -----------------------------------------------------------------------


def statewise_log_losses(policy_class: PolicyClass, h: int, s: int, action: int) -> np.ndarray:
    """``log 1/pi(a|s)`` for each deterministic member: 0 or +inf."""
    return np.where(policy_class.actions_at(h, s) == action, 0.0, np.inf)


def trajectory_log_losses(policy_class: PolicyClass, states, actions) -> np.ndarray:
    """``log 1/pi(a_{1:H} || s_{1:H})`` for each member: 0 if it matches every step."""
    agree = np.ones(len(policy_class), dtype=bool)
    for h, (s, a) in enumerate(zip(states, actions)):
        agree &= policy_class.actions_at(h, s) == a
    return np.where(agree, 0.0, np.inf)


def _log_normalizer(logits: np.ndarray) -> float:
    """``log sum exp(logits)`` shifted by the max; ``-inf`` entries contribute nothing.

    Inlined rather than calling scipy's version, whose per-call overhead
    dominates the small vectors updated once per round here.
    """
    top = logits.max()
    if top == -np.inf:
        return top
    return float(top + np.log(np.exp(logits - top).sum()))


def mixture_log_loss(weights: np.ndarray, member_losses: np.ndarray) -> float:
    """Log loss of the mixture: ``-log sum_i u_i exp(-loss_i)``."""
    with np.errstate(divide="ignore"):
        return -_log_normalizer(np.log(weights) - member_losses)


# -- exponential weights --------------------------------------------------------------


class ExpWeights:
    """Exponential weights ``u_i ~ exp(-eta * L_i)`` over ``num_members`` experts."""

    def __init__(self, num_members: int, eta: float = 1.0):
        if eta <= 0:
            raise ConfigurationError("eta must be positive")
        self.eta = float(eta)
        self.cumulative_losses = np.zeros(int(num_members))

    @property
    def weights(self) -> np.ndarray:
        logits = -self.eta * self.cumulative_losses
        top = logits.max()
        if top == -np.inf:
            raise EmptyModelError("every member has infinite cumulative loss")
        u = np.exp(logits - top)  # infinite losses map to exactly 0
        return u / u.sum()

    def update(self, losses) -> None:
        losses = np.asarray(losses, dtype=float)
        if losses.shape != self.cumulative_losses.shape:
            raise InputError("one loss per member is required")
        if not (losses >= 0).all():
            if np.isnan(losses).any():
                raise InputError("loss vector contains NaN")
            raise InputError("losses must be non-negative")
        self.cumulative_losses = self.cumulative_losses + losses

    def mixture_loss(self, losses) -> float:
        return mixture_log_loss(self.weights, np.asarray(losses, dtype=float))


class VersionSpace:
    """Members consistent with every constraint seen so far."""

    def __init__(self, policy_class: PolicyClass):
        self.policy_class = policy_class
        self.alive_mask = np.ones(len(policy_class), dtype=bool)

    def update(self, state: int, expert_action: int, step: int = 0) -> None:
        if not 0 <= state < self.policy_class.num_states:
            raise ConfigurationError(f"state {state} out of range")
        mask = self.alive_mask & (self.policy_class.actions_at(step, state) == expert_action)
        if not mask.any():
            raise RealizabilityError("version space became empty")
        self.alive_mask = mask

    def update_trajectory(self, states, actions) -> None:
        mask = self.alive_mask & np.isfinite(trajectory_log_losses(self.policy_class, states, actions))
        if not mask.any():
            raise RealizabilityError("version space became empty")
        self.alive_mask = mask

    @property
    def weights(self) -> np.ndarray:
        return self.alive_mask / self.alive_mask.sum()


# -- memorization --------------------------------------------------------------------


def memorizing_policy(annotated: dict, num_actions: int, num_states: int) -> StochTabular:
    """Delta on the annotated action, uniform over actions everywhere else."""
    probs = np.full((num_states, num_actions), 1.0 / num_actions)
    for s, a in annotated.items():
        probs[s] = 0.0
        probs[s, a] = 1.0
    return StochTabular(probs)


class MemorizingPolicy(Policy):
    """Frozen view of a :class:`MemorizingLearner` at one point of its history.

    The learner only ever fills in keys that were empty, so a view needs just
    the learner's clock at snapshot time: a key counts as annotated iff it was
    first annotated before ``cutoff``.
    """

    def __init__(self, first_seen: np.ndarray, actions: np.ndarray, cutoff: int,
                 num_states: int, num_actions: int, horizon: int | None,
                 num_annotated: int | None = None):
        self._first_seen = first_seen
        self._actions = actions
        self.cutoff = cutoff
        if num_annotated is None:
            num_annotated = int((first_seen < cutoff).sum())
        self.num_annotated = num_annotated
        self.num_states = num_states
        self.num_actions = num_actions
        self.stationary = horizon is None
        self.horizon = horizon

    def _key(self, h: int, s: int) -> int:
        return s if self.stationary else h * self.num_states + s

    def annotated_action(self, h: int, s: int) -> int | None:
        k = self._key(h, s)
        if self._first_seen[k] < self.cutoff:
            return int(self._actions[k])
        return None

    def annotated_mask(self, h: int = 0) -> np.ndarray:
        first = self._first_seen if self.stationary else self._first_seen.reshape(-1, self.num_states)[h]
        return first < self.cutoff

    def annotated(self, h: int = 0) -> dict[int, int]:
        mask = self.annotated_mask(h)
        acts = self._actions if self.stationary else self._actions.reshape(-1, self.num_states)[h]
        return {int(s): int(acts[s]) for s in np.flatnonzero(mask)}

    def action_probs(self, h):
        return memorizing_policy(self.annotated(h), self.num_actions, self.num_states).probs

    def sample_action(self, h, s, rng):
        a = self.annotated_action(h, s)
        if a is not None:
            return a
        return int(rng.integers(self.num_actions))

    def to_stoch(self) -> StochTabular:
        if self.stationary:
            return StochTabular(self.action_probs(0))
        return StochTabular(np.stack([self.action_probs(h) for h in range(self.horizon)]))


class MemorizingLearner:
    """Annotated-state map; keys are states, or ``(step, state)`` when step-indexed."""

    kind = "memorizing"

    def __init__(self, num_states: int, num_actions: int, horizon: int | None = None):
        self.num_states = num_states
        self.num_actions = num_actions
        self.horizon = horizon
        size = num_states if horizon is None else horizon * num_states
        self._first_seen = np.full(size, np.iinfo(np.int64).max, dtype=np.int64)
        self._actions = np.zeros(size, dtype=np.int64)
        self._known: list[int | None] = [None] * size  # fast scalar mirror of the arrays
        self.clock = 0
        self.num_annotated = 0
        self._snapshot = None

    def observe(self, h: int, s: int, a: int) -> None:
        k = s if self.horizon is None else h * self.num_states + s
        known = self._known[k]
        if known is None:
            self._known[k] = a
            self._first_seen[k] = self.clock
            self._actions[k] = a
            self.num_annotated += 1
        elif known != a:
            raise RealizabilityError(f"conflicting annotations for state {s}")
        self.clock += 1

    def observe_trajectory(self, states, actions) -> None:
        for h, (s, a) in enumerate(zip(states, actions)):
            self.observe(h, s, a)

    def seed_offline(self, pairs) -> None:
        for h, s, a in pairs:
            self.observe(h, s, a)

    def propose(self) -> MemorizingPolicy:
        snap = self._snapshot
        if snap is None or snap.num_annotated != self.num_annotated:
            snap = MemorizingPolicy(self._first_seen, self._actions, self.clock,
                                    self.num_states, self.num_actions, self.horizon,
                                    self.num_annotated)
            self._snapshot = snap
        return snap

    propose_first_step = propose

    def annotated_states(self) -> np.ndarray:
        seen = self._first_seen < self.clock
        if self.horizon is not None:
            seen = seen.reshape(self.horizon, self.num_states).any(axis=0)
        return np.flatnonzero(seen)


class ExpWeightsLearner:
    """Exponential weights over a policy class with the log loss of deterministic members."""

    kind = "exp_weights"

    def __init__(self, policy_class: PolicyClass, eta: float = 1.0):
        self.policy_class = policy_class
        self.eta = eta
        self.ew = ExpWeights(len(policy_class), eta)
        self.mixture_losses: list[float] = []

    def _update(self, losses: np.ndarray) -> None:
        self.mixture_losses.append(self.ew.mixture_loss(losses))
        self.ew.update(losses)
        _ = self.ew.weights  # raises EmptyModelError if realizability broke

    def observe(self, h, s, a):
        self._update(statewise_log_losses(self.policy_class, h, s, a))

    def observe_trajectory(self, states, actions):
        self._update(trajectory_log_losses(self.policy_class, states, actions))

    def seed_offline(self, pairs) -> None:
        self.policy_class = self.policy_class.restrict(pairs)
        self.ew = ExpWeights(len(self.policy_class), self.eta)

    @property
    def weights(self) -> np.ndarray:
        return self.ew.weights

    def propose(self) -> EachStepMixture:
        return EachStepMixture(self.weights, self.policy_class)

    def propose_first_step(self) -> FirstStepMixture:
        return FirstStepMixture(self.weights, self.policy_class.members)

    def annotated_states(self) -> np.ndarray:
        return np.array([], dtype=np.int64)


class VersionSpaceLearner(ExpWeightsLearner):
    """Uniform weights over the members consistent with all annotations."""

    kind = "version_space"

    def __init__(self, policy_class: PolicyClass, eta: float = 1.0):
        self.policy_class = policy_class
        self.eta = eta
        self.vs = VersionSpace(policy_class)
        self.mixture_losses = []

    def _update(self, losses):
        self.mixture_losses.append(mixture_log_loss(self.vs.weights, losses))
        mask = self.vs.alive_mask & np.isfinite(losses)
        if not mask.any():
            raise RealizabilityError("version space became empty")
        self.vs.alive_mask = mask

    def seed_offline(self, pairs) -> None:
        self.policy_class = self.policy_class.restrict(pairs)
        self.vs = VersionSpace(self.policy_class)

    @property
    def weights(self):
        return self.vs.weights


def make_learner(kind: str, *, policy_class: PolicyClass | None = None, eta: float = 1.0,
                 num_states: int | None = None, num_actions: int | None = None,
                 horizon: int | None = None):
    """Build a learner by config name: exp_weights, version_space or memorizing."""
    if kind == "memorizing":
        if num_states is None or num_actions is None:
            raise ConfigurationError("memorizing learner needs num_states and num_actions")
        return MemorizingLearner(num_states, num_actions, horizon)
    if kind in ("exp_weights", "version_space"):
        if policy_class is None:
            raise ConfigurationError(f"{kind} learner needs an explicit policy class")
        cls = ExpWeightsLearner if kind == "exp_weights" else VersionSpaceLearner
        return cls(policy_class, eta)
    raise ConfigurationError(f"unknown learner {kind!r}")
