"""Randomized property checks of the divergence lemmas and learning bounds.

Every check draws its instances from a seeded generator, evaluates both sides
of an inequality or identity exactly, and reports the number of violations.
``run_suite`` collects them into the table printed by ``ilbench verify``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .algorithms import run_stagger, run_tragger
from .cliff import CliffConfig, build_cliff, full_coverage_offline_count, with_variant
from .divergence import (
    ClassTrajectoryTables,
    decoupled_hellinger,
    hellinger_sq,
    statewise_hellinger_error,
    symmetric_F,
    trajectory_law,
    traj_linf_semimetric,
)
from .learners import ExpWeights, ExpWeightsLearner, PolicyClass, mixture_log_loss
from .mdp import (
    DetTabular,
    FirstStepMixture,
    StochTabular,
    TabularMdp,
    exact_return,
    recoverability_mu,
    value_functions,
    visitation_distribution,
)
from .oracle import AnnotationLedger, ExpertOracle, generate_offline
from .rng import child_rng

TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    trials: int
    violations: int
    seconds: float
    detail: str = ""
    min_pass_rate: float = 1.0

    @property
    def pass_rate(self) -> float:
        return 1.0 - self.violations / self.trials if self.trials else 1.0

    @property
    def passed(self) -> bool:
        return self.pass_rate >= self.min_pass_rate


# -- random instances --------------------------------------------------------------------


def random_mdp(rng: np.random.Generator, S: int, A: int, H: int, homogeneous: bool | None = None,
               sparsity: float = 0.3) -> TabularMdp:
    """Random MDP whose transition rows have some exact zeros so enumeration hits pruned paths."""
    if homogeneous is None:
        homogeneous = H < 2 or bool(rng.random() < 0.5)
    shape = (S, A, S) if homogeneous else (max(H - 1, 1), S, A, S)
    P = rng.random(shape) * (rng.random(shape) > sparsity)
    P[..., 0] += P.sum(axis=-1) == 0
    P /= P.sum(axis=-1, keepdims=True)
    rho = rng.random(S) * (rng.random(S) > sparsity)
    rho[0] += rho.sum() == 0
    rho /= rho.sum()
    R = rng.random((S, A)) * (rng.random((S, A)) > sparsity)
    return TabularMdp(rho, P, R, H, return_bound=float(H))


def random_det(rng: np.random.Generator, S: int, A: int, H: int | None = None) -> DetTabular:
    shape = (S,) if H is None else (H, S)
    return DetTabular(rng.integers(A, size=shape), A)


def random_stoch(rng: np.random.Generator, S: int, A: int, H: int | None = None,
                 peaked: DetTabular | None = None) -> StochTabular:
    """Random stochastic table; with ``peaked`` the mass leans toward that policy's actions."""
    shape = (S, A) if H is None else (H, S, A)
    probs = rng.dirichlet(np.full(A, 0.5), size=shape[:-1])
    if peaked is not None:
        lean = rng.random(shape[:-1] + (1,))
        delta = np.zeros(shape)
        table = peaked.table
        if H is None and not peaked.stationary:
            table = table[0]
        elif H is not None and peaked.stationary:
            table = np.broadcast_to(table, (H, S))
        np.put_along_axis(delta, np.asarray(table)[..., None], 1.0, axis=-1)
        probs = lean * delta + (1 - lean) * probs
    return StochTabular(probs)


def random_class(rng: np.random.Generator, expert: DetTabular, size: int, H: int | None = None) -> PolicyClass:
    """``size`` distinct deterministic tables including the expert, in random order."""
    S, A = expert.num_states, expert.num_actions
    shape = expert.table.shape
    cap = A ** int(np.prod(shape))
    size = min(size, cap)
    seen = {expert.table.tobytes()}
    members = [expert]
    while len(members) < size:
        t = rng.integers(A, size=shape)
        # perturb a few entries of the expert so many members are near-experts
        if rng.random() < 0.5:
            t = expert.table.copy()
            flip = rng.random(shape) < 0.3
            t[flip] = rng.integers(A, size=int(flip.sum()))
        if t.tobytes() not in seen:
            seen.add(t.tobytes())
            members.append(DetTabular(t, A))
    order = rng.permutation(len(members))
    return PolicyClass([members[i] for i in order])


def _dims(rng: np.random.Generator, max_s: int = 4, max_a: int = 3, max_h: int = 4) -> tuple[int, int, int]:
    return int(rng.integers(1, max_s + 1)), int(rng.integers(2, max_a + 1)), int(rng.integers(1, max_h + 1))


def _timed(name: str, fn, *, min_pass_rate: float = 1.0) -> CheckResult:
    t0 = time.perf_counter()
    trials, violations, detail = fn()
    return CheckResult(name, trials, violations, time.perf_counter() - t0, detail, min_pass_rate)


# -- lemma checks ------------------------------------------------------------------------


def check_hellinger_sandwich(n: int = 10_000, seed: int = 0) -> CheckResult:
    """Half total variation <= squared Hellinger to a point mass <= total variation."""
    def body():
        rng = child_rng(seed, "sandwich")
        bad = 0
        for _ in range(n):
            k = int(rng.integers(1, 11))
            p = rng.dirichlet(np.full(k, rng.choice([0.2, 1.0, 5.0])))
            q = np.zeros(k)
            q[rng.integers(k)] = 1.0
            d = hellinger_sq(p, q)
            l1 = float(np.abs(p - q).sum())
            bad += not (0.5 * l1 <= d + TOL and d <= l1 + TOL)
        return n, bad, "alphabets 1-10"
    return _timed("hellinger_sandwich", body)


def check_ew_regret(n: int = 1000, seed: int = 0) -> CheckResult:
    """Exponential weights with eta = 1 on realizable log losses: regret <= log B."""
    def body():
        rng = child_rng(seed, "ew_regret")
        bad, worst = 0, -np.inf
        for _ in range(n):
            B = int(rng.integers(1, 17))
            N = int(rng.integers(1, 201))
            best = int(rng.integers(B))
            ew = ExpWeights(B, 1.0)
            # likelihood each member gave the realized outcome; the realizable member gives 1
            lik = rng.random((N, B)) ** rng.choice([0.5, 2.0, 8.0], size=(N, 1))
            lik[rng.random((N, B)) < 0.2] = 0.0
            lik[:, best] = 1.0
            with np.errstate(divide="ignore"):
                losses = -np.log(lik)
            learner_loss = 0.0
            for row in losses:
                learner_loss += ew.mixture_loss(row)
                ew.update(row)
            regret = learner_loss - float(ew.cumulative_losses.min())
            worst = max(worst, regret - math.log(B))
            bad += regret > math.log(B) + TOL
        return n, bad, f"max regret - log B = {worst:.3g}"
    return _timed("ew_regret", body)


def _expert_advantage_sum(mdp: TabularMdp, pi, expert: DetTabular) -> float:
    """``E^pi sum_h (V^E_h(s_h) - Q^E_h(s_h, a_h))`` by enumerating trajectories."""
    V, Q = value_functions(mdp, expert)
    law = trajectory_law(mdp, pi)
    gap = np.zeros_like(law.prob)
    for h in range(mdp.horizon):
        s = law.states[:, h][:, None]
        gap += V[h][s] - Q[h][s, law.actions[:, h][None, :]]
    return float((law.prob * gap).sum())


def check_performance_difference(n: int = 500, seed: int = 0) -> CheckResult:
    """Performance difference identity and the return gap bounded by R_max times rho."""
    def body():
        rng = child_rng(seed, "pdl")
        bad, worst = 0, 0.0
        for _ in range(n):
            S, A, H = _dims(rng)
            mdp = random_mdp(rng, S, A, H)
            stat = bool(rng.random() < 0.5)
            expert = random_det(rng, S, A, None if stat else H)
            pi = random_stoch(rng, S, A, None if rng.random() < 0.5 else H,
                              peaked=expert if rng.random() < 0.5 else None)
            gap = exact_return(mdp, expert) - exact_return(mdp, pi)
            pdl = _expert_advantage_sum(mdp, pi, expert)
            rho = traj_linf_semimetric(mdp, pi, expert)
            worst = max(worst, abs(gap - pdl))
            bad += abs(gap - pdl) > TOL or gap > mdp.return_bound * rho + TOL
        return n, bad, f"max |PDL residual| = {worst:.2g}"
    return _timed("performance_difference", body)


def check_statewise_bound(n: int = 1000, seed: int = 0) -> CheckResult:
    """Return gap of the uniform first-step mixture <= mu H Est^State_N / N."""
    def body():
        rng = child_rng(seed, "lemma_b1")
        bad = 0
        for _ in range(n):
            S, A, H = _dims(rng)
            mdp = random_mdp(rng, S, A, H)
            expert = random_det(rng, S, A, None if rng.random() < 0.5 else H)
            N = int(rng.integers(1, 9))
            seq = [random_stoch(rng, S, A, None if rng.random() < 0.5 else H,
                                peaked=expert if rng.random() < 0.7 else None) for _ in range(N)]
            out = FirstStepMixture.uniform(seq)
            mu = recoverability_mu(mdp, expert)
            est = statewise_hellinger_error(mdp, seq, expert)
            gap = exact_return(mdp, expert) - exact_return(mdp, out)
            bad += gap > mu * H * est / N + TOL
        return n, bad, "random stochastic sequences"
    return _timed("statewise_estimation_bound", body)


def check_decoupled_hellinger(n: int = 1000, seed: int = 0) -> CheckResult:
    """Half rho <= decoupled Hellinger, for Markovian policies and first-step mixtures."""
    def body():
        rng = child_rng(seed, "lemma_e2")
        bad = 0
        for i in range(n):
            S, A, H = _dims(rng)
            mdp = random_mdp(rng, S, A, H)
            expert = random_det(rng, S, A, None if rng.random() < 0.5 else H)
            if i % 2 == 0:
                pi = random_stoch(rng, S, A, None if rng.random() < 0.5 else H,
                                  peaked=expert if rng.random() < 0.5 else None)
            else:
                k = int(rng.integers(1, 5))
                members = [random_det(rng, S, A, H) if rng.random() < 0.5 else expert for _ in range(k)]
                pi = FirstStepMixture(rng.dirichlet(np.ones(k)), members)
            rho = traj_linf_semimetric(mdp, pi, expert)
            bad += 0.5 * rho > decoupled_hellinger(mdp, pi, expert) + TOL
        return n, bad, "alternating Markovian / first-step mixture"
    return _timed("decoupled_hellinger_bound", body)


def check_symmetric_evaluation(n: int = 1000, seed: int = 0) -> CheckResult:
    """Half (rho(nu) + rho(nu')) <= F(nu; nu') + F(nu'; nu) for deterministic nu, nu'."""
    def body():
        rng = child_rng(seed, "lemma_e4")
        bad = 0
        for _ in range(n):
            S, A, H = _dims(rng)
            mdp = random_mdp(rng, S, A, H)
            expert = random_det(rng, S, A, H)
            nu, nu_p = random_det(rng, S, A, H), random_det(rng, S, A, H)
            f1, f2 = symmetric_F(mdp, nu, nu_p, expert)
            lhs = 0.5 * (traj_linf_semimetric(mdp, nu, expert) + traj_linf_semimetric(mdp, nu_p, expert))
            bad += lhs > f1 + f2 + TOL
        return n, bad, "step-indexed deterministic pairs"
    return _timed("symmetric_evaluation", body)


def check_cliff_stationarity() -> CheckResult:
    """Expert visitation on both cliff presets equals the start distribution; R1 return equals H."""
    def body():
        bad, details = 0, []
        for cfg in (CliffConfig.figure2(), CliffConfig.theorem()):
            for variant in ("R1", "R_E_only"):
                mdp, expert = build_cliff(with_variant(cfg, variant))
                d = visitation_distribution(mdp, expert)
                err = float(np.abs(d - mdp.initial_dist[None, :]).max())
                bad += err > 1e-12
                details.append(f"{err:.1e}")
                if variant == "R1":
                    bad += abs(exact_return(mdp, expert) - cfg.H) > TOL
        return 6, bad, "max visitation error " + ", ".join(details)
    return _timed("cliff_stationarity", body)


# -- learning bounds ---------------------------------------------------------------------


def _bound_instance(rng: np.random.Generator):
    S, A = int(rng.integers(1, 5)), int(rng.integers(2, 4))
    H = int(rng.integers(2, 6))
    mdp = random_mdp(rng, S, A, H)
    expert = random_det(rng, S, A)
    cls = random_class(rng, expert, int(rng.integers(2, 33)))
    return mdp, expert, cls


def check_stagger_bound(n: int = 100, seed: int = 0, delta: float = 0.1) -> CheckResult:
    """STAGGER suboptimality <= mu H (log B + 2 log 1/delta) / N_int in most runs."""
    def body():
        rng = child_rng(seed, "stagger_bound")
        bad = 0
        for r in range(n):
            mdp, expert, cls = _bound_instance(rng)
            n_int = int(rng.integers(20, 201))
            oracle = ExpertOracle(expert, AnnotationLedger(mdp.horizon))
            out, _ = run_stagger(mdp, oracle, ExpWeightsLearner(cls), n_int, child_rng(seed, "stagger_run", r))
            mu = recoverability_mu(mdp, expert)
            bound = mu * mdp.horizon * (math.log(len(cls)) + 2 * math.log(1 / delta)) / n_int
            bad += exact_return(mdp, expert) - exact_return(mdp, out) > bound + TOL
        return n, bad, f"delta={delta}"
    return _timed("stagger_bound", body, min_pass_rate=0.85)


def check_tragger_bound(n: int = 100, seed: int = 0, delta: float = 0.1) -> CheckResult:
    """TRAGGER trajectory-wise estimation error <= log B + 2 log 1/delta in most runs."""
    def body():
        rng = child_rng(seed, "tragger_bound")
        bad, worst = 0, 0.0
        for r in range(n):
            S, A = int(rng.integers(1, 5)), int(rng.integers(2, 4))
            H = int(rng.integers(1, 5))
            mdp = random_mdp(rng, S, A, H)
            expert = random_det(rng, S, A, H)
            cls = random_class(rng, expert, int(rng.integers(2, 33)), H)
            tables = ClassTrajectoryTables(mdp, cls, expert)
            n_rounds = int(rng.integers(20, 201))
            oracle = ExpertOracle(expert, AnnotationLedger(H))
            _, records = run_tragger(mdp, oracle, ExpWeightsLearner(cls), n_rounds, child_rng(seed, "tragger_run", r))
            est = sum(tables.decoupled_hellinger(rec.policy.weights) for rec in records)
            bound = math.log(len(cls)) + 2 * math.log(1 / delta)
            worst = max(worst, est / bound)
            bad += est > bound + TOL
        return n, bad, f"max Est/bound = {worst:.3f}"
    return _timed("tragger_bound", body, min_pass_rate=0.85)


def check_offline_coverage(reps: int = 2000, seed: int = 0, N0: int = 50, H: int = 50,
                           delta: float = 0.1) -> CheckResult:
    """Offline expert data of the prescribed size covers every ideal state with prob >= 1 - delta."""
    def body():
        cfg = CliffConfig.theorem(H=H, N0=N0, N1=160 * N0)
        mdp, expert = build_cliff(cfg)
        n_off = full_coverage_offline_count(N0, H, cfg.beta, delta)
        rng = child_rng(seed, "offline_coverage")
        misses = 0
        for _ in range(reps):
            data = generate_offline(mdp, ExpertOracle(expert), n_off, rng)
            seen = np.zeros(N0, dtype=bool)
            for states, _ in data.trajectories:
                s = np.asarray(states)
                seen[s[s < N0]] = True
            misses += not seen.all()
        # a miss is a repetition without full coverage; the target rate is 1 - delta with 3 points slack
        return reps, misses, f"N_off={n_off}, coverage rate {1 - misses / reps:.4f}"
    return _timed("offline_coverage", body, min_pass_rate=1 - delta - 0.03)


LEMMA_CHECKS = (
    check_hellinger_sandwich,
    check_ew_regret,
    check_performance_difference,
    check_statewise_bound,
    check_decoupled_hellinger,
    check_symmetric_evaluation,
    check_cliff_stationarity,
)
BOUND_CHECKS = (check_stagger_bound, check_tragger_bound, check_offline_coverage)
SUITES = {"lemmas": LEMMA_CHECKS, "bounds": BOUND_CHECKS, "all": LEMMA_CHECKS + BOUND_CHECKS}


def run_suite(name: str = "all", seed: int = 0) -> list[CheckResult]:
    out = []
    for check in SUITES[name]:
        out.append(check(seed=seed) if "seed" in check.__code__.co_varnames else check())
    return out


def format_table(results: list[CheckResult]) -> str:
    rows = [("check", "trials", "violations", "required", "seconds", "status", "detail")]
    for r in results:
        rows.append((r.name, str(r.trials), str(r.violations), f">={r.min_pass_rate:.0%}",
                     f"{r.seconds:.2f}", "PASS" if r.passed else "FAIL", r.detail))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]) - 1)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row[:-1], widths)) + "  " + row[-1] for row in rows]
    return "\n".join(lines)
