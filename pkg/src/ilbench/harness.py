"""Experiment driver: configs, seeded Monte Carlo runs, cost-aligned curves and outputs.

Each (algorithm, run) pair is an independent task with its own random stream
derived from the master seed, so results do not depend on how tasks are
scheduled.  Curves are sampled on a shared cost grid; between annotation
events the last value is carried forward.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .algorithms import run_stagger, run_tragger, run_warm_stagger, run_warm_tragger
from .cliff import CliffConfig, CliffMdp, build_cliff
from .errors import ConfigurationError
from .learners import COMPLETION_LIMIT, PolicyClass, all_deterministic_policies, make_learner
from .mdp import DetTabular, exact_return, mdp_from_json, policy_from_json
from .oracle import AnnotationLedger, ExpertOracle, generate_offline
from .rng import BufferedRng, child_rng

ALGORITHMS = ("bc", "stagger", "warm_stagger", "tragger", "warm_tragger")
LEARNERS = ("memorizing", "exp_weights", "version_space")
CSV_HEADER = ["algorithm", "run_group", "cost", "annotations", "return_mean", "return_p10",
              "return_p90", "cov_E", "cov_Eprime", "b_prime_annotated_frac"]
LEDGER_HEADER = ["algorithm", "run_group", "run", "cost_offline", "cost_interactive", "cost_total"]


@dataclass
class AlgorithmSpec:
    """One curve of an experiment. ``None`` budgets are filled in under equal-cost mode."""

    algorithm: str
    offline_pairs: int | None = None
    N_int: int | None = None
    name: str | None = None

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.algorithm.startswith("warm_"):
            return f"{self.algorithm}({self.offline_pairs})"
        return self.algorithm

    def total_cost(self, C: float, horizon: int) -> float:
        n_int = self.N_int or 0
        if self.algorithm.endswith("tragger"):
            n_int = (n_int // horizon) * horizon
        return (self.offline_pairs or 0) + C * n_int


@dataclass
class ExperimentConfig:
    env: dict
    algorithms: list[AlgorithmSpec]
    C: float = 1.0
    num_runs: int = 1
    master_seed: int = 0
    eval_every_cost: float = 50.0
    out_dir: str | None = None
    learner: str = "memorizing"
    eta: float = 1.0
    equal_cost: bool = False
    max_cost: float | None = None
    bootstrap_resamples: int = 1000

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        if "env" not in obj or "algorithms" not in obj:
            raise ConfigurationError("config needs 'env' and 'algorithms'")
        specs = []
        for a in obj["algorithms"]:
            a = {"algorithm": a} if isinstance(a, str) else dict(a)
            bad = set(a) - set(AlgorithmSpec.__dataclass_fields__)
            if bad:
                raise ConfigurationError(f"unknown algorithm keys: {sorted(bad)}")
            specs.append(AlgorithmSpec(**a))
        obj["algorithms"] = specs
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


def figure2_config(num_runs: int = 200, master_seed: int = 0, max_cost: int = 20000) -> ExperimentConfig:
    """BC, STAGGER and three warm-started STAGGER runs at equal total cost on the simulation cliff."""
    algs = [AlgorithmSpec("bc"), AlgorithmSpec("stagger")]
    algs += [AlgorithmSpec("warm_stagger", offline_pairs=k, name=f"WS({k})") for k in (200, 800, 3200)]
    return ExperimentConfig(env={"preset": "figure2"}, algorithms=algs, C=1.0, num_runs=num_runs,
                            master_seed=master_seed, equal_cost=True, max_cost=max_cost)


# -- environment ---------------------------------------------------------------------------------


@dataclass
class Environment:
    mdp: object
    expert: DetTabular
    policy_class: PolicyClass | None = None
    cliff: CliffConfig | None = None


def _cliff_from_env(env: dict) -> CliffConfig | None:
    if "cliff" in env:
        return CliffConfig(**env["cliff"])
    preset = env.get("preset")
    if preset is None:
        return None
    overrides = {k: v for k, v in env.items() if k != "preset"}
    if preset == "figure2":
        base = asdict(CliffConfig.figure2())
        base.update(overrides)
        return CliffConfig(**base)
    if preset == "theorem":
        extra = {k: overrides.pop(k) for k in ("expert_seed",) if k in overrides}
        cfg = CliffConfig.theorem(**overrides)
        return CliffConfig(**{**asdict(cfg), **extra})
    raise ConfigurationError(f"unknown preset {preset!r}")


def load_environment(env: dict) -> Environment:
    cliff = _cliff_from_env(env)
    if cliff is not None:
        mdp, expert = build_cliff(cliff)
        return Environment(mdp, expert, None, cliff)
    if "mdp_file" not in env:
        raise ConfigurationError("env needs a 'preset', a 'cliff' block or an 'mdp_file'")
    obj = json.loads(Path(env["mdp_file"]).read_text())
    if "cliff" in obj:
        cfg = CliffConfig(**obj["cliff"])
        mdp, expert = build_cliff(cfg)
        return Environment(mdp, expert, None, cfg)
    mdp = mdp_from_json(obj["mdp"])
    expert = policy_from_json(obj["expert"])
    if not isinstance(expert, DetTabular):
        raise ConfigurationError("the expert must be a deterministic table")
    cls = None
    if "policy_class" in obj:
        cls = PolicyClass([policy_from_json(p) for p in obj["policy_class"]])
    return Environment(mdp, expert, cls, None)


def _class_for(env: Environment) -> PolicyClass:
    if env.policy_class is not None:
        return env.policy_class
    mdp = env.mdp
    if mdp.num_actions ** mdp.num_states > COMPLETION_LIMIT:
        raise ConfigurationError(
            "policy class too large to enumerate; use the memorizing learner or supply 'policy_class'")
    return all_deterministic_policies(mdp.num_states, mdp.num_actions)


# -- validation ----------------------------------------------------------------------------------


def prepare(config: ExperimentConfig) -> tuple[ExperimentConfig, Environment]:
    """Validate the config, fill equal-cost budgets and load the environment."""
    if config.num_runs < 1:
        raise ConfigurationError("num_runs must be at least 1")
    if config.C < 1:
        raise ConfigurationError("cost ratio C must be at least 1")
    if config.eval_every_cost <= 0:
        raise ConfigurationError("eval_every_cost must be positive")
    if config.learner not in LEARNERS:
        raise ConfigurationError(f"learner must be one of {LEARNERS}")
    if not config.algorithms:
        raise ConfigurationError("at least one algorithm is required")
    env = load_environment(config.env)
    H = env.mdp.horizon
    if config.learner != "memorizing":
        env.policy_class = _class_for(env)
        if env.expert not in set(env.policy_class.members):
            raise ConfigurationError("the expert is not a member of the policy class")
    specs = []
    for spec in config.algorithms:
        if spec.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {spec.algorithm!r}")
        spec = AlgorithmSpec(**asdict(spec))
        if spec.algorithm in ("stagger", "tragger"):
            if spec.offline_pairs:
                raise ConfigurationError(f"{spec.algorithm} takes no offline pairs")
            spec.offline_pairs = 0
        if spec.algorithm == "bc":
            if spec.N_int:
                raise ConfigurationError("bc takes no interactive budget")
            spec.N_int = 0
        if spec.algorithm.startswith("warm_") and spec.offline_pairs is None:
            raise ConfigurationError(f"{spec.algorithm} needs 'offline_pairs'")
        if config.equal_cost:
            if config.max_cost is None:
                raise ConfigurationError("equal_cost needs 'max_cost'")
            M = config.max_cost
            if spec.algorithm == "bc" and spec.offline_pairs is None:
                spec.offline_pairs = int(M)
            if spec.N_int is None:
                spec.N_int = int(round((M - spec.offline_pairs) / config.C))
            unit = config.C * (H if spec.algorithm.endswith("tragger") else 1)
            if abs(spec.total_cost(config.C, H) - M) >= unit:
                raise ConfigurationError(
                    f"{spec.label}: total cost {spec.total_cost(config.C, H)} differs from {M}")
        spec.offline_pairs = spec.offline_pairs or 0
        spec.N_int = spec.N_int or 0
        if spec.offline_pairs < 0 or spec.N_int < 0:
            raise ConfigurationError(f"{spec.label}: budgets must be non-negative")
        specs.append(spec)
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ConfigurationError("algorithm labels must be unique")
    max_cost = config.max_cost
    if max_cost is None:
        max_cost = max(s.total_cost(config.C, H) for s in specs)
    cfg = ExperimentConfig(**{**asdict(config), "algorithms": specs, "max_cost": max_cost})
    cfg.algorithms = specs
    return cfg, env


def cost_grid(max_cost: float, step: float) -> np.ndarray:
    return step * np.arange(int(math.floor(max_cost / step + 1e-9)) + 1)


# -- a single run ------------------------------------------------------------------------------


class CurveTracker:
    """Samples a learning curve on a cost grid from a stream of annotation events.

    Grid point ``g`` reports the state after the last event with cost ``<= g``.
    Policies are only evaluated when a grid point needs them.
    """

    def __init__(self, grid: np.ndarray, evaluate, mdp, cliff: CliffConfig | None):
        self.grid = grid.tolist()
        self.evaluate = evaluate
        self.cliff = cliff
        K = len(grid)
        self.returns = np.zeros(K)
        self.annotations = np.zeros(K)
        self.ledger_cost = np.zeros(K)
        self.cov = np.zeros((K, 3))
        self._k = 0
        self._seen = np.zeros(mdp.num_states, dtype=bool)
        self._counts = [0, 0, 0]
        self._state = None

    def _coverage(self) -> tuple[float, float, float]:
        c = self.cliff
        if c is None:
            return self._counts[0] / len(self._seen), float("nan"), float("nan")
        return self._counts[0] / c.N0, self._counts[1] / c.N1, float(self._counts[2])

    def _mark(self, states) -> bool:
        c = self.cliff
        fresh = False
        for s in states:
            if self._seen[s]:
                continue
            self._seen[s] = fresh = True
            if c is None:
                self._counts[0] += 1
            elif s < c.N0:
                self._counts[0] += 1
            elif s < c.b:
                self._counts[1] += 1
            elif s == c.b_prime:
                self._counts[2] = 1
        return fresh

    def _emit_until(self, cost: float) -> None:
        state = self._state
        while self._k < len(self.grid) and self.grid[self._k] < cost - 1e-9:
            if state["value"] is None:
                state["value"] = self.evaluate(state["policy"])
            k = self._k
            self.returns[k] = state["value"]
            self.annotations[k] = state["annotations"]
            self.ledger_cost[k] = state["cost"]
            self.cov[k] = state["cov"]
            self._k += 1

    def push(self, cost: float, annotations: int, policy, states=()) -> None:
        if self._state is not None and self._k < len(self.grid) and self.grid[self._k] < cost - 1e-9:
            self._emit_until(cost)
        if self._mark(states) or self._state is None:
            self._cov = self._coverage()
        self._state = {"cost": cost, "annotations": annotations, "policy": policy,
                       "cov": self._cov, "value": None}

    def finish(self) -> None:
        self._emit_until(math.inf)


@dataclass
class RunResult:
    label: str
    run: int
    returns: np.ndarray
    annotations: np.ndarray
    ledger_cost: np.ndarray
    coverage: np.ndarray
    cost_offline: float
    cost_interactive: float


def _evaluator(env: Environment):
    mdp = env.mdp

    def evaluate(policy) -> float:
        if isinstance(mdp, CliffMdp) and policy.stationary and policy.markovian:
            return mdp.structured_return(policy)
        return exact_return(mdp, policy)

    return evaluate


def _new_learner(config: ExperimentConfig, env: Environment):
    return make_learner(config.learner, policy_class=env.policy_class, eta=config.eta,
                        num_states=env.mdp.num_states, num_actions=env.mdp.num_actions)


def simulate_run(config: ExperimentConfig, env: Environment, spec: AlgorithmSpec, run: int) -> RunResult:
    """One seeded run of one algorithm, sampled on the config's cost grid."""
    mdp, H = env.mdp, env.mdp.horizon
    grid = cost_grid(config.max_cost, config.eval_every_cost)
    rng = BufferedRng(child_rng(config.master_seed, spec.label, run))
    ledger = AnnotationLedger(H, config.C)
    oracle = ExpertOracle(env.expert, ledger)
    tracker = CurveTracker(grid, _evaluator(env), mdp, env.cliff)

    reveal = _new_learner(config, env)
    tracker.push(0.0, 0, reveal.propose())
    pairs = []
    if spec.offline_pairs:
        data = generate_offline(mdp, ExpertOracle(env.expert), -(-spec.offline_pairs // H), rng)
        pairs = data.prefix_reveal(spec.offline_pairs)
        for h, s, a in pairs:
            reveal.observe(h, s, a)
            ledger.log_offline_pair(h, s, a)
            tracker.push(ledger.total_cost, ledger.annotations, reveal.propose(), (s,))

    def monitor(record, learner):
        tracker.push(record.cost, record.annotations, learner.propose(), record.states)

    alg = spec.algorithm
    if alg == "stagger" and spec.N_int > 0:
        run_stagger(mdp, oracle, _new_learner(config, env), spec.N_int, rng, monitor)
    elif alg == "warm_stagger" and spec.N_int > 0:
        run_warm_stagger(mdp, oracle, _new_learner(config, env), pairs, spec.N_int, rng, monitor)
    elif alg == "tragger" and spec.N_int >= H:
        run_tragger(mdp, oracle, _new_learner(config, env), spec.N_int // H, rng, monitor)
    elif alg == "warm_tragger":
        run_warm_tragger(mdp, oracle, _new_learner(config, env), pairs, spec.N_int, rng, monitor)
    tracker.finish()
    return RunResult(spec.label, run, tracker.returns, tracker.annotations, tracker.ledger_cost,
                     tracker.cov, ledger.offline_cost, ledger.interactive_cost)


# -- parallel execution -----------------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(config_dict: dict) -> None:
    config, env = prepare(ExperimentConfig.from_dict(config_dict))
    _WORKER["config"], _WORKER["env"] = config, env


def _worker_task(task: tuple[int, int]) -> RunResult:
    config, env = _WORKER["config"], _WORKER["env"]
    i, run = task
    return simulate_run(config, env, config.algorithms[i], run)


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("ILBENCH_THREADS", "1"))
    if threads < 1:
        raise ConfigurationError("thread count must be at least 1")
    return threads


# -- aggregation ------------------------------------------------------------------------------------


def bootstrap_band(samples, resamples: int = 1000, rng: np.random.Generator | None = None,
                   lo: float = 0.10, hi: float = 0.90) -> tuple[float, float]:
    """Percentile bootstrap of the mean; nearest-rank percentiles.

    The band is clipped to the sample range, which only removes rounding noise
    (a resampled mean cannot leave that range).

    With fewer than two samples the band collapses onto the (single) value.
    """
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ConfigurationError("no samples")
    if x.size < 2:
        return float(x[0]), float(x[0])
    rng = np.random.default_rng(0) if rng is None else rng
    means = x[rng.integers(x.size, size=(resamples, x.size))].mean(axis=1)
    p_lo, p_hi = np.clip(np.quantile(means, [lo, hi], method="inverted_cdf"), x.min(), x.max())
    return float(p_lo), float(p_hi)


def bootstrap_bands(matrix: np.ndarray, resamples: int, rng: np.random.Generator,
                    lo: float = 0.10, hi: float = 0.90) -> tuple[np.ndarray, np.ndarray]:
    """:func:`bootstrap_band` for every column of a ``(runs, checkpoints)`` matrix.

    One set of resampling indices is shared by all checkpoints, which keeps
    each column's band a valid bootstrap band while costing one matrix product.
    """
    n, K = matrix.shape
    if n < 2:
        return matrix[0].copy(), matrix[0].copy()
    idx = rng.integers(n, size=(resamples, n))
    counts = np.zeros((resamples, n))
    np.add.at(counts, (np.arange(resamples)[:, None], idx), 1.0)
    means = counts @ matrix / n
    p_lo, p_hi = np.clip(np.quantile(means, [lo, hi], axis=0, method="inverted_cdf"),
                         matrix.min(axis=0), matrix.max(axis=0))
    return p_lo, p_hi


@dataclass
class ExperimentCurve:
    label: str
    algorithm: str
    cost: np.ndarray
    annotations: np.ndarray
    return_mean: np.ndarray
    return_p10: np.ndarray
    return_p90: np.ndarray
    cov_E: np.ndarray
    cov_Eprime: np.ndarray
    b_prime_frac: np.ndarray
    runs: list[RunResult] = field(repr=False, default_factory=list)

    @property
    def run_returns(self) -> np.ndarray:
        return np.stack([r.returns for r in self.runs])


def aggregate(config: ExperimentConfig, spec: AlgorithmSpec, runs: list[RunResult]) -> ExperimentCurve:
    grid = cost_grid(config.max_cost, config.eval_every_cost)
    R = np.stack([r.returns for r in runs])
    cov = np.stack([r.coverage for r in runs])
    mean = R.mean(axis=0)
    lo, hi = bootstrap_bands(R, config.bootstrap_resamples,
                             child_rng(config.master_seed, spec.label, "bootstrap"))
    lo, hi = np.minimum(lo, mean), np.maximum(hi, mean)
    return ExperimentCurve(
        label=spec.label, algorithm=spec.algorithm, cost=grid,
        annotations=np.stack([r.annotations for r in runs]).mean(axis=0),
        return_mean=mean, return_p10=lo, return_p90=hi,
        cov_E=cov[:, :, 0].mean(axis=0), cov_Eprime=cov[:, :, 1].mean(axis=0),
        b_prime_frac=cov[:, :, 2].mean(axis=0), runs=runs)


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> dict[str, ExperimentCurve]:
    """Run every (algorithm, run) task and aggregate one curve per algorithm."""
    config, env = prepare(config)
    threads = resolve_threads(threads)
    tasks = [(i, r) for i in range(len(config.algorithms)) for r in range(config.num_runs)]
    if threads == 1:
        results = [simulate_run(config, env, config.algorithms[i], r) for i, r in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                                 initargs=(config.to_dict(),)) as pool:
            results = list(pool.map(_worker_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    results.sort(key=lambda r: ([s.label for s in config.algorithms].index(r.label), r.run))
    curves = {}
    for spec in config.algorithms:
        runs = [r for r in results if r.label == spec.label]
        curves[spec.label] = aggregate(config, spec, runs)
    return curves


# -- outputs ------------------------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def results_csv(curves: dict[str, ExperimentCurve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for c in curves.values():
        for k in range(len(c.cost)):
            w.writerow([c.algorithm, c.label, _fmt(c.cost[k]), _fmt(c.annotations[k]),
                        _fmt(c.return_mean[k]), _fmt(c.return_p10[k]), _fmt(c.return_p90[k]),
                        _fmt(c.cov_E[k]), _fmt(c.cov_Eprime[k]), _fmt(c.b_prime_frac[k])])
    return buf.getvalue()


def ledger_csv(curves: dict[str, ExperimentCurve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LEDGER_HEADER)
    for c in curves.values():
        for r in c.runs:
            w.writerow([c.algorithm, c.label, r.run, _fmt(r.cost_offline), _fmt(r.cost_interactive),
                        _fmt(r.cost_offline + r.cost_interactive)])
    return buf.getvalue()


def plot_curves(curves: dict[str, ExperimentCurve], path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "ilbench"
    fig, axes = plt.subplots(1, 3, figsize=(15, 4))
    panels = [("return_mean", "return"), ("cov_E", "coverage of E"), ("cov_Eprime", "coverage of E'")]
    for ax, (attr, title) in zip(axes, panels):
        for c in curves.values():
            line, = ax.plot(c.cost, getattr(c, attr), label=c.label)
            if attr == "return_mean":
                ax.fill_between(c.cost, c.return_p10, c.return_p90, color=line.get_color(), alpha=0.25)
        ax.set_xlabel("annotation cost")
        ax.set_title(title)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_outputs(curves: dict[str, ExperimentCurve], config: ExperimentConfig, out_dir=None) -> Path:
    """Write results.csv, ledger.csv, the config echo and curves.svg."""
    out = Path(out_dir or config.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(results_csv(curves))
    (out / "ledger.csv").write_text(ledger_csv(curves))
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    plot_curves(curves, out / "curves.svg")
    return out
