"""Experiment orchestration: config, schedules, round loop, metrics.

A run is fully determined by (config, master_seed). Per-(client, round) RNG
streams are derived from the master seed through SeedSequence hashing so that
one client's draws never perturb another's. Metrics are recorded on the true
global objective every round and written as CSV or JSONL.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from fedsim.aggregation import AggregationRule, ServerOptimizer
from fedsim.analysis import chi_square
from fedsim.objectives import (
    GlobalObjective,
    LogisticObjective,
    QuadraticObjective,
    SyntheticDataset,
    generate_synthetic,
)
from fedsim.sampling import SamplingScheme, select_clients
from fedsim.solvers import DivergenceError, SolverSpec, run_local, vr_correction

METRIC_FIELDS = (
    "round",
    "global_loss",
    "grad_norm_sq",
    "surrogate_grad_norm_sq",
    "dist_to_opt",
    "chi2",
    "tau_eff",
    "tau_bar",
)

# Purpose tags for derived RNG streams.
_TAG_TAU = 1
_TAG_LOCAL = 2
_TAG_SAMPLING = 3


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class EtaSchedule:
    """Initial learning rate decayed by ``factor`` at round-fraction milestones."""

    initial: float
    milestones: tuple[float, ...] = ()
    factor: float = 1.0

    def __post_init__(self):
        if self.initial <= 0:
            raise ConfigError("initial eta must be > 0")
        if self.factor <= 0:
            raise ConfigError("decay factor must be > 0")
        for ms in self.milestones:
            if not 0 < ms < 1:
                raise ConfigError("milestones must lie in (0, 1)")


def eta_at(schedule: EtaSchedule, t: int, T: int) -> float:
    """Learning rate at round t of a T-round run."""
    if not 0 <= t < T:
        raise ValueError("round index out of range")
    passed = sum(1 for ms in schedule.milestones if t >= ms * T)
    return schedule.initial * schedule.factor**passed


@dataclass(frozen=True)
class TauSchedule:
    """Per-client local-step counts, possibly random and time-varying.

    Variants: fixed (scalar or per-client list), uniform_random(lo, hi),
    gaussian_clipped(mean, sd, lo, hi), epoch_based(epochs or epochs_range,
    batch) where tau_i = floor(E * n_i / B). With time_varying=False random
    draws happen once at round 0 and are reused.
    """

    variant: str = "fixed"
    tau: int | tuple[int, ...] = 1
    lo: int = 1
    hi: int = 1
    mean: float = 0.0
    sd: float = 0.0
    epochs: float = 1.0
    epochs_range: tuple[float, float] | None = None
    batch: int = 1
    time_varying: bool = False

    def __post_init__(self):
        if self.variant not in ("fixed", "uniform_random", "gaussian_clipped", "epoch_based"):
            raise ConfigError(f"unknown tau schedule {self.variant!r}")
        if self.variant in ("uniform_random", "gaussian_clipped"):
            if self.lo < 1 or self.hi < self.lo:
                raise ConfigError("need 1 <= lo <= hi")
        if self.variant == "epoch_based" and self.batch < 1:
            raise ConfigError("batch must be >= 1")


def tau_at(
    schedule: TauSchedule,
    client: int,
    t: int,
    rng: np.random.Generator,
    n_i: int | None = None,
) -> int:
    """Local steps for one client at round t; always an integer >= 1.

    The caller supplies the stream for the draw round (round 0 when the
    schedule is not time-varying). ``n_i`` is required for epoch_based.
    """
    if schedule.variant == "fixed":
        if isinstance(schedule.tau, tuple):
            return max(1, int(schedule.tau[client]))
        return max(1, int(schedule.tau))
    if schedule.variant == "uniform_random":
        return int(rng.integers(schedule.lo, schedule.hi + 1))
    if schedule.variant == "gaussian_clipped":
        draw = rng.normal(schedule.mean, schedule.sd)
        return int(np.clip(round(draw), schedule.lo, schedule.hi))
    if n_i is None:
        raise ConfigError("epoch_based schedule requires client sample counts")
    if schedule.epochs_range is not None:
        lo, hi = schedule.epochs_range
        epochs = rng.uniform(lo, hi)
    else:
        epochs = schedule.epochs
    return max(1, int(epochs * n_i // schedule.batch))


@dataclass
class RoundMetrics:
    """Per-round record; the first eight fields form the file schema."""

    round: int
    global_loss: float
    grad_norm_sq: float
    surrogate_grad_norm_sq: float
    dist_to_opt: float
    chi2: float
    tau_eff: float
    tau_bar: float
    holdout_accuracy: float | None = None

    def record(self) -> dict:
        d = asdict(self)
        d.pop("holdout_accuracy")
        return d


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run byte-for-byte."""

    objective: dict
    solver: dict | list
    aggregation: AggregationRule
    sampling: SamplingScheme
    tau_schedule: TauSchedule
    eta_schedule: EtaSchedule
    rounds: int
    master_seed: int = 0
    sigma2: float = 0.0
    batch_size: int | None = None
    server_optimizer: str = "plain"
    server_rho: float = 0.0
    assumptions: dict = field(default_factory=dict)
    output: str | None = None
    x0: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.sigma2 < 0:
            raise ConfigError("sigma2 must be >= 0")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            agg = doc.get("aggregation", {})
            if isinstance(agg, str):
                rule = {"fedavg": AggregationRule.fedavg(), "fednova": AggregationRule.fednova()}[agg]
            else:
                preset = agg.get("preset")
                if preset:
                    base = {"fedavg": AggregationRule.fedavg(), "fednova": AggregationRule.fednova()}[preset]
                    rule = AggregationRule(
                        agg.get("weight_scheme", base.weight_scheme),
                        agg.get("tau_eff_scheme", base.tau_eff_scheme),
                        agg.get("tau_eff_value"),
                    )
                else:
                    rule = AggregationRule(
                        agg.get("weight_scheme", "implicit"),
                        agg.get("tau_eff_scheme", "implicit"),
                        agg.get("tau_eff_value"),
                    )
            samp = doc.get("sampling", {"variant": "full"})
            tau_doc = dict(doc["tau_schedule"])
            if isinstance(tau_doc.get("tau"), list):
                tau_doc["tau"] = tuple(tau_doc["tau"])
            if tau_doc.get("epochs_range") is not None:
                tau_doc["epochs_range"] = tuple(tau_doc["epochs_range"])
            eta_doc = dict(doc["eta_schedule"])
            eta_doc["milestones"] = tuple(eta_doc.get("milestones", ()))
            return cls(
                objective=doc["objective"],
                solver=doc.get("solver", {"variant": "vanilla"}),
                aggregation=rule,
                sampling=SamplingScheme(samp.get("variant", "full"), samp.get("q", 1)),
                tau_schedule=TauSchedule(**tau_doc),
                eta_schedule=EtaSchedule(**eta_doc),
                rounds=int(doc["rounds"]),
                master_seed=int(doc.get("master_seed", 0)),
                sigma2=float(doc.get("sigma2", 0.0)),
                batch_size=doc.get("batch_size"),
                server_optimizer=doc.get("server_optimizer", "plain"),
                server_rho=float(doc.get("server_rho", 0.0)),
                assumptions=doc.get("assumptions", {}),
                output=doc.get("output"),
                x0=tuple(doc["x0"]) if doc.get("x0") is not None else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)


def _stream(master_seed: int, round_idx: int, client: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([master_seed, round_idx, client, tag])
    )


def build_objective(config: ExperimentConfig):
    """Instantiate (global objective, holdout objectives or None) from config."""
    spec = config.objective
    kind = spec.get("kind")
    if kind == "quadratic":
        m = int(spec["m"])
        d = int(spec.get("d", 10))
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        if "e_values" in spec:
            e_list = [np.atleast_1d(np.array(e, dtype=float)) for e in spec["e_values"]]
            d = e_list[0].shape[0]
        else:
            e_scale = float(spec.get("e_scale", 0.1))
            e_list = [rng.normal(0.0, e_scale, size=d) for _ in range(m)]
        if spec.get("H", "identity") == "identity":
            H_list = [np.eye(d) for _ in range(m)]
        else:
            H_list = []
            for _ in range(m):
                Q = np.linalg.qr(rng.normal(size=(d, d)))[0]
                eigs = rng.uniform(0.5, 2.0, size=d)
                H_list.append(Q @ np.diag(eigs) @ Q.T)
        clients = [
            QuadraticObjective(H, e, noise_var=config.sigma2)
            for H, e in zip(H_list, e_list)
        ]
        p = np.array(spec.get("p", [1.0 / m] * m), dtype=float)
        return GlobalObjective(clients, p), None
    if kind in ("synthetic", "dataset_file"):
        if kind == "synthetic":
            ds = generate_synthetic(
                alpha=float(spec.get("alpha", 1.0)),
                beta=float(spec.get("beta", 1.0)),
                m=int(spec["m"]),
                d_feat=int(spec.get("d_feat", 60)),
                num_classes=int(spec.get("K", 10)),
                seed=int(spec.get("seed", 0)),
            )
        else:
            ds = SyntheticDataset.from_json(spec["path"])
        holdout_frac = float(spec.get("holdout_fraction", 0.2))
        train, holdout = [], []
        for Xi, yi in zip(ds.X, ds.y):
            cut = max(1, int(round(len(yi) * (1.0 - holdout_frac))))
            train.append(LogisticObjective(Xi[:cut], yi[:cut], ds.num_classes))
            holdout.append(LogisticObjective(Xi[cut:], yi[cut:], ds.num_classes))
        n_train = np.array([c.n for c in train], dtype=float)
        p = n_train / n_train.sum()
        return GlobalObjective(train, p), holdout
    raise ConfigError(f"unknown objective kind {spec.get('kind')!r}")


def _solver_spec(config: ExperimentConfig, client: int, eta: float) -> SolverSpec:
    doc = config.solver[client] if isinstance(config.solver, list) else config.solver
    return SolverSpec(
        variant=doc.get("variant", "vanilla"),
        eta=eta,
        mu=float(doc.get("mu", 0.0)),
        gamma=float(doc.get("gamma", 1.0)),
        rho=float(doc.get("rho", 0.0)),
    )


@dataclass
class ExperimentResult:
    metrics: list[RoundMetrics]
    x_final: np.ndarray
    diverged: bool = False
    divergence_round: int | None = None


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Execute the round loop: select -> local runs -> aggregate -> step -> measure."""
    global_obj, holdout = build_objective(config)
    m, dim = global_obj.m, global_obj.dim
    p = global_obj.p
    if config.x0 is not None:
        x = np.asarray(config.x0, dtype=float)
        if x.shape != (dim,):
            raise ConfigError("x0 dimension does not match the objective")
    else:
        x = np.zeros(dim)
    x_star = global_obj.minimizer() if global_obj.is_quadratic() else None
    server = ServerOptimizer(config.server_optimizer, config.server_rho)
    n_counts = [getattr(c, "n", None) for c in global_obj.clients]
    stochastic = config.batch_size is not None or config.sigma2 > 0
    # Quadratic clients ignore batch size; anything >= 1 activates the
    # additive-noise gradient path when only sigma2 is set.
    batch_size = config.batch_size if config.batch_size is not None else (
        1 if stochastic else None
    )
    workers = int(os.environ.get("FEDSIM_WORKERS", "0")) or (os.cpu_count() or 1)

    uses_vr = _uses_vr(config, m)
    d_prev = np.zeros((m, dim)) if uses_vr else None
    d_prev_avg = np.zeros(dim) if uses_vr else None

    metrics: list[RoundMetrics] = []
    frozen_taus: list[int] | None = None
    for t in range(config.rounds):
        eta = eta_at(config.eta_schedule, t, config.rounds)
        if config.tau_schedule.time_varying or frozen_taus is None:
            draw_round = t if config.tau_schedule.time_varying else 0
            taus = [
                tau_at(config.tau_schedule, i, draw_round,
                       _stream(config.master_seed, draw_round, i, _TAG_TAU), n_counts[i])
                for i in range(m)
            ]
            if not config.tau_schedule.time_varying:
                frozen_taus = taus
        else:
            taus = frozen_taus

        draw = select_clients(
            config.sampling, p, m,
            _stream(config.master_seed, t, 0, _TAG_SAMPLING),
        )
        indices = draw.indices()
        weights = draw.weights()

        def run_one(i: int):
            spec = _solver_spec(config, i, eta)
            correction = None
            if spec.variant == "vr_momentum" and t > 0:
                correction = vr_correction(d_prev[i], d_prev_avg)
            rng = _stream(config.master_seed, t, i, _TAG_LOCAL) if stochastic else None
            return run_local(
                global_obj.clients[i], x, spec, taus[i],
                correction=correction,
                batch_size=batch_size,
                rng=rng,
            )

        try:
            if workers > 1 and len(indices) > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    results = list(pool.map(run_one, indices))
            else:
                results = [run_one(i) for i in indices]
        except DivergenceError:
            return ExperimentResult(metrics, x, diverged=True, divergence_round=t)

        tau_eff, w = config.aggregation.resolve(
            weights, [r.a_norm1 for r in results], [r.tau for r in results]
        )
        delta = np.zeros(dim)
        for wi, r in zip(w, results):
            delta += wi * r.d
        delta *= -tau_eff * eta
        x = server.step(x, delta)

        if uses_vr:
            for i, r in zip(indices, results):
                d_prev[i] = r.d
            d_prev_avg = p @ d_prev

        metrics.append(
            _measure(t, x, global_obj, holdout, p, taus, indices, w, tau_eff, x_star)
        )
    return ExperimentResult(metrics, x)


def _uses_vr(config: ExperimentConfig, m: int) -> bool:
    docs = config.solver if isinstance(config.solver, list) else [config.solver]
    return any(d.get("variant") == "vr_momentum" for d in docs)


def _measure(t, x, global_obj, holdout, p, taus, indices, w, tau_eff, x_star) -> RoundMetrics:
    grad = global_obj.grad(x)
    # chi2 compares true weights of the participants against the round's
    # aggregation weights, both renormalized over the participating set.
    p_sel = np.array([p[i] for i in indices])
    p_sel = p_sel / p_sel.sum()
    w_norm = np.asarray(w, dtype=float)
    w_norm = w_norm / w_norm.sum()
    surrogate = np.zeros_like(grad)
    for wi, i in zip(w_norm, indices):
        surrogate += wi * global_obj.clients[i].grad(x)
    accuracy = None
    if holdout is not None:
        n_hold = np.array([h.n for h in holdout], dtype=float)
        accuracy = float(
            sum(ni * h.accuracy(x) for ni, h in zip(n_hold, holdout)) / n_hold.sum()
        )
    return RoundMetrics(
        round=t,
        global_loss=global_obj.value(x),
        grad_norm_sq=float(grad @ grad),
        surrogate_grad_norm_sq=float(surrogate @ surrogate),
        dist_to_opt=float(np.linalg.norm(x - x_star)) if x_star is not None else 0.0,
        chi2=chi_square(p_sel, w_norm),
        tau_eff=tau_eff,
        tau_bar=float(np.mean(taus)),
        holdout_accuracy=accuracy,
    )


def initial_taus(config: ExperimentConfig, n_counts) -> list[int]:
    """Round-0 local-step counts, as drawn by run_experiment."""
    m = len(n_counts)
    return [
        tau_at(config.tau_schedule, i, 0,
               _stream(config.master_seed, 0, i, _TAG_TAU), n_counts[i])
        for i in range(m)
    ]


def emit_metrics(metrics: list[RoundMetrics], path: str, fmt: str = "csv") -> None:
    """Write per-round metrics as CSV or JSONL with full float precision."""
    if fmt == "csv":
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(METRIC_FIELDS)
            for rm in metrics:
                rec = rm.record()
                writer.writerow(
                    [rec["round"]] + [repr(float(rec[k])) for k in METRIC_FIELDS[1:]]
                )
    elif fmt == "jsonl":
        with open(path, "w") as f:
            for rm in metrics:
                f.write(json.dumps(rm.record()) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def load_metrics(path: str, fmt: str | None = None) -> list[RoundMetrics]:
    """Read back a metrics file written by emit_metrics."""
    if fmt is None:
        fmt = "jsonl" if path.endswith(".jsonl") else "csv"
    rows: list[RoundMetrics] = []
    if fmt == "csv":
        with open(path, newline="") as f:
            for rec in csv.DictReader(f):
                rows.append(RoundMetrics(
                    round=int(rec["round"]),
                    **{k: float(rec[k]) for k in METRIC_FIELDS[1:]},
                ))
    else:
        with open(path) as f:
            for line in f:
                rec = json.loads(line)
                rows.append(RoundMetrics(
                    round=int(rec["round"]),
                    **{k: float(rec[k]) for k in METRIC_FIELDS[1:]},
                ))
    return rows
