"""Sinusoid few-task few-shot experiment: training, evaluation, gradient checks.

Training writes ``train.csv`` (step, mean_outer_loss) and ``checkpoint.json``
into the output directory. Evaluation writes one per-episode CSV per
evaluated variant (``eval_<label>.csv``) plus its aggregate curve
(``eval_<label>_summary.csv``). CSV schemas are listed in ``CSV_SCHEMAS``.

Step -1 in curves is the error before meta-finetuning; step 0 is the error
right after meta-finetuning (no goal-task fine-tuning yet); step s > 0 is
after s goal-task fine-tuning steps.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .meta import (AdamState, LoopCounts, StepSizes, family_meta_finetune,
                   family_meta_finetune_first_order, maltml_firstorder_step,
                   maltml_objective, maltml_outer_step, maml_objective, maml_outer_step,
                   oracle_inputs, oracle_train_step, pretrain_step, task_adapt)
from .model import MLP, ModelSpec, ParamVector, QuadraticModel, init_params
from .tasks import (FamilyBatch, ShotConfig, TaskBatch, draw_samples, sample_family,
                    sample_family_batch, sample_joint_tasks, sample_task, streams)

log = logging.getLogger(__name__)

ALGORITHMS = ("maltml", "maltml_fo", "maml", "pretrain", "oracle")
META_MODES = ("none", "exact", "first_order")
CHECKPOINT_FORMAT = "maltml-checkpoint"
CHECKPOINT_VERSION = 1
EVAL_GRID = np.linspace(-5.0, 5.0, 100)
# spawn-key prefixes keeping training and evaluation streams apart
TRAIN_KEY, EVAL_KEY, SNAPSHOT_KEY = 0, 1, 2
PRESETS = {"desk": 20_000, "paper": 70_000}

CSV_SCHEMAS = {
    "train": ("step", "mean_outer_loss"),
    "episodes": ("algorithm", "episode", "family_phase", "amplitude", "mse_pre"),  # + mse_0..mse_R
    "summary": ("algorithm", "step", "mean_mse", "ci_low", "ci_high"),
    "plotdata": ("algorithm", "step", "mean_mse", "ci_low", "ci_high"),
    "snapshots": ("step", "algorithm", "mean_mse_pre", "mean_mse_0", "mean_mse_final"),
}


class ConfigError(ValueError):
    """Invalid configuration or incompatible inputs (CLI exit code 1)."""


def _fmt(x: float) -> str:
    return repr(float(x))


# -- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "maltml"
    alpha: float = 0.001
    beta: float = 0.01
    gamma: float = 0.001
    eta: float = 0.001
    r: int = 1
    m: int = 1
    r_eval: int = 10
    m_fo: int = 5
    L: int = 5
    K: int = 5
    Q: int = 5
    validation_tasks: int = 2
    outer_steps: int = PRESETS["desk"]
    family_batch: int = 10
    seed: int = 0
    eval_every: int = 0
    snapshot_episodes: int = 20
    hidden: tuple[int, ...] = (40, 40)
    init: str = "uniform"
    output_dir: str = "runs/maltml"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        self.validate()

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        for name in ("r", "m", "m_fo", "L", "K", "Q", "validation_tasks", "family_batch",
                     "snapshot_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        for name in ("outer_steps", "eval_every", "r_eval", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in ("alpha", "beta", "gamma", "eta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be a finite non-negative number, got {value}")
        if self.algorithm == "maltml_fo" and self.m_fo < 2:
            raise ConfigError("maltml_fo needs m_fo >= 2")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError(f"hidden sizes must be positive, got {self.hidden}")
        try:
            init_params(ModelSpec(1, (1,), 1), 0, self.init)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def sizes(self) -> StepSizes:
        return StepSizes(self.alpha, self.beta, self.gamma, self.eta)

    @property
    def loops(self) -> LoopCounts:
        return LoopCounts(self.r, self.m, self.r_eval, self.m_fo)

    @property
    def shots(self) -> ShotConfig:
        return ShotConfig(self.L, self.K, self.Q, self.validation_tasks)

    @property
    def model_spec(self) -> ModelSpec:
        return ModelSpec(3 if self.algorithm == "oracle" else 1, self.hidden, 1)

    @property
    def tasks_per_step(self) -> int:
        """Task count per step for the flat baselines: the same tasks MALTML sees."""
        return self.family_batch * (self.L + self.validation_tasks)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        for key in ("output_dir", "eval_every", "snapshot_episodes"):
            d.pop(key)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def with_overrides(self, **overrides) -> "TrainConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _coerce(name: str, text: str):
    types = {f.name: f.type for f in fields(TrainConfig)}
    kind = types[name]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if name == "hidden":
            return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    known = {f.name for f in fields(TrainConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            if value not in PRESETS:
                raise ConfigError(f"line {lineno}: unknown preset {value!r}")
            out.setdefault("outer_steps", PRESETS[value])
            continue
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path) -> dict:
    try:
        return parse_config_text(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


# -- checkpoints ----------------------------------------------------------------

@dataclass
class Checkpoint:
    params: ParamVector
    adam: AdamState
    step: int
    config: TrainConfig

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "step": self.step,
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
            "params": self.params.to_dict(),
            "adam": {"t": self.adam.t, "m": [float(v) for v in self.adam.m],
                     "v": [float(v) for v in self.adam.v]},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read checkpoint {path}: {exc}") from None
        if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")
        config = TrainConfig.from_dict(data["config"])
        if config.config_hash() != data["config_hash"]:
            raise ConfigError(f"{path}: config hash mismatch")
        params = ParamVector.from_dict(data["params"])
        adam = AdamState(np.array(data["adam"]["m"]), np.array(data["adam"]["v"]),
                         int(data["adam"]["t"]), params.layout)
        return cls(params, adam, int(data["step"]), config)


# -- training -----------------------------------------------------------------------

def _prepare_output(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from None
    return out


def train_step(cfg: TrainConfig, model: MLP, theta: ParamVector, adam: AdamState, step: int):
    """One outer update of ``cfg.algorithm`` on the data of ``step``. Returns (theta, adam, loss)."""
    st = streams(cfg.seed, TRAIN_KEY, step)
    if cfg.algorithm in ("maltml", "maltml_fo"):
        batch = sample_family_batch(st, cfg.family_batch, cfg.shots)
        if cfg.algorithm == "maltml":
            return maltml_outer_step(model, theta, batch, cfg.sizes, cfg.loops, adam)
        theta, loss = maltml_firstorder_step(model, theta, batch, cfg.sizes, cfg.loops)
        return theta, adam, loss
    tasks = sample_joint_tasks(st, cfg.tasks_per_step, cfg.K, cfg.Q)
    if cfg.algorithm == "maml":
        return maml_outer_step(model, theta, tasks, cfg.alpha, adam, cfg.eta, cfg.r)
    if cfg.algorithm == "pretrain":
        return pretrain_step(model, theta, tasks, adam, cfg.eta)
    return oracle_train_step(model, theta, tasks, adam, cfg.eta)


def run_training(cfg: TrainConfig, progress: bool = False) -> tuple[Path, Path]:
    """Run ``cfg.outer_steps`` outer updates; returns (checkpoint path, training CSV path)."""
    cfg.validate()
    out = _prepare_output(cfg.output_dir)
    model = MLP(cfg.model_spec)
    theta = init_params(cfg.model_spec, cfg.seed, cfg.init)
    adam = AdamState.zeros(theta)
    rows: list[tuple[int, float]] = []
    snapshots: list[list] = []
    skipped = 0
    for step in range(1, cfg.outer_steps + 1):
        try:
            theta, adam, loss = train_step(cfg, model, theta, adam, step)
        except ad.NonFiniteError as exc:
            skipped += 1
            log.warning("step %d aborted: %s", step, exc)
            loss = float("nan")
        rows.append((step, loss))
        if progress and step % 1000 == 0:
            recent = np.nanmean([r[1] for r in rows[-1000:]])
            log.info("%s seed %d step %d mean loss (last 1000) %.4f",
                     cfg.algorithm, cfg.seed, step, recent)
        if cfg.eval_every and step % cfg.eval_every == 0:
            snapshots.extend(_snapshot(cfg, theta, step))
    if skipped:
        log.warning("%d of %d outer steps were aborted on non-finite values", skipped, cfg.outer_steps)

    ckpt_path = out / "checkpoint.json"
    Checkpoint(theta, adam, cfg.outer_steps - skipped, cfg).save(ckpt_path)
    csv_path = out / "train.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_SCHEMAS["train"])
        writer.writerows((s, _fmt(v)) for s, v in rows)
    if snapshots:
        with open(out / "snapshots.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_SCHEMAS["snapshots"])
            writer.writerows(snapshots)
    return ckpt_path, csv_path


def _snapshot(cfg: TrainConfig, theta: ParamVector, step: int) -> list[list]:
    rows = []
    for label, mode in default_variants(cfg.algorithm):
        recs = [evaluate_episode(cfg, theta, e, cfg.seed, mode, SNAPSHOT_KEY, label)
                for e in range(cfg.snapshot_episodes)]
        rows.append([step, label,
                     _fmt(np.mean([r.mse_pre for r in recs])),
                     _fmt(np.mean([r.curve[0] for r in recs])),
                     _fmt(np.mean([r.curve[-1] for r in recs]))])
    return rows


# -- evaluation ---------------------------------------------------------------------

@dataclass
class EpisodeRecord:
    algorithm: str
    episode: int
    family_phase: float
    amplitude: float
    mse_pre: float
    curve: list[float]

    def row(self) -> list[str]:
        return [self.algorithm, str(self.episode), _fmt(self.family_phase), _fmt(self.amplitude),
                _fmt(self.mse_pre), *map(_fmt, self.curve)]


@dataclass
class EvalReport:
    algorithm: str
    r_eval: int
    records: list[EpisodeRecord] = field(default_factory=list)

    def aggregates(self) -> list[tuple[int, float, float, float]]:
        """(step, mean, ci_low, ci_high) for step -1 (before meta-finetune) and 0..r_eval.

        95% normal-approximation interval: mean +- 1.96 * sd / sqrt(n).
        """
        if not self.records:
            raise ValueError("report has no episodes")
        table = np.array([[r.mse_pre, *r.curve] for r in self.records])
        n = table.shape[0]
        means = table.mean(axis=0)
        with np.errstate(invalid="ignore"):
            half = (1.96 * table.std(axis=0, ddof=1) / math.sqrt(n)) if n > 1 else np.zeros_like(means)
        # a diverged episode makes the mean infinite; its interval is then [inf, inf]
        half = np.where(np.isfinite(means), half, 0.0)
        steps = range(-1, self.r_eval + 1)
        return [(s, float(mu), float(mu - h), float(mu + h)) for s, mu, h in zip(steps, means, half)]

    def mean_curve(self) -> np.ndarray:
        """Means for step -1, 0, ..., r_eval."""
        return np.array([a[1] for a in self.aggregates()])

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        episodes = out / f"eval_{self.algorithm}.csv"
        with open(episodes, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([*CSV_SCHEMAS["episodes"], *(f"mse_{s}" for s in range(self.r_eval + 1))])
            writer.writerows(r.row() for r in self.records)
        summary = out / f"eval_{self.algorithm}_summary.csv"
        write_summary(summary, [self])
        return episodes, summary

    @classmethod
    def read(cls, path) -> "EvalReport":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            base = len(CSV_SCHEMAS["episodes"])
            if tuple(header[:base]) != CSV_SCHEMAS["episodes"]:
                raise ConfigError(f"{path}: not an episode report (header {header[:base]})")
            r_eval = len(header) - base - 1
            records = [EpisodeRecord(row[0], int(row[1]), float(row[2]), float(row[3]),
                                     float(row[4]), [float(v) for v in row[base:]])
                       for row in reader]
        if not records:
            raise ConfigError(f"{path}: report has no episodes")
        labels = {r.algorithm for r in records}
        if len(labels) != 1:
            raise ConfigError(f"{path}: mixed algorithm labels {sorted(labels)}")
        return cls(records[0].algorithm, r_eval, records)


def write_summary(path, reports: list[EvalReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_SCHEMAS["summary"])
        for rep in reports:
            for step, mu, lo, hi in rep.aggregates():
                writer.writerow([rep.algorithm, step, _fmt(mu), _fmt(lo), _fmt(hi)])


def default_variants(algorithm: str) -> list[tuple[str, str]]:
    """(label, meta-finetune mode) pairs evaluated for a trained algorithm.

    Baselines are reported both without meta-finetuning and with the same
    L-task meta-finetune budget MALTML gets ("fair" variants).
    """
    return {
        "maltml": [("maltml", "exact")],
        "maltml_fo": [("maltml_fo", "first_order")],
        "maml": [("maml", "none"), ("maml_fair", "exact")],
        "pretrain": [("pretrain", "none"), ("pretrain_fair", "exact"),
                     ("pretrain_fair_fo", "first_order")],
        "oracle": [("oracle", "none")],
    }[algorithm]


def _grid_mse(model: MLP, params: np.ndarray, truth: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        pred = model.forward(ad.const(params), EVAL_GRID[:, None]).value
        mse = float(np.mean((pred - truth) ** 2))
    return mse if math.isfinite(mse) else math.inf


def evaluate_episode(cfg: TrainConfig, theta: ParamVector, episode: int, seed: int,
                     mode: str, key: int = EVAL_KEY, label: str | None = None,
                     shots: ShotConfig | None = None, r_eval: int | None = None) -> EpisodeRecord:
    """Sample an unseen family, meta-finetune on L tasks, then fine-tune on one goal task.

    Adaptation sees only sampled support/query points; the reported error is
    measured on the fixed dense grid ``EVAL_GRID`` of the goal task.
    """
    shots = shots or cfg.shots
    r_eval = cfg.r_eval if r_eval is None else r_eval
    label = label or cfg.algorithm
    st = streams(seed, key, episode)
    family = sample_family(st.families)
    meta_tasks = [sample_task(family, st.tasks) for _ in range(shots.L)]
    goal = sample_task(family, st.tasks)
    meta_sets = [(draw_samples(t, shots.K, st.samples), draw_samples(t, shots.Q, st.samples, "query"))
                 for t in meta_tasks]
    goal_support = draw_samples(goal, shots.K, st.samples)
    truth = goal(EVAL_GRID)
    model = MLP(theta.spec())

    if cfg.algorithm == "oracle":
        pred = model.predict(theta, oracle_inputs(EVAL_GRID[:, None], goal.amplitude, goal.phase))
        mse = float(np.mean((pred - truth) ** 2))
        return EpisodeRecord(label, episode, family.phase, goal.amplitude, mse, [mse] * (r_eval + 1))

    meta = TaskBatch(
        phases=np.full(shots.L, family.phase),
        amplitudes=np.array([t.amplitude for t in meta_tasks]),
        support_x=np.stack([s.xs for s, _ in meta_sets])[..., None],
        support_y=np.stack([s.ys for s, _ in meta_sets]),
        query_x=np.stack([q.xs for _, q in meta_sets])[..., None],
        query_y=np.stack([q.ys for _, q in meta_sets]),
    )
    params = theta.entries
    mse_pre = _grid_mse(model, params, truth)
    if mode not in META_MODES:
        raise ConfigError(f"unknown meta-finetune mode {mode!r}")
    # MAML adapts with its own inner rate; the others with the goal-task rate
    step_size = cfg.alpha if cfg.algorithm == "maml" else cfg.gamma
    curve: list[float] = []
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            if mode == "exact":
                params = family_meta_finetune(model, ad.const(params), meta, cfg.alpha, cfg.beta,
                                              cfg.r, cfg.m).value
            elif mode == "first_order":
                params = family_meta_finetune_first_order(model, params, meta, cfg.alpha, cfg.beta,
                                                          cfg.r, max(cfg.m_fo, 2))
            curve.append(_grid_mse(model, params, truth))
            for _ in range(r_eval):
                params = task_adapt(model, ad.const(params), goal_support.xs[:, None], goal_support.ys,
                                    step_size, 1).value
                curve.append(_grid_mse(model, params, truth))
        except ad.NonFiniteError as exc:
            # a diverged adaptation counts as infinite error from that point on
            log.warning("%s episode %d diverged: %s", label, episode, exc)
            curve.extend([math.inf] * (r_eval + 1 - len(curve)))
    return EpisodeRecord(label, episode, family.phase, goal.amplitude, mse_pre, curve)


def _episode_job(args):
    return evaluate_episode(*args)


def run_eval(checkpoint, n_episodes: int = 100, shots: ShotConfig | None = None,
             r_eval: int | None = None, seed: int = 0, out_dir=None, workers: int = 1,
             variants: list[tuple[str, str]] | None = None) -> list[EvalReport]:
    """Evaluate a checkpoint on ``n_episodes`` fresh families per variant.

    Episode ``e`` draws from streams keyed by (seed, e) only, and results are
    assembled in episode order, so output is identical for any worker count.
    """
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else Checkpoint.load(checkpoint)
    cfg = ckpt.config
    if n_episodes < 1:
        raise ConfigError("n_episodes must be at least 1")
    shots = shots or cfg.shots
    r_eval = cfg.r_eval if r_eval is None else r_eval
    if r_eval < 0:
        raise ConfigError("r_eval must be non-negative")
    expected = cfg.model_spec.input_dim
    got = ckpt.params.spec().input_dim
    if got != expected:
        raise ConfigError(f"checkpoint has input_dim={got} but {cfg.algorithm} evaluation "
                          f"needs input_dim={expected}")
    if cfg.algorithm == "oracle" and variants and any(m != "none" for _, m in variants):
        raise ConfigError("the oracle takes task identity as input and is never meta-finetuned")
    variants = variants or default_variants(cfg.algorithm)

    reports = []
    for label, mode in variants:
        jobs = [(cfg, ckpt.params, e, seed, mode, EVAL_KEY, label, shots, r_eval)
                for e in range(n_episodes)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                records = list(pool.map(_episode_job, jobs, chunksize=max(1, n_episodes // (4 * workers))))
        else:
            records = [_episode_job(j) for j in jobs]
        report = EvalReport(label, r_eval, records)
        if out_dir is not None:
            report.write(_prepare_output(out_dir))
        reports.append(report)
    return reports


def emit_plotdata(report_paths, out_path) -> Path:
    """Combine episode reports into one long-format CSV (see ``CSV_SCHEMAS['plotdata']``)."""
    if not report_paths:
        raise ConfigError("need at least one report")
    reports = [r if isinstance(r, EvalReport) else EvalReport.read(r) for r in report_paths]
    lengths = {r.r_eval for r in reports}
    if len(lengths) != 1:
        raise ConfigError(f"reports disagree on r_eval: {sorted(lengths)}")
    write_summary(out_path, reports)
    return Path(out_path)


# -- gradient check -------------------------------------------------------------------

@dataclass
class GradcheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.error <= self.tolerance


GRADCHECK_SIZES = StepSizes(alpha=0.1, beta=0.1, gamma=0.1, eta=0.001)


def gradcheck_problem(seed: int, hidden=(4, 4), n_families: int = 2, n_tasks: int = 2,
                      shots: ShotConfig | None = None):
    """A small network with a tiny family batch for derivative checks.

    Returns (model, theta, family batch, flat task batch). Step sizes used
    with it are large enough that higher-order terms are visible.
    """
    shots = shots or ShotConfig(L=n_tasks, K=3, Q=3, validation_tasks=n_tasks)
    model = MLP(ModelSpec(1, tuple(hidden), 1))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    # random biases too, so that all coordinates matter
    theta = ParamVector(rng.normal(0.0, 0.5, model.n_params), model.layout)
    st = streams(seed, TRAIN_KEY, 0)
    batch = sample_family_batch(st, n_families, shots)
    flat = sample_joint_tasks(st, n_families * n_tasks, shots.K, shots.Q)
    return model, theta, batch, flat


def run_gradcheck(seed: int = 0, hidden=(4, 4), eps: float = 1e-5, tolerance: float = 1e-4,
                  corrupt: bool = False) -> list[GradcheckResult]:
    """Central-difference checks of the MAML and MALTML outer gradients.

    ``corrupt`` perturbs the analytic gradients; it exists so the negative
    control of the check itself can be exercised.
    """
    model, theta, batch, flat = gradcheck_problem(seed, hidden)
    sizes, loops = GRADCHECK_SIZES, LoopCounts(r=1, m=1)

    def maltml(x):
        return maltml_objective(model, x, batch, sizes, loops)

    def maml(x):
        return maml_objective(model, x, flat, sizes.alpha)

    results = []
    for name, f in (("maml", maml), ("maltml", maltml)):
        x = ad.leaf(theta.entries)
        (g,) = ad.grad(f(x), [x])
        analytic = g.value + (1e-2 * (1.0 + np.abs(g.value)) if corrupt else 0.0)
        err = ad.finite_diff_check(f, theta.entries, eps, analytic=analytic)
        results.append(GradcheckResult(name, err, tolerance))

    # scalar quadratic: the outer gradient has a closed form
    quad = QuadraticModel()
    th = np.array([0.7])
    a, b, c = 0.1, 0.2, 0.3
    q_sizes = StepSizes(alpha=a, beta=b, gamma=c)
    q_batch = FamilyBatch(np.zeros(1), _dummy_tasks((1, 1)), _dummy_tasks((1, 1)))
    x = ad.leaf(th)
    (g,) = ad.grad(maltml_objective(quad, x, q_batch, q_sizes, loops), [x])
    expected = (1 - c) ** 2 * (1 - b * (1 - a) ** 2) ** 2 * th
    got = g.value + (1e-2 if corrupt else 0.0)
    results.append(GradcheckResult("quadratic_closed_form", float(np.max(np.abs(got - expected))),
                                   1e-10))
    return results


def _dummy_tasks(shape: tuple[int, ...]) -> TaskBatch:
    return TaskBatch(np.zeros(shape), np.ones(shape), np.zeros(shape + (1, 1)),
                     np.zeros(shape + (1,)), np.zeros(shape + (1, 1)), np.zeros(shape + (1,)))
