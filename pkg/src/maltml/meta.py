"""Meta-learning update rules: task adaptation, family meta-finetuning,
learning-to-meta-learn (exact and first-order), MAML, pretraining, oracle.

Models are anything with ``loss(params, x, y) -> Expr`` returning one loss
per task for parameters of shape ``batch + (P,)``; :class:`maltml.model.MLP`
is the one used in experiments. All per-task and per-family work is carried
along leading array axes, so one call builds a single graph for the whole
batch and sums in a fixed order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Expr, NonFiniteError
from .model import ParamVector
from .tasks import FamilyBatch, TaskBatch

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class StepSizes:
    alpha: float = 0.001   # inner task step
    beta: float = 0.01     # family meta step
    gamma: float = 0.001   # goal-task fine-tune step
    eta: float = 0.001     # outer (Adam) rate

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "eta"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")


@dataclass(frozen=True)
class LoopCounts:
    r: int = 1        # task gradient steps inside U
    m: int = 1        # meta steps inside V
    r_eval: int = 10  # goal fine-tune steps at evaluation
    m_fo: int = 5     # first-order meta steps

    def __post_init__(self):
        if self.r < 1 or self.m < 1:
            raise ValueError("r and m must be at least 1")
        if self.r_eval < 0:
            raise ValueError("r_eval must be non-negative")
        if self.m_fo < 1:
            raise ValueError("m_fo must be at least 1")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    layout: tuple = field(default=())

    @classmethod
    def zeros(cls, params: ParamVector) -> "AdamState":
        n = len(params)
        return cls(np.zeros(n), np.zeros(n), 0, params.layout)


def _as_entries(x) -> np.ndarray:
    return np.asarray(getattr(x, "entries", x), dtype=np.float64)


def adam_update(params: ParamVector, grads, state: AdamState, eta: float,
                beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                eps: float = ADAM_EPS) -> tuple[ParamVector, AdamState]:
    """One bias-corrected Adam step. Inputs are not modified."""
    if isinstance(grads, ParamVector) and grads.layout != params.layout:
        raise ValueError("gradient layout differs from parameter layout")
    if state.layout and state.layout != params.layout:
        raise ValueError("optimizer state layout differs from parameter layout")
    g = _as_entries(grads)
    if g.shape != params.entries.shape:
        raise ValueError(f"gradient has shape {g.shape}, parameters {params.entries.shape}")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * g
    v = beta2 * state.v + (1 - beta2) * g * g
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    new = params.entries - eta * m_hat / (np.sqrt(v_hat) + eps)
    return params.with_entries(new), AdamState(m, v, t, params.layout)


# -- inner updates ------------------------------------------------------------

def _work_leaf(theta: Expr, create_graph: bool) -> Expr:
    # without create_graph we only need gradients at the current point
    if create_graph and theta.requires_grad:
        return theta
    return ad.leaf(theta.value)


def _expand(theta: Expr, n: int) -> Expr:
    """batch + (P,) -> batch + (n, P)."""
    shape = theta.shape[:-1] + (1, theta.shape[-1])
    return ad.broadcast_to(ad.reshape(theta, shape), theta.shape[:-1] + (n, theta.shape[-1]))


def task_adapt(model, theta: Expr, support_x, support_y, alpha: float, r: int = 1,
               create_graph: bool = False) -> Expr:
    """r steps of theta <- theta - alpha * grad L_support(theta), per task in the batch.

    With ``create_graph`` the result stays differentiable w.r.t. the input theta;
    otherwise it is a constant.
    """
    if np.asarray(support_y).shape[-1] == 0:
        raise ValueError("task_adapt needs a non-empty support set")
    if not isinstance(theta, Expr):
        theta = ad.const(_as_entries(theta))
    for _ in range(r):
        theta = _work_leaf(theta, create_graph)
        loss = ad.sum(model.loss(theta, support_x, support_y))
        if not np.isfinite(loss.value):
            raise NonFiniteError(f"task_adapt: support loss is {loss.item()}")
        (g,) = ad.grad(loss, [theta], create_graph=create_graph)
        theta = ad.sub(theta, ad.scalar_mul(alpha, g))
    return theta if create_graph else ad.detach(theta)


def family_meta_finetune(model, theta: Expr, meta: TaskBatch, alpha: float, beta: float,
                         r: int = 1, m: int = 1, create_graph: bool = False) -> Expr:
    """m steps of theta <- theta - beta * grad sum_i L_query_i(U_i(theta)).

    ``theta`` has shape ``batch + (P,)`` and ``meta`` shape ``batch + (L,)``:
    one meta-finetune per family in the batch. The inner adaptation is always
    differentiated through; ``create_graph`` controls whether the result is
    differentiable w.r.t. the input theta.
    """
    if not isinstance(theta, Expr):
        theta = ad.const(_as_entries(theta))
    n_tasks = meta.shape[-1]
    for _ in range(m):
        theta = _work_leaf(theta, create_graph)
        adapted = task_adapt(model, _expand(theta, n_tasks), meta.support_x, meta.support_y,
                             alpha, r, create_graph=True)
        loss = ad.sum(model.loss(adapted, meta.query_x, meta.query_y))
        if not np.isfinite(loss.value):
            raise NonFiniteError(f"family_meta_finetune: query loss is {loss.item()}")
        (g,) = ad.grad(loss, [theta], create_graph=create_graph)
        theta = ad.sub(theta, ad.scalar_mul(beta, g))
    return theta if create_graph else ad.detach(theta)


def family_meta_finetune_first_order(model, theta, meta: TaskBatch, alpha: float, beta: float,
                                     r: int = 1, m: int = 2) -> np.ndarray:
    """First-order meta-finetuning: the query gradient is taken at the adapted
    parameters and applied to theta as if U were the identity map."""
    theta = np.array(_as_entries(theta))
    n_tasks = meta.shape[-1]
    for _ in range(m):
        tasks = np.broadcast_to(theta[..., None, :], theta.shape[:-1] + (n_tasks, theta.shape[-1]))
        adapted = task_adapt(model, ad.const(tasks), meta.support_x, meta.support_y, alpha, r)
        point = ad.leaf(adapted.value)
        loss = ad.sum(model.loss(point, meta.query_x, meta.query_y))
        if not np.isfinite(loss.value):
            raise NonFiniteError(f"first-order meta-finetune: query loss is {loss.item()}")
        (g,) = ad.grad(loss, [point])
        theta = theta - beta * g.value.sum(axis=-2)
    return theta


# -- outer objectives ---------------------------------------------------------

def maltml_objective(model, theta: Expr, batch: FamilyBatch, sizes: StepSizes,
                     loops: LoopCounts) -> Expr:
    """sum_d sum_c L_c(U^{r,gamma}_c(V^{m,beta}_d(theta))) on held-out goal-task samples."""
    n_fam, n_goal = batch.goal.shape
    fam = ad.broadcast_to(theta, (n_fam, theta.shape[-1]))
    fam = family_meta_finetune(model, fam, batch.meta, sizes.alpha, sizes.beta,
                               loops.r, loops.m, create_graph=True)
    goal = task_adapt(model, _expand(fam, n_goal), batch.goal.support_x, batch.goal.support_y,
                      sizes.gamma, loops.r, create_graph=True)
    return ad.sum(model.loss(goal, batch.goal.query_x, batch.goal.query_y))


def maml_objective(model, theta: Expr, tasks: TaskBatch, alpha: float, r: int = 1) -> Expr:
    """sum_i L_query_i(U^{r,alpha}_i(theta))."""
    n_tasks = tasks.shape[0]
    adapted = task_adapt(model, ad.broadcast_to(theta, (n_tasks, theta.shape[-1])),
                         tasks.support_x, tasks.support_y, alpha, r, create_graph=True)
    return ad.sum(model.loss(adapted, tasks.query_x, tasks.query_y))


def pooled(tasks: TaskBatch) -> tuple[np.ndarray, np.ndarray]:
    """Support and query samples of each task concatenated into one set."""
    return (np.concatenate([tasks.support_x, tasks.query_x], axis=-2),
            np.concatenate([tasks.support_y, tasks.query_y], axis=-1))


def pretrain_objective(model, theta: Expr, tasks: TaskBatch) -> Expr:
    """Plain regression: sum over tasks of the MSE on each task's pooled samples."""
    x, y = pooled(tasks)
    n_tasks = tasks.shape[0]
    return ad.sum(model.loss(ad.broadcast_to(theta, (n_tasks, theta.shape[-1])), x, y))


def oracle_inputs(x, amplitudes, phases) -> np.ndarray:
    """(x, amplitude, phase) rows; x has shape batch + (N, 1), the others batch."""
    x = np.asarray(x, dtype=np.float64)
    a = np.broadcast_to(np.asarray(amplitudes, dtype=np.float64)[..., None, None], x.shape)
    j = np.broadcast_to(np.asarray(phases, dtype=np.float64)[..., None, None], x.shape)
    return np.concatenate([x, a, j], axis=-1)


def oracle_objective(model, theta: Expr, tasks: TaskBatch) -> Expr:
    x, y = pooled(tasks)
    n_tasks = tasks.shape[0]
    inputs = oracle_inputs(x, tasks.amplitudes, tasks.phases)
    return ad.sum(model.loss(ad.broadcast_to(theta, (n_tasks, theta.shape[-1])), inputs, y))


def oracle_predict(model, params: ParamVector, x, amplitude: float, phase: float) -> np.ndarray:
    """Oracle predictions for the task (amplitude, phase); no adaptation involved."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    return model.predict(params, oracle_inputs(x, amplitude, phase))


# -- outer steps ----------------------------------------------------------------

def value_and_grad(objective, theta: ParamVector, *args) -> tuple[float, np.ndarray]:
    """Evaluate ``objective(theta_expr, *args)`` and its gradient w.r.t. theta."""
    x = ad.leaf(theta.entries)
    out = objective(x, *args)
    if not np.isfinite(out.value):
        raise NonFiniteError(f"outer loss is {out.item()}")
    (g,) = ad.grad(out, [x])
    if not np.all(np.isfinite(g.value)):
        raise NonFiniteError("outer gradient has non-finite entries")
    return out.item(), g.value


def _adam_step(objective, theta, adam, eta, *args):
    loss, g = value_and_grad(objective, theta, *args)
    theta, adam = adam_update(theta, g, adam, eta)
    return theta, adam, loss


def maltml_outer_step(model, theta: ParamVector, batch: FamilyBatch, sizes: StepSizes,
                      loops: LoopCounts, adam: AdamState):
    """One learning-to-meta-learn update. Returns (theta, adam, mean goal-task loss).

    The outer gradient flows through goal fine-tuning and family
    meta-finetuning, i.e. it is third order in theta. Raises
    :class:`NonFiniteError` without touching ``adam`` if the loss or gradient
    is not finite.
    """
    def objective(x):
        return maltml_objective(model, x, batch, sizes, loops)

    theta, adam, loss = _adam_step(objective, theta, adam, sizes.eta)
    return theta, adam, loss / batch.goal.amplitudes.size


def maltml_firstorder_step(model, theta: ParamVector, batch: FamilyBatch, sizes: StepSizes,
                           loops: LoopCounts, eta: float | None = None):
    """theta <- theta + eta * sum_d (theta'_d - theta) with first-order meta-finetuning.

    Returns (theta, loss) where loss is the mean goal-task MSE on held-out
    samples evaluated at the meta-finetuned parameters, without goal fine-tuning.
    """
    if loops.m_fo < 2:
        raise ValueError("the first-order variant needs m_fo >= 2 meta steps")
    eta = sizes.eta if eta is None else eta
    n_fam = len(batch)
    fam = np.tile(theta.entries, (n_fam, 1))
    fam = family_meta_finetune_first_order(model, fam, batch.meta, sizes.alpha, sizes.beta,
                                           loops.r, loops.m_fo)
    goal = np.broadcast_to(fam[:, None, :], batch.goal.shape + (fam.shape[-1],))
    loss = model.loss(ad.const(goal), batch.goal.query_x, batch.goal.query_y).value
    if not (np.all(np.isfinite(fam)) and np.all(np.isfinite(loss))):
        raise NonFiniteError("first-order step produced non-finite values")
    step = (fam - theta.entries).sum(axis=0)
    return theta.with_entries(theta.entries + eta * step), float(loss.mean())


def maml_outer_step(model, theta: ParamVector, tasks: TaskBatch, alpha: float, adam: AdamState,
                    eta: float = 0.001, r: int = 1):
    """Second-order MAML step. Returns (theta, adam, mean query loss)."""
    def objective(x):
        return maml_objective(model, x, tasks, alpha, r)

    theta, adam, loss = _adam_step(objective, theta, adam, eta)
    return theta, adam, loss / tasks.amplitudes.size


def pretrain_step(model, theta: ParamVector, tasks: TaskBatch, adam: AdamState, eta: float = 0.001):
    def objective(x):
        return pretrain_objective(model, x, tasks)

    theta, adam, loss = _adam_step(objective, theta, adam, eta)
    return theta, adam, loss / tasks.amplitudes.size


def oracle_train_step(model, theta: ParamVector, tasks: TaskBatch, adam: AdamState,
                      eta: float = 0.001):
    if model.spec.input_dim != 3:
        raise ValueError(f"the oracle needs a 3-input model, got input_dim={model.spec.input_dim}")

    def objective(x):
        return oracle_objective(model, x, tasks)

    theta, adam, loss = _adam_step(objective, theta, adam, eta)
    return theta, adam, loss / tasks.amplitudes.size
