"""The SAM/ERM optimizer family with the adaptive sharpness trigger.

Six algorithms share one step loop and differ only in how they decide, per
iteration, between the plain descent branch (one gradient) and the
sharpness-aware branch (two gradients):

* ``erm``       never takes the SAM branch.
* ``sam``       always takes it.
* ``ss-sam``    takes it on a Bernoulli(p) draw.
* ``looksam``   takes it every ``period`` steps and, in between, reuses the
                orthogonal component of the last SAM direction.
* ``ae-sam``    takes it when the squared batch-gradient norm is at least
                ``mu + c_t * sigma`` under running EMA statistics.
* ``ae-looksam`` same trigger, with LookSAM-style direction reuse on the
                descent branch.

The EMA statistics are maintained on every step for every algorithm (the
cost is one vector norm, no extra gradients) but only consulted by the
``ae-*`` variants.  The threshold ``c_t`` ramps linearly from ``lambda2`` at
step 0 to ``lambda1`` at the final step, so the trigger loosens as training
approaches convergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from samkit.data import LabeledDataset, minibatch_iter
from samkit.errors import (
    ConfigurationError,
    DegenerateGradient,
    NumericError,
    UsageError,
)

ALGORITHMS = ("erm", "sam", "ss-sam", "looksam", "ae-sam", "ae-looksam")
PERTURB_MODES = ("normalized", "raw")
LR_SCHEDULES = ("constant", "cosine")

_LOOKSAM_FAMILY = frozenset({"looksam", "ae-looksam"})
_ZERO_NORM = 1e-12

# EMA state before the first observation.
INITIAL_MU = 0.0
INITIAL_SIGMA2 = math.exp(-10.0)


@dataclass(frozen=True)
class GradNormStats:
    """EMA mean and variance of the squared stochastic gradient norm.

    ``decay`` is the forgetting rate: at 1.0 the state never moves, at 0.0
    the mean equals the latest observation and the variance collapses to 0.
    """

    mu: float = INITIAL_MU
    sigma2: float = INITIAL_SIGMA2
    decay: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ConfigurationError("EMA decay must lie in [0, 1]")
        if self.sigma2 < 0.0:
            raise ConfigurationError("variance estimate cannot be negative")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


def ema_update(stats: GradNormStats, g2: float) -> GradNormStats:
    """One EMA step.  The variance update deviates from the textbook form on
    purpose: it measures the new observation against the *updated* mean."""
    if g2 < 0.0:
        raise ValueError("squared gradient norm cannot be negative")
    mu = stats.decay * stats.mu + (1.0 - stats.decay) * g2
    residual = g2 - mu  # x*x overflows to inf, unlike x**2 which raises
    sigma2 = stats.decay * stats.sigma2 + (1.0 - stats.decay) * (residual * residual)
    return GradNormStats(mu, sigma2, stats.decay)


@dataclass(frozen=True)
class ThresholdSchedule:
    """Linear ramp of the trigger threshold: ``lambda2`` at step 0 down (or
    up) to ``lambda1`` at step ``total_steps``."""

    lambda1: float
    lambda2: float
    total_steps: int

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ConfigurationError("schedule needs a positive step count")


def threshold_at(schedule: ThresholdSchedule, t: int) -> float:
    if not 0 <= t <= schedule.total_steps:
        raise ConfigurationError(
            f"step {t} outside schedule range [0, {schedule.total_steps}]"
        )
    frac = t / schedule.total_steps
    return frac * schedule.lambda1 + (1.0 - frac) * schedule.lambda2


def sam_trigger(g2: float, stats: GradNormStats, c: float) -> bool:
    """True when the observed squared norm clears the adaptive threshold.
    Inclusive comparison; c -> -inf recovers SAM, c -> +inf recovers ERM."""
    return g2 >= stats.mu + c * stats.sigma


def ss_sam_trigger(rng: np.random.Generator, p: float) -> bool:
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError("Bernoulli probability must lie in [0, 1]")
    return bool(rng.random() < p)


def looksam_trigger(t: int, period: int) -> bool:
    if period < 1:
        raise ConfigurationError("period must be at least 1")
    return t % period == 0


def sam_perturb(g: np.ndarray, rho: float, mode: str = "normalized") -> np.ndarray:
    """Ascent perturbation: ``rho * g / ||g||`` (normalized) or ``rho * g`` (raw)."""
    if rho <= 0.0:
        raise ConfigurationError("perturbation radius must be positive")
    if mode not in PERTURB_MODES:
        raise ConfigurationError(f"unknown perturbation mode {mode!r}")
    if mode == "raw":
        return rho * g
    norm = float(np.linalg.norm(g))
    if norm < _ZERO_NORM:
        raise DegenerateGradient("gradient norm ~ 0: ascent direction undefined")
    return (rho / norm) * g


def looksam_decompose(g: np.ndarray, g_s: np.ndarray) -> np.ndarray:
    """Component of the SAM direction orthogonal to the plain gradient:
    ``g_v = g_s - (g . g_s / ||g||^2) g``."""
    g2 = float(g @ g)
    if math.sqrt(g2) < _ZERO_NORM:
        raise DegenerateGradient("gradient norm ~ 0: projection undefined")
    return g_s - (float(g @ g_s) / g2) * g


def looksam_compose(g: np.ndarray, g_v: np.ndarray | None, alpha: float) -> np.ndarray:
    """Approximate SAM direction from a cached orthogonal component:
    ``g + alpha (||g|| / ||g_v||) g_v``, falling back to ``g`` when the cached
    component is missing or numerically zero (the scaling would diverge)."""
    if g_v is None:
        return g
    nv = float(np.linalg.norm(g_v))
    if nv < _ZERO_NORM:
        return g
    return g + alpha * (float(np.linalg.norm(g)) / nv) * g_v


@dataclass(frozen=True)
class StepTrace:
    """Per-step record: branch indicator, loss, squared gradient norm, and
    the trigger state that was in force."""

    step: int
    xi: int
    loss: float
    grad_sq: float
    c: float
    mu: float
    sigma2: float


def sam_fraction(traces: Sequence[StepTrace]) -> float:
    """%SAM: 100 x (number of SAM-branch steps) / (number of steps)."""
    return 100.0 * sam_zeta(traces)


def sam_zeta(traces: Sequence[StepTrace]) -> float:
    """Fraction of SAM-branch steps in [0, 1]."""
    if not traces:
        raise ConfigurationError("no traces to aggregate")
    return sum(tr.xi for tr in traces) / len(traces)


class Optimizer:
    """Single-owner optimizer state plus the step rule.

    ``objective`` must expose ``loss_and_grad(w, *batch) -> (loss, grad)``
    over flat float64 parameter vectors.  ``step`` mutates the internal
    state (EMA statistics, step counter, cached LookSAM direction, gradient
    evaluation count) and returns the new parameter vector with a trace.
    Independent runs must use independent Optimizer instances; the Bernoulli
    stream is a per-instance counter-based Philox generator.
    """

    def __init__(
        self,
        objective,
        algorithm: str,
        lr: float,
        total_steps: int,
        rho: float = 0.05,
        alpha: float = 0.6,
        period: int = 5,
        bernoulli_p: float = 0.5,
        ema_decay: float = 0.9,
        lambda1: float = -1.0,
        lambda2: float = 1.0,
        perturb_mode: str = "normalized",
        lr_schedule: str = "constant",
        seed: int = 0,
    ):
        if algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {algorithm!r}")
        if lr <= 0.0:
            raise ConfigurationError("learning rate must be positive")
        if rho <= 0.0:
            raise ConfigurationError("perturbation radius must be positive")
        if period < 1:
            raise ConfigurationError("period must be at least 1")
        if not 0.0 <= bernoulli_p <= 1.0:
            raise ConfigurationError("Bernoulli probability must lie in [0, 1]")
        if perturb_mode not in PERTURB_MODES:
            raise ConfigurationError(f"unknown perturbation mode {perturb_mode!r}")
        if lr_schedule not in LR_SCHEDULES:
            raise ConfigurationError(f"unknown lr schedule {lr_schedule!r}")
        self.objective = objective
        self.algorithm = algorithm
        self.lr = float(lr)
        self.rho = float(rho)
        self.alpha = float(alpha)
        self.period = int(period)
        self.bernoulli_p = float(bernoulli_p)
        self.perturb_mode = perturb_mode
        self.lr_schedule = lr_schedule
        self.schedule = ThresholdSchedule(lambda1, lambda2, int(total_steps))
        self.stats = GradNormStats(decay=ema_decay)
        self.t = 0
        self.grad_evals = 0
        self.reused_direction: np.ndarray | None = None
        self._rng = np.random.Generator(np.random.Philox(key=seed))

    @property
    def total_steps(self) -> int:
        return self.schedule.total_steps

    def lr_at(self, t: int) -> float:
        if self.lr_schedule == "cosine":
            return self.lr * 0.5 * (1.0 + math.cos(math.pi * t / self.total_steps))
        return self.lr

    def _evaluate(self, w: np.ndarray, batch: tuple) -> tuple[float, np.ndarray]:
        loss, grad = self.objective.loss_and_grad(w, *batch)
        self.grad_evals += 1
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite loss or gradient at step {self.t}")
        return float(loss), grad

    def _wants_sam(self, g2: float, c: float) -> bool:
        a = self.algorithm
        if a == "erm":
            return False
        if a == "sam":
            return True
        if a == "ss-sam":
            return ss_sam_trigger(self._rng, self.bernoulli_p)
        if a == "looksam":
            return looksam_trigger(self.t, self.period)
        take = sam_trigger(g2, self.stats, c)
        if a == "ae-looksam" and self.reused_direction is None and not take:
            # The reuse branch needs a cached direction; force one SAM step
            # until the first decomposition has happened.
            return True
        return take

    def step(self, w: np.ndarray, batch: tuple = ()) -> tuple[np.ndarray, StepTrace]:
        if self.t >= self.total_steps:
            raise UsageError("optimizer already ran its configured step budget")
        w = np.asarray(w, dtype=np.float64)
        loss, g = self._evaluate(w, batch)
        g2 = float(g @ g)
        # Statistics update precedes the trigger: the threshold is compared
        # against the state that already saw this step's observation.
        self.stats = ema_update(self.stats, g2)
        if not math.isfinite(g2) or not math.isfinite(self.stats.sigma2):
            raise NumericError(f"gradient norm statistics overflowed at step {self.t}")
        c = threshold_at(self.schedule, self.t)

        take_sam = self._wants_sam(g2, c)
        if take_sam and math.sqrt(g2) < _ZERO_NORM:
            take_sam = False  # stationary point: no ascent direction, descend plainly

        if take_sam:
            epsilon = sam_perturb(g, self.rho, self.perturb_mode)
            _, g_s = self._evaluate(w + epsilon, batch)
            if self.algorithm in _LOOKSAM_FAMILY:
                self.reused_direction = looksam_decompose(g, g_s)
            direction = g_s
            xi = 1
        else:
            if self.algorithm in _LOOKSAM_FAMILY:
                direction = looksam_compose(g, self.reused_direction, self.alpha)
            else:
                direction = g
            xi = 0

        w_next = w - self.lr_at(self.t) * direction
        trace = StepTrace(self.t, xi, loss, g2, c, self.stats.mu, self.stats.sigma2)
        self.t += 1
        return w_next, trace


def train(
    optimizer: Optimizer,
    w0: np.ndarray,
    dataset: LabeledDataset,
    batch_size: int,
    epochs: int,
    seed: int,
    on_epoch_end: Callable[[int, np.ndarray, list[StepTrace]], None] | None = None,
    trace_sink: list[StepTrace] | None = None,
) -> tuple[np.ndarray, list[StepTrace]]:
    """Run shuffle-and-partition epochs through ``optimizer.step``.

    ``on_epoch_end(epoch, w, traces_so_far)`` runs after each epoch.  The
    optimizer's step budget must cover epochs x batches-per-epoch steps.
    Traces are appended to ``trace_sink`` step by step, so a caller that
    passes its own list keeps the partial record if a step raises.
    """
    w = np.asarray(w0, dtype=np.float64)
    traces = trace_sink if trace_sink is not None else []
    for epoch in range(epochs):
        for X_b, y_b in minibatch_iter(dataset, batch_size, seed, epoch):
            w, trace = optimizer.step(w, (X_b, y_b))
            traces.append(trace)
        if on_epoch_end is not None:
            on_epoch_end(epoch, w, traces)
    return w, traces
