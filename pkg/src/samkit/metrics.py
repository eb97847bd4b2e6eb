"""Sharpness diagnostics and numerical checkers for the convergence bounds.

Everything here is a pure function of its inputs: batch-gradient norm
sampling, the gradient-variance identity, Q-Q normality points, and the
full-batch descent bound checker used as a falsification harness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as spstats

from samkit.data import LabeledDataset
from samkit.errors import ConfigurationError, InsufficientDataError
from samkit.models import AnalyticLandscape, Mlp


def _batch_stream(rng: np.random.Generator, n: int, batch_size: int):
    """Endless mini-batch index stream drawn the way training draws them:
    per-epoch shuffles partitioned into full batches (ragged tails dropped,
    so every batch has the same size).  Each batch is marginally a uniform
    subset, and whenever ``batch_size`` divides ``n`` the batch gradients of
    each epoch average to the full gradient exactly."""
    if batch_size == n:
        # a full-size batch has exactly one realization; keep dataset order so
        # its gradient is bitwise identical to the full-dataset gradient
        while True:
            yield np.arange(n)
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield perm[start : start + batch_size]


def full_grad_norm(model: Mlp, w: np.ndarray, dataset: LabeledDataset) -> float:
    """Exact squared norm of the gradient over the whole dataset."""
    _, grad = model.loss_and_grad(w, dataset.X, dataset.y)
    return float(grad @ grad)


def sample_grad_norms(
    model: Mlp,
    w: np.ndarray,
    dataset: LabeledDataset,
    batch_size: int,
    n_batches: int,
    seed: int = 0,
) -> np.ndarray:
    """Squared gradient norms of ``n_batches`` independently sampled batches
    at a fixed parameter vector."""
    if n_batches < 2:
        raise InsufficientDataError("need at least 2 batches")
    if not 1 <= batch_size <= dataset.n:
        raise ConfigurationError("batch size must lie in [1, dataset size]")
    stream = _batch_stream(np.random.default_rng(seed), dataset.n, batch_size)
    out = np.empty(n_batches)
    for i in range(n_batches):
        idx = next(stream)
        _, grad = model.loss_and_grad(w, dataset.X[idx], dataset.y[idx])
        out[i] = grad @ grad
    return out


@dataclass(frozen=True)
class VarianceReport:
    """Both sides of the gradient-variance identity
    ``E||grad_B - grad_D||^2 = E||grad_B||^2 - ||grad_D||^2``
    estimated from the same Monte-Carlo batch draw."""

    n_batches: int
    mean_batch_grad_sq: float   # E||grad_B||^2 estimate
    full_grad_sq: float         # exact ||grad_D||^2
    direct_variance: float      # E||grad_B - grad_D||^2 estimate
    se_direct: float            # MC standard error of direct_variance
    se_gap: float               # MC standard error of the per-batch side gap

    @property
    def variance(self) -> float:
        """Norm-difference estimate of the gradient variance."""
        return self.mean_batch_grad_sq - self.full_grad_sq

    @property
    def identity_gap(self) -> float:
        return self.direct_variance - self.variance

    def identity_holds(self, n_se: float = 2.0) -> bool:
        """Gap within ``n_se`` MC standard errors of the direct estimate."""
        return abs(self.identity_gap) <= n_se * self.se_direct


def gradient_variance(
    model: Mlp,
    w: np.ndarray,
    dataset: LabeledDataset,
    batch_size: int,
    n_batches: int,
    seed: int = 0,
) -> VarianceReport:
    """Monte-Carlo gradient variance at ``w`` with both estimators.

    Batches are uniform size-``batch_size`` subsets without replacement, so
    the batch gradient is an unbiased estimate of the full gradient and the
    identity holds in expectation.
    """
    if n_batches < 2:
        raise InsufficientDataError("need at least 2 batches")
    if not 1 <= batch_size <= dataset.n:
        raise ConfigurationError("batch size must lie in [1, dataset size]")
    _, full_grad = model.loss_and_grad(w, dataset.X, dataset.y)
    full_sq = float(full_grad @ full_grad)
    stream = _batch_stream(np.random.default_rng(seed), dataset.n, batch_size)
    batch_sq = np.empty(n_batches)
    direct = np.empty(n_batches)
    for i in range(n_batches):
        idx = next(stream)
        _, grad = model.loss_and_grad(w, dataset.X[idx], dataset.y[idx])
        batch_sq[i] = grad @ grad
        dev = grad - full_grad
        direct[i] = dev @ dev
    gap = direct - (batch_sq - full_sq)
    return VarianceReport(
        n_batches=n_batches,
        mean_batch_grad_sq=float(batch_sq.mean()),
        full_grad_sq=full_sq,
        direct_variance=float(direct.mean()),
        se_direct=float(direct.std(ddof=1) / np.sqrt(n_batches)),
        se_gap=float(gap.std(ddof=1) / np.sqrt(n_batches)),
    )


@dataclass(frozen=True)
class QqReport:
    """Standardized order statistics against standard-normal quantiles."""

    sample_quantiles: np.ndarray
    theoretical_quantiles: np.ndarray
    correlation: float


def qq_points(samples: Sequence[float]) -> QqReport:
    """Q-Q diagnostic: sort and standardize the samples, pair them with
    normal quantiles at plotting positions ``(i - 0.5) / n``, and report the
    Pearson correlation of the pairs (closer to 1 means closer to normal)."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 20:
        raise InsufficientDataError(f"need at least 20 samples, got {x.size}")
    std = x.std(ddof=1)
    if std == 0.0:
        raise InsufficientDataError("samples are constant; Q-Q undefined")
    ordered = np.sort((x - x.mean()) / std)
    positions = (np.arange(1, x.size + 1) - 0.5) / x.size
    theo = spstats.norm.ppf(positions)
    corr = float(np.corrcoef(ordered, theo)[0, 1])
    return QqReport(ordered, theo, corr)


@dataclass(frozen=True)
class BoundCheck:
    """Outcome of the full-batch descent-bound inequality."""

    left: float
    right: float
    satisfied: bool
    params: dict = field(default_factory=dict)


def _xi_values(traces) -> np.ndarray:
    xis = np.asarray([getattr(tr, "xi", tr) for tr in traces], dtype=np.float64)
    if xis.size == 0:
        raise ConfigurationError("empty indicator sequence")
    if not np.all((xis == 0.0) | (xis == 1.0)):
        raise ConfigurationError("indicators must be 0 or 1")
    return xis


def run_full_batch(
    landscape: AnalyticLandscape,
    w0: np.ndarray,
    lr: float,
    rho: float,
    xis: Sequence[int],
) -> np.ndarray:
    """Full-batch trajectory with a prescribed SAM/ERM indicator sequence.

    SAM steps use the raw perturbation ``w + rho * grad(w)``, which is the
    step the full-batch bound is stated for.  Returns the (T+1, dim) array
    of iterates.
    """
    xis = _xi_values(xis)
    w = np.asarray(w0, dtype=np.float64).copy()
    trajectory = [w.copy()]
    for xi in xis:
        g = landscape.grad(w)
        direction = landscape.grad(w + rho * g) if xi else g
        w = w - lr * direction
        trajectory.append(w.copy())
    return np.asarray(trajectory)


def check_gd_bound(
    trajectory: np.ndarray,
    landscape: AnalyticLandscape,
    lr: float,
    rho: float,
    traces,
) -> BoundCheck:
    """Evaluate the full-batch descent bound on a recorded trajectory.

    With ``rho < 1/(2 beta)`` and ``lr < 1/beta`` (checked as preconditions),
    the smallest squared gradient norm among ``w_0 .. w_{T-1}`` must not
    exceed ``(L(w_0) - L(w_T)) / (T lr (1 - beta lr / 2 - beta rho zeta))``
    where ``zeta`` is the fraction of SAM steps.  The inequality is a proved
    theorem; a violation indicates an implementation bug.
    """
    beta = landscape.beta
    if rho >= 1.0 / (2.0 * beta):
        raise ConfigurationError(f"precondition rho < 1/(2 beta) violated: {rho} vs {1/(2*beta)}")
    if lr >= 1.0 / beta:
        raise ConfigurationError(f"precondition lr < 1/beta violated: {lr} vs {1/beta}")
    xis = _xi_values(traces)
    trajectory = np.asarray(trajectory, dtype=np.float64)
    T = xis.size
    if trajectory.shape[0] != T + 1:
        raise ConfigurationError(
            f"trajectory has {trajectory.shape[0]} points, expected T+1={T + 1}"
        )
    zeta = float(xis.mean())
    grad_sq = np.array([float(np.linalg.norm(landscape.grad(w)) ** 2) for w in trajectory[:-1]])
    left = float(grad_sq.min())
    loss_start = landscape.value(trajectory[0])
    loss_end = landscape.value(trajectory[-1])
    denom = T * lr * (1.0 - beta * lr / 2.0 - beta * rho * zeta)
    right = (loss_start - loss_end) / denom
    return BoundCheck(
        left=left,
        right=float(right),
        satisfied=left <= right,
        params={
            "beta": beta,
            "lr": lr,
            "rho": rho,
            "zeta": zeta,
            "T": T,
            "loss_start": loss_start,
            "loss_end": loss_end,
        },
    )


def convergence_trend(full_grad_norms: Sequence[float], fraction: float = 0.1) -> bool:
    """True when the running minimum of the per-epoch full-gradient norms
    ends below ``fraction`` of the first epoch's value."""
    values = np.asarray(full_grad_norms, dtype=np.float64)
    if values.size < 5:
        raise InsufficientDataError("need at least 5 epochs of measurements")
    return bool(values.min() <= fraction * values[0])
