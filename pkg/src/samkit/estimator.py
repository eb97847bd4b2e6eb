"""Scikit-learn estimator facade over the optimizer family.

``SharpnessAwareClassifier`` is a small MLP classifier whose training loop
is one of the six SAM/ERM switching algorithms, so it drops into pipelines,
grid searches, and cross-validation like any other estimator.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from samkit.data import LabeledDataset
from samkit.models import Mlp, MlpSpec
from samkit.optim import Optimizer, sam_fraction, sam_zeta, train


class SharpnessAwareClassifier(ClassifierMixin, BaseEstimator):
    """MLP classifier trained by plain SGD, SAM, or one of the switching
    variants (ss-sam, looksam, ae-sam, ae-looksam).

    Parameters mirror the optimizer: ``lr`` is the SGD step size, ``rho``
    the ascent radius, ``alpha``/``period`` the LookSAM reuse settings,
    ``bernoulli_p`` the ss-sam trial probability, ``ema_decay`` the
    forgetting rate of the gradient-norm statistics, and ``lambda1``/
    ``lambda2`` the endpoints of the trigger-threshold ramp (start of
    training at ``lambda2``, end at ``lambda1``).

    Fitted attributes: ``classes_``, ``coef_`` (flat parameter vector),
    ``sam_fraction_`` (percent of steps that took the SAM branch),
    ``zeta_``, ``loss_curve_`` (per-epoch mean batch loss), ``n_iter_``.
    """

    def __init__(
        self,
        algorithm: str = "ae-sam",
        hidden_layer_sizes: tuple[int, ...] = (64, 64),
        activation: str = "tanh",
        lr: float = 0.1,
        rho: float = 0.05,
        alpha: float = 0.6,
        period: int = 5,
        bernoulli_p: float = 0.5,
        ema_decay: float = 0.9,
        lambda1: float = -1.0,
        lambda2: float = 1.0,
        batch_size: int = 64,
        epochs: int = 50,
        perturb_mode: str = "normalized",
        random_state: int | None = None,
    ):
        self.algorithm = algorithm
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.lr = lr
        self.rho = rho
        self.alpha = alpha
        self.period = period
        self.bernoulli_p = bernoulli_p
        self.ema_decay = ema_decay
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.batch_size = batch_size
        self.epochs = epochs
        self.perturb_mode = perturb_mode
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError(
                "This classifier needs samples of at least 2 classes, "
                f"but the data contains only one class: {self.classes_[0]!r}"
            )
        seed = 0 if self.random_state is None else int(self.random_state)
        n, d = X.shape
        dataset = LabeledDataset(X, y_enc, int(self.classes_.shape[0]), "file")
        widths = (d, *tuple(int(h) for h in self.hidden_layer_sizes), len(self.classes_))
        model = Mlp(MlpSpec(widths, self.activation, "cross-entropy"))
        batch = min(int(self.batch_size), n)
        total = math.ceil(n / batch) * int(self.epochs)
        optimizer = Optimizer(
            model,
            algorithm=self.algorithm,
            lr=self.lr,
            total_steps=total,
            rho=self.rho,
            alpha=self.alpha,
            period=self.period,
            bernoulli_p=self.bernoulli_p,
            ema_decay=self.ema_decay,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            perturb_mode=self.perturb_mode,
            seed=seed,
        )
        loss_curve: list[float] = []
        steps_per_epoch = math.ceil(n / batch)

        def track(_epoch, _w, traces):
            epoch_traces = traces[len(loss_curve) * steps_per_epoch :]
            loss_curve.append(float(np.mean([t.loss for t in epoch_traces])))

        w, traces = train(
            optimizer, model.init_params(seed), dataset, batch, int(self.epochs), seed,
            on_epoch_end=track,
        )
        self._model = model
        self.coef_ = w
        self.loss_curve_ = loss_curve
        self.sam_fraction_ = sam_fraction(traces)
        self.zeta_ = sam_zeta(traces)
        self.n_iter_ = len(traces)
        return self

    def _logits(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return self._model.logits(self.coef_, X)

    def decision_function(self, X):
        z = self._logits(X)
        if z.shape[1] == 2:
            return z[:, 1] - z[:, 0]  # binary convention: one score column
        return z

    def predict_proba(self, X):
        z = self._logits(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        z = self._logits(X)
        return self.classes_[z.argmax(axis=1)]
