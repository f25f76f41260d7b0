"""scikit-learn style wrapper around one trainable stage network."""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..nn import Adam, EncoderDecoder, load_checkpoint, msg_loss, mse_loss, no_grad, save_checkpoint
from ..nn.optim import AdamState
from ..validation import check_batch
from .stages import ablation_variants

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, batch_indices=()):
        super().__init__(message)
        self.batch_indices = list(batch_indices)


class StageEstimator(RegressorMixin, BaseEstimator):
    """Trains an encoder-decoder for one stage (or ablation variant).

    ``fit(X, y)`` takes stacked stage inputs ``(N, C_in, H, W)`` and targets
    ``(N, C_out, H / downscale, W / downscale)``; ``predict`` returns sigmoid
    outputs in (0, 1).  Training draws batches without replacement per epoch
    from a generator seeded with ``seed``, so a fit is reproducible.
    """

    def __init__(self, stage="chroma", widths=(16, 32, 64), iterations=2000, batch_size=8,
                 lr=3e-4, seed=0, mse_weight=1.0, msg_weight=1.0, msg_scales=4,
                 eval_interval=100, activation="silu"):
        self.stage = stage
        self.widths = widths
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.mse_weight = mse_weight
        self.msg_weight = msg_weight
        self.msg_scales = msg_scales
        self.eval_interval = eval_interval
        self.activation = activation

    def _validate_params(self):
        if self.iterations < 0 or self.batch_size < 1 or self.eval_interval < 1:
            raise ValueError("iterations, batch_size and eval_interval must be positive")
        if self.lr <= 0 or self.msg_scales < 1:
            raise ValueError("lr must be positive and msg_scales >= 1")
        if self.seed is None:
            raise ValueError("a seed is mandatory")

    def _build(self):
        spec = ablation_variants(self.stage).with_weights(self.mse_weight, self.msg_weight)
        net = EncoderDecoder(spec.in_channels, spec.out_channels, tuple(self.widths),
                             out_level=spec.out_level, activation=self.activation, seed=self.seed)
        return spec, net

    def _check_X(self, X, spec):
        return check_batch(X, spec.in_channels, multiple_of=2 ** (len(self.widths) - 1))

    def _loss(self, pred, target):
        mse = mse_loss(pred, target)
        total = mse * self.mse_weight
        if self.msg_weight:
            total = total + msg_loss(pred, target, self.msg_scales) * self.msg_weight
        return total, mse

    def fit(self, X, y, X_val=None, y_val=None):
        self._validate_params()
        self.spec_, self.net_ = self._build()
        X = self._check_X(X, self.spec_)
        y = check_batch(y, self.spec_.out_channels, name="y")
        expected = X.shape[-1] // self.spec_.downscale
        if y.shape[0] != X.shape[0] or y.shape[-1] != expected:
            raise ValueError(f"targets {y.shape} do not match inputs {X.shape} at 1/{self.spec_.downscale}")
        if X_val is not None:
            X_val = self._check_X(X_val, self.spec_)
            y_val = check_batch(y_val, self.spec_.out_channels, name="y_val")
        self.n_features_in_ = self.spec_.in_channels
        self.optimizer_ = Adam(self.net_.parameters(), lr=self.lr)
        self.curve_ = []
        self.n_iter_ = 0
        self._train(X, y, X_val, y_val, self.iterations)
        return self

    def partial_fit(self, X, y, iterations, X_val=None, y_val=None):
        """Continue training a fitted estimator for ``iterations`` more steps."""
        check_is_fitted(self, "net_")
        X = self._check_X(X, self.spec_)
        y = check_batch(y, self.spec_.out_channels, name="y")
        self._train(X, y, X_val, y_val, iterations)
        return self

    def _train(self, X, y, X_val, y_val, iterations):
        rng = np.random.default_rng([self.seed, self.n_iter_])
        n = len(X)
        bs = min(self.batch_size, n)
        order = rng.permutation(n)
        cursor = 0
        if X_val is not None and self.n_iter_ == 0:
            self._record(None, X_val, y_val)
        for _ in range(iterations):
            if cursor + bs > n:
                order, cursor = rng.permutation(n), 0
            idx = order[cursor:cursor + bs]
            cursor += bs
            self.optimizer_.zero_grad()
            loss, _ = self._loss(self.net_(X[idx]), y[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss at iteration {self.n_iter_}", idx)
            loss.backward()
            self.optimizer_.step()
            self.n_iter_ += 1
            if self.n_iter_ % self.eval_interval == 0 or self.n_iter_ == self.iterations:
                self._record(value, X_val, y_val)

    def _record(self, train_loss, X_val, y_val):
        row = {"iteration": self.n_iter_, "train_loss": train_loss, "val_loss": None, "val_mse": None}
        if X_val is not None:
            row["val_loss"], row["val_mse"] = self.evaluate(X_val, y_val)
        self.curve_.append(row)
        log.info("%s it=%d train=%s val=%s", self.stage, self.n_iter_, train_loss, row["val_loss"])

    def predict(self, X, batch_size=16):
        check_is_fitted(self, "net_")
        X = self._check_X(X, self.spec_)
        outs = []
        with no_grad():
            for start in range(0, len(X), batch_size):
                outs.append(self.net_(X[start:start + batch_size]).data)
        return np.concatenate(outs)

    def evaluate(self, X, y, batch_size=16):
        """Mean total loss and mean L_mse over ``(X, y)``, batch-weighted."""
        check_is_fitted(self, "net_")
        total = mse = 0.0
        with no_grad():
            for start in range(0, len(X), batch_size):
                xb, yb = X[start:start + batch_size], y[start:start + batch_size]
                loss, m = self._loss(self.net_(xb), yb)
                total += float(loss.data) * len(xb)
                mse += float(m.data) * len(xb)
        return total / len(X), mse / len(X)

    def score(self, X, y):
        """Negative L_mse, so larger is better as scikit-learn expects."""
        X = self._check_X(X, self.spec_)
        y = check_batch(y, self.spec_.out_channels, name="y")
        return -self.evaluate(X, y)[1]

    @property
    def n_params(self):
        check_is_fitted(self, "net_")
        return self.net_.n_params()

    # -- persistence --------------------------------------------------------------

    def save(self, path, include_optimizer=True):
        check_is_fitted(self, "net_")
        meta = {k: _format_param(v) for k, v in self.get_params().items()}
        meta["n_iter"] = self.n_iter_
        state = self.optimizer_.state if include_optimizer else None
        return save_checkpoint(path, self.net_.state_dict(), meta, state)

    @classmethod
    def load(cls, path):
        params, meta, state = load_checkpoint(path)
        est = cls(**{k: _parse_param(k, v) for k, v in meta.items() if k != "n_iter"})
        est.spec_, est.net_ = est._build()
        est.net_.load_state_dict(params)
        est.n_features_in_ = est.spec_.in_channels
        est.optimizer_ = Adam(est.net_.parameters(), lr=est.lr)
        if state is not None:
            est.optimizer_.state = state
        else:
            est.optimizer_.state = AdamState()
        est.n_iter_ = int(meta.get("n_iter", 0))
        est.curve_ = []
        return est


def _format_param(value):
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return value


_INT_PARAMS = {"iterations", "batch_size", "seed", "msg_scales", "eval_interval"}
_FLOAT_PARAMS = {"lr", "mse_weight", "msg_weight"}


def _parse_param(key, value):
    if key == "widths":
        return tuple(int(v) for v in value.split(","))
    if key in _INT_PARAMS:
        return int(value)
    if key in _FLOAT_PARAMS:
        return float(value)
    return value
