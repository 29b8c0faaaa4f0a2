"""scikit-learn compatible regressors built on the from-scratch network engine."""
from __future__ import annotations

from pathlib import Path
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import io, selfaug
from .models import SVBRDF_BRANCHES, MLPSpec, NetworkSpec, build_brdfnet, build_mlp, build_svbrdfnet
from .neural import Adam, LayerGraph, mse_loss


def _check_images(X, channels: Optional[int] = None) -> np.ndarray:
    X = check_array(X, allow_nd=True, dtype=np.float32, ensure_2d=False)
    if X.ndim != 4:
        raise ValueError(f"expected images shaped (N, C, H, W), got {X.shape}")
    if channels is not None and X.shape[1] != channels:
        raise ValueError(f"expected {channels} channels, got {X.shape[1]}")
    return X


class _TargetScaler:
    """Affine map of each target column onto [-1, 1]."""

    def __init__(self, low, high):
        self.low = np.asarray(low, dtype=np.float64)
        self.span = np.asarray(high, dtype=np.float64) - self.low
        self.span[self.span <= 0] = 1.0

    def forward(self, y):
        return (2.0 * (np.asarray(y, dtype=np.float64) - self.low) / self.span - 1.0).astype(np.float32)

    def inverse(self, z):
        return (np.asarray(z, dtype=np.float64) + 1.0) * 0.5 * self.span + self.low


class SelfAugmentedRegressor(RegressorMixin, BaseEstimator):
    """Parameter regressor trained with optional self-augmentation.

    Image inputs ``(N, C, H, W)`` get the BRDF-net layout (conv/pool encoder
    with a fully connected head); vector inputs ``(N, d)`` get an MLP.

    Parameters
    ----------
    forward_model : object, optional
        Renders parameters back to inputs (see :mod:`sabrdf.selfaug`). Needed
        when ``fit`` receives unlabeled data; its ``domain`` also fixes the
        target scaling.
    init_epochs, total_epochs : int
        Labeled-only warm-up length and total training length.
    steps_per_epoch : int, optional
        Mini-batches per epoch; default is one pass over the data.
    """

    def __init__(
        self,
        forward_model=None,
        encoder_widths=(16, 32, 64),
        fc_hidden=1024,
        hidden=(32, 32),
        init_epochs=10,
        total_epochs=20,
        batch_size=32,
        unlabeled_batch_size=None,
        steps_per_epoch=None,
        learning_rate=1e-3,
        lr_decay_epoch=None,
        lr_decay_factor=0.1,
        divergence_factor=10.0,
        seed=0,
    ):
        self.forward_model = forward_model
        self.encoder_widths = encoder_widths
        self.fc_hidden = fc_hidden
        self.hidden = hidden
        self.init_epochs = init_epochs
        self.total_epochs = total_epochs
        self.batch_size = batch_size
        self.unlabeled_batch_size = unlabeled_batch_size
        self.steps_per_epoch = steps_per_epoch
        self.learning_rate = learning_rate
        self.lr_decay_epoch = lr_decay_epoch
        self.lr_decay_factor = lr_decay_factor
        self.divergence_factor = divergence_factor
        self.seed = seed

    # -- construction -------------------------------------------------------
    def _validate_X(self, X):
        X = check_array(X, allow_nd=True, dtype=np.float32)
        if X.ndim not in (2, 4):
            raise ValueError(f"X must be (N, d) vectors or (N, C, H, W) images, got {X.shape}")
        return X

    def _build(self, X, n_outputs: int) -> LayerGraph:
        if X.ndim == 4:
            _, c, h, w = X.shape
            if h != w:
                raise ValueError("images must be square")
            self.spec_ = NetworkSpec(
                input_size=h,
                in_channels=c,
                encoder_widths=tuple(self.encoder_widths),
                fc_hidden=self.fc_hidden,
                n_outputs=n_outputs,
                seed=self.seed,
            )
            return build_brdfnet(self.spec_)
        self.spec_ = MLPSpec(n_inputs=X.shape[1], hidden=tuple(self.hidden), n_outputs=n_outputs, seed=self.seed)
        return build_mlp(self.spec_)

    def train_config(self) -> selfaug.TrainConfig:
        return selfaug.TrainConfig(
            init_epochs=self.init_epochs,
            total_epochs=self.total_epochs,
            batch_size=self.batch_size,
            unlabeled_batch_size=self.unlabeled_batch_size,
            steps_per_epoch=self.steps_per_epoch,
            learning_rate=self.learning_rate,
            lr_decay_epoch=self.lr_decay_epoch,
            lr_decay_factor=self.lr_decay_factor,
            seed=self.seed,
            divergence_factor=self.divergence_factor,
        )

    def set_learning_rate(self, lr: float):
        self.optimizer_.lr = lr

    def initialize(self, X, y) -> "SelfAugmentedRegressor":
        """Build the network, optimizer and target scaling without training."""
        X = self._validate_X(X)
        y = np.asarray(y, dtype=np.float64)
        self._1d_target = y.ndim == 1
        y = y.reshape(len(y), -1)
        self.n_outputs_ = y.shape[1]
        self.net_ = self._build(X, self.n_outputs_)
        self.optimizer_ = Adam(self.learning_rate)
        if self.forward_model is not None and hasattr(self.forward_model, "domain"):
            low, high = self.forward_model.domain
        else:
            low, high = y.min(axis=0), y.max(axis=0)
        self.scaler_ = _TargetScaler(low, high)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    # -- training protocol used by selfaug.train ------------------------------
    def train_step(self, X, y) -> float:
        y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
        pred = self.net_.forward(np.asarray(X, dtype=np.float32), train=True)
        loss, grad = mse_loss(pred, self.scaler_.forward(y))
        self.net_.zero_grad()
        self.net_.backward(grad)
        self.optimizer_.step(self.net_.parameters(), self.net_.gradients())
        return loss

    def param_loss(self, X, y) -> float:
        """Eval-mode MSE in the scaled target space."""
        y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
        return mse_loss(self._forward_eval(X), self.scaler_.forward(y))[0]

    def _forward_eval(self, X, chunk: int = 256):
        X = np.asarray(X, dtype=np.float32)
        return np.concatenate([self.net_.forward(X[i : i + chunk], train=False) for i in range(0, len(X), chunk)])

    # -- sklearn API ---------------------------------------------------------
    def fit(self, X, y, X_unlabeled=None, evaluate: Optional[Callable] = None, log_path=None):
        """Train on ``(X, y)``; with ``X_unlabeled`` the interleaved phase self-augments."""
        X = self._validate_X(X)
        self.initialize(X, y)
        y2 = np.asarray(y, dtype=np.float64).reshape(len(X), -1)
        if X_unlabeled is not None:
            X_unlabeled = None if len(X_unlabeled) == 0 else self._validate_X(X_unlabeled)
        self.train_result_ = selfaug.train(
            self, (X, y2), X_unlabeled, self.train_config(), self.forward_model, evaluate, log_path
        )
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = self._validate_X(X)
        out = self.scaler_.inverse(self._forward_eval(X))
        return out[:, 0] if self._1d_target else out

    # -- persistence -----------------------------------------------------------
    def save(self, directory, metadata: Optional[dict] = None):
        """Checkpoint the network plus what ``predict`` needs (target scaling, shapes)."""
        check_is_fitted(self, "net_")
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items() if k != "forward_model"}
        meta = {
            "estimator": type(self).__name__,
            "params": params,
            "scaler_low": self.scaler_.low.tolist(),
            "scaler_span": self.scaler_.span.tolist(),
            "n_outputs": self.n_outputs_,
            "one_d_target": self._1d_target,
            "n_features_in": self.n_features_in_,
            "spec": self.spec_.to_dict(),
            **(metadata or {}),
        }
        return io.save_checkpoint(self.net_, directory, meta)

    @classmethod
    def load(cls, directory, forward_model=None) -> "SelfAugmentedRegressor":
        net, meta = io.load_checkpoint(directory)
        if meta.get("estimator") != cls.__name__:
            raise io.FormatError(f"{directory}: checkpoint was not written by {cls.__name__}")
        est = cls(forward_model=forward_model, **meta["params"])
        est.net_ = net
        est.scaler_ = _TargetScaler(meta["scaler_low"], np.asarray(meta["scaler_low"]) + np.asarray(meta["scaler_span"]))
        est.n_outputs_ = meta["n_outputs"]
        est._1d_target = meta["one_d_target"]
        est.n_features_in_ = meta["n_features_in"]
        spec = meta["spec"]
        est.spec_ = NetworkSpec.from_dict(spec) if "encoder_widths" in spec else MLPSpec(**{**spec, "hidden": tuple(spec["hidden"])})
        est.optimizer_ = Adam(est.learning_rate)
        return est


class SVBRDFNetEstimator(BaseEstimator):
    """Three separately trained SVBRDF-net branches behind one estimator.

    Targets are dicts with ``homogeneous`` ``(N, 6)`` (log-relative specular
    albedo and log roughness per channel), ``diffuse`` ``(N, 3, H, W)``
    relative albedo and ``normal`` ``(N, 3, H, W)`` encoded normals. Each
    branch has its own optimizer and loss; a training step updates all three
    on the same inputs.
    """

    def __init__(self, forward_model=None, encoder_widths=(16, 32, 64, 128), fc_hidden=1024, init_epochs=10,
                 total_epochs=20, batch_size=8, steps_per_epoch=None, learning_rate=1e-3, seed=0):
        self.forward_model = forward_model
        self.encoder_widths = encoder_widths
        self.fc_hidden = fc_hidden
        self.init_epochs = init_epochs
        self.total_epochs = total_epochs
        self.batch_size = batch_size
        self.steps_per_epoch = steps_per_epoch
        self.learning_rate = learning_rate
        self.seed = seed

    def initialize(self, X) -> "SVBRDFNetEstimator":
        X = _check_images(X, 3)
        self.spec_ = NetworkSpec(input_size=X.shape[2], in_channels=3, encoder_widths=tuple(self.encoder_widths),
                                 fc_hidden=self.fc_hidden, n_outputs=6, seed=self.seed)
        self.nets_ = build_svbrdfnet(self.spec_)
        self.optimizers_ = {k: Adam(self.learning_rate) for k in SVBRDF_BRANCHES}
        return self

    def train_step(self, X, y: dict) -> float:
        X = np.asarray(X, dtype=np.float32)
        total = 0.0
        for key in SVBRDF_BRANCHES:
            net = self.nets_[key]
            pred = net.forward(X, train=True)
            loss, grad = mse_loss(pred, np.asarray(y[key], dtype=np.float32))
            net.zero_grad()
            net.backward(grad)
            self.optimizers_[key].step(net.parameters(), net.gradients())
            total += loss
        return total

    def fit(self, X, y: dict, X_unlabeled=None):
        X = _check_images(X, 3)
        self.initialize(X)
        cfg = selfaug.TrainConfig(init_epochs=self.init_epochs, total_epochs=self.total_epochs,
                                  batch_size=self.batch_size, steps_per_epoch=self.steps_per_epoch,
                                  learning_rate=self.learning_rate, seed=self.seed)
        if X_unlabeled is not None and len(X_unlabeled) == 0:
            X_unlabeled = None
        self.train_result_ = selfaug.train(self, (X, y), X_unlabeled, cfg, self.forward_model)
        return self

    def predict(self, X) -> dict:
        check_is_fitted(self, "nets_")
        X = _check_images(X, 3)
        return {k: self.nets_[k].forward(X, train=False).astype(np.float64) for k in SVBRDF_BRANCHES}

    def save(self, directory):
        """One checkpoint subdirectory per branch."""
        check_is_fitted(self, "nets_")
        directory = Path(directory)
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items() if k != "forward_model"}
        for key in SVBRDF_BRANCHES:
            io.save_checkpoint(self.nets_[key], directory / key, {"estimator": type(self).__name__, "branch": key, "params": params})
        return directory

    @classmethod
    def load(cls, directory, forward_model=None) -> "SVBRDFNetEstimator":
        directory = Path(directory)
        nets, params = {}, None
        for key in SVBRDF_BRANCHES:
            nets[key], meta = io.load_checkpoint(directory / key)
            params = meta["params"]
        est = cls(forward_model=forward_model, **params)
        est.spec_ = NetworkSpec(input_size=nets["homogeneous"].input_shape[1], in_channels=3,
                                encoder_widths=tuple(est.encoder_widths), fc_hidden=est.fc_hidden, n_outputs=6, seed=est.seed)
        est.nets_ = nets
        est.optimizers_ = {k: Adam(est.learning_rate) for k in SVBRDF_BRANCHES}
        return est
