"""Trainable MLP feature extractor.

A small fully-connected network (ReLU hidden layers, linear scalar output)
trained with mini-batch Adam on mean squared error, with early stopping on a
held-out set. Everything up to the last hidden layer acts as the feature
map: `transform` returns those activations with a constant-1 column
appended, so the final layer's bias is absorbed and the network output
decomposes exactly as ``transform(X) @ head_vector``.

Forward, backward and the loss are written out explicitly in numpy so the
analytic gradients can be checked against finite differences.
"""

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin

from .exceptions import NonFiniteLoss

_CHECKPOINT_MAGIC = b"PARISMLP"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpConfig:
    """Training hyper-parameters for the feature extractor.

    The architecture default mirrors the evaluation setup (three hidden
    layers of 100/100/50 ReLU units); the optimizer settings are
    conventional Adam defaults.
    """

    hidden_sizes: tuple = (100, 100, 50)
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if len(self.hidden_sizes) == 0:
            raise ValueError("hidden_sizes must be non-empty")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden widths must be positive")
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")


# ------------------------------------------------------------------ kernels


def init_params(n_in, hidden_sizes, rng):
    """Fan-in-scaled uniform initialization, U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    sizes = [n_in, *hidden_sizes, 1]
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        params.append((w, b))
    return params


def forward(params, x):
    """Full forward pass.

    Returns ``(pre_activations, activations, predictions)`` where
    ``activations[-1]`` is the penultimate-layer output feeding the linear
    head and ``predictions`` has shape (n,).
    """
    pre = []
    acts = []
    h = x
    for w, b in params[:-1]:
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    w_out, b_out = params[-1]
    pred = (h @ w_out + b_out)[:, 0]
    return pre, acts, pred


def mse_loss_and_grads(params, x, y):
    """Mean squared error and its analytic gradients for every parameter.

    Backpropagation through the ReLU stack; gradients are returned in the
    same ``[(dW, db), ...]`` layout as ``params``.
    """
    pre, acts, pred = forward(params, x)
    n = x.shape[0]
    err = pred - y
    loss = float(err @ err) / n

    grads = [None] * len(params)
    # head
    delta = (2.0 / n) * err[:, None]  # (n, 1)
    h_last = acts[-1] if acts else x
    w_out, _ = params[-1]
    grads[-1] = (h_last.T @ delta, delta.sum(axis=0))
    # hidden layers, back to front
    upstream = delta @ w_out.T
    for layer in range(len(params) - 2, -1, -1):
        dz = upstream * (pre[layer] > 0.0)
        h_in = acts[layer - 1] if layer > 0 else x
        w, _ = params[layer]
        grads[layer] = (h_in.T @ dz, dz.sum(axis=0))
        upstream = dz @ w.T
    return loss, grads


def _mse(pred, y):
    d = pred - y
    return float(d @ d) / d.size


# ---------------------------------------------------------------- estimator


class MlpRegressor(BaseEstimator, RegressorMixin, TransformerMixin):
    """MLP regressor whose penultimate layer doubles as a feature map.

    Parameters
    ----------
    hidden_sizes : tuple of int, default=(100, 100, 50)
        Widths of the ReLU hidden layers.
    learning_rate : float, default=1e-3
        Adam step size.
    batch_size : int, default=256
    max_epochs : int, default=500
    patience : int, default=20
        Early-stopping patience, counted in epochs without a new best
        validation loss. Only active when a validation set is passed to
        `fit`.
    seed : int, default=0
        Seeds initialization and batch shuffling; identical seeds and data
        give bit-identical parameters.
    warm_start : bool, default=False
        When True, `fit` resumes from the current parameters (fine-tuning)
        instead of reinitializing.

    Attributes
    ----------
    params_ : list of (ndarray, ndarray)
        Weight/bias pairs per layer, the last being the linear head.
    feature_dim_ : int
        Width of `transform` output: last hidden width + 1 bias column.
    loss_curve_, val_loss_curve_ : list of float
        Per-epoch training-batch mean loss and validation MSE.
    best_epoch_ : int
        Epoch whose snapshot was kept (0-based).
    """

    def __init__(
        self,
        hidden_sizes=(100, 100, 50),
        learning_rate=1e-3,
        batch_size=256,
        max_epochs=500,
        patience=20,
        seed=0,
        warm_start=False,
    ):
        self.hidden_sizes = hidden_sizes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.warm_start = warm_start

    @classmethod
    def from_config(cls, config, warm_start=False):
        return cls(
            hidden_sizes=config.hidden_sizes,
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            max_epochs=config.max_epochs,
            patience=config.patience,
            seed=config.seed,
            warm_start=warm_start,
        )

    # -- training

    def fit(self, X, y, X_val=None, y_val=None):
        """Train with mini-batch Adam; keep the best-validation snapshot.

        The validation pair is used only for early stopping. Without one,
        training runs for `max_epochs` and keeps the final parameters.
        """
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("X must be a non-empty 2-D array")
        if X.shape[0] != y.size:
            raise ValueError("X and y disagree on the number of samples")
        has_val = X_val is not None and y_val is not None
        if has_val:
            X_val = np.asarray(X_val, dtype=np.float64)
            y_val = np.asarray(y_val, dtype=np.float64).ravel()

        config = MlpConfig(
            hidden_sizes=tuple(self.hidden_sizes),
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
        )
        rng = np.random.default_rng(config.seed)
        if self.warm_start and hasattr(self, "params_"):
            params = [(w.copy(), b.copy()) for w, b in self.params_]
        else:
            params = init_params(X.shape[1], config.hidden_sizes, rng)

        # Adam state
        m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        t = 0

        n = X.shape[0]
        batch = min(config.batch_size, n)
        self.loss_curve_ = []
        self.val_loss_curve_ = []
        best_val = np.inf
        best_params = None
        best_epoch = -1

        for epoch in range(config.max_epochs):
            order = rng.permutation(n)
            epoch_losses = []
            for start in range(0, n, batch):
                idx = order[start : start + batch]
                loss, grads = mse_loss_and_grads(params, X[idx], y[idx])
                if not np.isfinite(loss):
                    raise NonFiniteLoss(
                        f"training loss became non-finite at epoch {epoch} "
                        f"(learning rate {config.learning_rate} too high?)"
                    )
                epoch_losses.append(loss)
                t += 1
                corr1 = 1.0 - beta1**t
                corr2 = 1.0 - beta2**t
                new_params = []
                for i, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
                    mw = beta1 * m[i][0] + (1 - beta1) * gw
                    mb = beta1 * m[i][1] + (1 - beta1) * gb
                    vw = beta2 * v[i][0] + (1 - beta2) * gw * gw
                    vb = beta2 * v[i][1] + (1 - beta2) * gb * gb
                    m[i] = (mw, mb)
                    v[i] = (vw, vb)
                    w = w - config.learning_rate * (mw / corr1) / (np.sqrt(vw / corr2) + eps)
                    b = b - config.learning_rate * (mb / corr1) / (np.sqrt(vb / corr2) + eps)
                    new_params.append((w, b))
                params = new_params
            self.loss_curve_.append(float(np.mean(epoch_losses)))

            if has_val:
                _, _, val_pred = forward(params, X_val)
                val_loss = _mse(val_pred, y_val)
                self.val_loss_curve_.append(val_loss)
                if val_loss < best_val:
                    best_val = val_loss
                    best_params = [(w.copy(), b.copy()) for w, b in params]
                    best_epoch = epoch
                elif epoch - best_epoch >= config.patience:
                    break

        if has_val and best_params is not None:
            self.params_ = best_params
            self.best_epoch_ = best_epoch
        else:
            self.params_ = params
            self.best_epoch_ = len(self.loss_curve_) - 1
        self.n_features_in_ = X.shape[1]
        self.feature_dim_ = int(tuple(self.hidden_sizes)[-1]) + 1
        return self

    # -- inference

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("model is not fitted")

    def predict(self, X):
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        _, _, pred = forward(self.params_, X)
        return pred

    def transform(self, X):
        """Penultimate-layer activations with an appended constant-1 column."""
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        _, acts, _ = forward(self.params_, X)
        feats = acts[-1]
        return np.hstack([feats, np.ones((feats.shape[0], 1))])

    @property
    def head_weights(self):
        """Final-layer weight vector and bias, ``(w, b)``."""
        self._check_fitted()
        w_out, b_out = self.params_[-1]
        return w_out[:, 0].copy(), float(b_out[0])

    @property
    def head_vector(self):
        """Head weights with the bias absorbed as the last coefficient.

        Aligned with `transform`: ``predict(X) == transform(X) @ head_vector``.
        """
        w, b = self.head_weights
        return np.append(w, b)

    # -- persistence

    def save(self, path):
        """Write parameters in the portable checkpoint format.

        Layout (little-endian): the 8-byte magic ``PARISMLP``, a uint32
        format version, a uint32 layer count, then per layer two uint32
        dimensions (rows, cols), then per layer the weight block as
        row-major float64 followed by the bias block (cols float64).
        Round-tripping is bit-exact.
        """
        self._check_fitted()
        with open(path, "wb") as fh:
            fh.write(_CHECKPOINT_MAGIC)
            fh.write(struct.pack("<II", _CHECKPOINT_VERSION, len(self.params_)))
            for w, _ in self.params_:
                fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
            for w, b in self.params_:
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        """Read a checkpoint written by `save`.

        Training hyper-parameters are not stored; the returned estimator has
        the architecture implied by the stored dimensions and default
        optimizer settings.
        """
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != _CHECKPOINT_MAGIC:
                raise ValueError(f"not a checkpoint file (magic {magic!r})")
            version, n_layers = struct.unpack("<II", fh.read(8))
            if version != _CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            dims = [struct.unpack("<II", fh.read(8)) for _ in range(n_layers)]
            params = []
            for rows, cols in dims:
                w = np.frombuffer(fh.read(8 * rows * cols), dtype="<f8").reshape(rows, cols)
                b = np.frombuffer(fh.read(8 * cols), dtype="<f8")
                params.append((w.copy(), b.copy()))
        hidden = tuple(w.shape[1] for w, _ in params[:-1])
        model = cls(hidden_sizes=hidden)
        model.params_ = params
        model.n_features_in_ = params[0][0].shape[0]
        model.feature_dim_ = hidden[-1] + 1
        return model


# --------------------------------------------------------------- procedures


def train_mlp(train, val, config):
    """Train one feature extractor on a grouped dataset.

    ``val`` drives early stopping only. Returns the fitted `MlpRegressor`
    holding the best-validation parameter snapshot.
    """
    model = MlpRegressor.from_config(config)
    model.fit(train.inputs, train.targets, X_val=val.inputs, y_val=val.targets)
    return model


def extract_features(model, inputs):
    """Feature matrix for `inputs`: penultimate activations plus bias column."""
    return model.transform(inputs)


def train_ensemble(train, val, config, n_members):
    """Train ``n_members`` extractors with seeds ``config.seed + 0..n-1``.

    Any member failure propagates; partial ensembles are never returned.
    """
    if n_members < 1:
        raise ValueError("n_members must be >= 1")
    members = []
    for k in range(n_members):
        member_config = MlpConfig(
            hidden_sizes=config.hidden_sizes,
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            max_epochs=config.max_epochs,
            patience=config.patience,
            seed=config.seed + k,
        )
        members.append(train_mlp(train, val, member_config))
    return members


def ensemble_predict(members, X):
    """Mean prediction across ensemble members."""
    if not members:
        raise ValueError("empty ensemble")
    return np.mean([m.predict(X) for m in members], axis=0)
