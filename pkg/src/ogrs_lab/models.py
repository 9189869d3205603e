"""Small differentiable classifiers with hand-derived gradients.

Two architectures: softmax logistic regression and a 2-layer perceptron
with tanh hidden units (tanh keeps the input-gradient continuous, which
the sample selector relies on).  Parameters live in a flat vector; all
operations are pure functions of it.  Cross-entropy is measured in nats
and computed through a max-shifted log-softmax so extreme logits neither
overflow nor produce infinite loss for the selected class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelError",
    "Architecture",
    "ModelParams",
    "logistic_regression",
    "mlp",
    "init_params",
    "predict",
    "loss",
    "losses",
    "predict_batch",
    "grad_theta",
    "grad_features",
    "sgd_step",
    "finite_diff_check",
    "WindowEvaluator",
    "save_params",
    "load_params",
]

LOGISTIC_REGRESSION = "logistic_regression"
MLP = "mlp"


class ModelError(ValueError):
    """Invalid architecture, shape, or hyperparameter."""


@dataclass(frozen=True)
class Architecture:
    kind: str
    input_dim: int
    num_classes: int
    hidden_width: int = 0

    def __post_init__(self):
        if self.kind not in (LOGISTIC_REGRESSION, MLP):
            raise ModelError(f"unknown architecture kind {self.kind!r}")
        if self.input_dim < 1 or self.num_classes < 2:
            raise ModelError(
                f"need input_dim >= 1 and num_classes >= 2, got "
                f"({self.input_dim}, {self.num_classes})"
            )
        if self.kind == MLP and self.hidden_width < 1:
            raise ModelError(f"mlp needs hidden_width >= 1, got {self.hidden_width}")

    @property
    def param_count(self) -> int:
        d, c, h = self.input_dim, self.num_classes, self.hidden_width
        if self.kind == LOGISTIC_REGRESSION:
            return c * d + c
        return h * d + h + c * h + c


def logistic_regression(input_dim: int, num_classes: int) -> Architecture:
    return Architecture(LOGISTIC_REGRESSION, input_dim, num_classes)


def mlp(input_dim: int, hidden_width: int, num_classes: int) -> Architecture:
    return Architecture(MLP, input_dim, num_classes, hidden_width)


@dataclass(frozen=True)
class ModelParams:
    arch: Architecture
    theta: np.ndarray

    def __post_init__(self):
        if self.theta.shape != (self.arch.param_count,):
            raise ModelError(
                f"theta length {self.theta.shape} != {self.arch.param_count}"
            )


def _unpack(params: ModelParams):
    """Split the flat vector into per-layer weight matrices and biases."""
    a = params.arch
    t = params.theta
    d, c, h = a.input_dim, a.num_classes, a.hidden_width
    if a.kind == LOGISTIC_REGRESSION:
        w = t[: c * d].reshape(c, d)
        b = t[c * d :]
        return w, b
    w1 = t[: h * d].reshape(h, d)
    b1 = t[h * d : h * d + h]
    w2 = t[h * d + h : h * d + h + c * h].reshape(c, h)
    b2 = t[h * d + h + c * h :]
    return w1, b1, w2, b2


def init_params(arch: Architecture, seed: int) -> ModelParams:
    """Per-layer uniform init in [-s, s] with s = sqrt(6/(fan_in+fan_out)),
    biases zero.  Deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    d, c, h = arch.input_dim, arch.num_classes, arch.hidden_width
    if arch.kind == LOGISTIC_REGRESSION:
        s = np.sqrt(6.0 / (d + c))
        w = rng.uniform(-s, s, size=(c, d))
        theta = np.concatenate([w.ravel(), np.zeros(c)])
    else:
        s1 = np.sqrt(6.0 / (d + h))
        s2 = np.sqrt(6.0 / (h + c))
        w1 = rng.uniform(-s1, s1, size=(h, d))
        w2 = rng.uniform(-s2, s2, size=(c, h))
        theta = np.concatenate([w1.ravel(), np.zeros(h), w2.ravel(), np.zeros(c)])
    theta.setflags(write=False)
    return ModelParams(arch, theta)


def _logits(params: ModelParams, x: np.ndarray) -> np.ndarray:
    if x.shape != (params.arch.input_dim,):
        raise ModelError(
            f"feature dimension {x.shape} != ({params.arch.input_dim},)"
        )
    if params.arch.kind == LOGISTIC_REGRESSION:
        w, b = _unpack(params)
        return w @ x + b
    w1, b1, w2, b2 = _unpack(params)
    return w2 @ np.tanh(w1 @ x + b1) + b2


def _logits_batch(params: ModelParams, xs: np.ndarray) -> np.ndarray:
    if xs.ndim != 2 or xs.shape[1] != params.arch.input_dim:
        raise ModelError(
            f"batch shape {xs.shape} incompatible with input_dim "
            f"{params.arch.input_dim}"
        )
    if params.arch.kind == LOGISTIC_REGRESSION:
        w, b = _unpack(params)
        return xs @ w.T + b
    w1, b1, w2, b2 = _unpack(params)
    return np.tanh(xs @ w1.T + b1) @ w2.T + b2


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def predict(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Class probability vector via max-shifted softmax."""
    return _softmax(_logits(params, features))


def predict_batch(params: ModelParams, xs: np.ndarray) -> np.ndarray:
    return _softmax(_logits_batch(params, xs))


def loss(params: ModelParams, features: np.ndarray, label: int) -> float:
    """Cross-entropy -log p[label] in nats."""
    return float(-_log_softmax(_logits(params, features))[label])


def losses(params: ModelParams, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropies for a batch."""
    logp = _log_softmax(_logits_batch(params, xs))
    return -logp[np.arange(len(ys)), ys]


def grad_theta(params: ModelParams, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy over the batch w.r.t. theta."""
    xs = np.atleast_2d(xs)
    ys = np.atleast_1d(ys)
    n = xs.shape[0]
    if n == 0:
        raise ModelError("empty batch")
    p = _softmax(_logits_batch(params, xs))
    r = p.copy()
    r[np.arange(n), ys] -= 1.0
    r /= n
    if params.arch.kind == LOGISTIC_REGRESSION:
        gw = r.T @ xs
        gb = r.sum(axis=0)
        return np.concatenate([gw.ravel(), gb])
    w1, b1, w2, b2 = _unpack(params)
    hidden = np.tanh(xs @ w1.T + b1)
    gw2 = r.T @ hidden
    gb2 = r.sum(axis=0)
    dz = (r @ w2) * (1.0 - hidden * hidden)
    gw1 = dz.T @ xs
    gb1 = dz.sum(axis=0)
    return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])


def grad_features(params: ModelParams, features: np.ndarray, label: int) -> np.ndarray:
    """Gradient of the cross-entropy w.r.t. the input features, theta fixed."""
    if params.arch.kind == LOGISTIC_REGRESSION:
        w, b = _unpack(params)
        p = _softmax(w @ features + b)
        p[label] -= 1.0
        return w.T @ p
    w1, b1, w2, b2 = _unpack(params)
    hidden = np.tanh(w1 @ features + b1)
    p = _softmax(w2 @ hidden + b2)
    p[label] -= 1.0
    dz = (w2.T @ p) * (1.0 - hidden * hidden)
    return w1.T @ dz


def sgd_step(params: ModelParams, xs: np.ndarray, ys: np.ndarray, lr: float) -> ModelParams:
    """One gradient step on the mean batch loss."""
    if lr <= 0:
        raise ModelError(f"learning rate must be > 0, got {lr}")
    theta = params.theta - lr * grad_theta(params, xs, ys)
    theta.setflags(write=False)
    return ModelParams(params.arch, theta)


def finite_diff_check(params: ModelParams, features: np.ndarray, label: int, h: float) -> float:
    """Max relative error of both analytic gradients vs central differences.

    Relative error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    if h <= 0:
        raise ModelError(f"step h must be > 0, got {h}")
    worst = 0.0

    g_theta = grad_theta(params, features[None, :], np.array([label]))
    for j in range(len(params.theta)):
        tp = params.theta.copy()
        tp[j] += h
        tm = params.theta.copy()
        tm[j] -= h
        num = (
            loss(ModelParams(params.arch, tp), features, label)
            - loss(ModelParams(params.arch, tm), features, label)
        ) / (2 * h)
        worst = max(worst, abs(g_theta[j] - num) / max(1.0, abs(g_theta[j])))

    g_x = grad_features(params, features, label)
    for j in range(len(features)):
        xp = features.copy()
        xp[j] += h
        xm = features.copy()
        xm[j] -= h
        num = (loss(params, xp, label) - loss(params, xm, label)) / (2 * h)
        worst = max(worst, abs(g_x[j] - num) / max(1.0, abs(g_x[j])))
    return worst


class WindowEvaluator:
    """Mean loss/input-gradient across a window of parameter snapshots.

    Stacks all snapshots' layer tensors once so that per-point evaluation
    inside the selector loop costs a handful of vectorized ops instead of a
    Python loop over snapshots.  All snapshots must share one architecture.
    """

    def __init__(self, snapshots):
        snapshots = list(snapshots)
        if not snapshots:
            raise ModelError("window is empty; selection needs >= 1 snapshot")
        arch = snapshots[0].arch
        for p in snapshots:
            if p.arch != arch:
                raise ModelError("window mixes architectures")
        self.arch = arch
        self.size = len(snapshots)
        if arch.kind == LOGISTIC_REGRESSION:
            ws, bs = zip(*(_unpack(p) for p in snapshots))
            self._w = np.stack(ws)   # (w, C, d)
            self._b = np.stack(bs)   # (w, C)
        else:
            w1s, b1s, w2s, b2s = zip(*(_unpack(p) for p in snapshots))
            self._w1 = np.stack(w1s)  # (w, H, d)
            self._b1 = np.stack(b1s)  # (w, H)
            self._w2 = np.stack(w2s)  # (w, C, H)
            self._b2 = np.stack(b2s)  # (w, C)

    def _forward(self, x: np.ndarray):
        if self.arch.kind == LOGISTIC_REGRESSION:
            logits = self._w @ x + self._b
            return logits, None
        hidden = np.tanh(self._w1 @ x + self._b1)
        logits = np.einsum("wch,wh->wc", self._w2, hidden) + self._b2
        return logits, hidden

    def mean_loss(self, x: np.ndarray, label: int) -> float:
        logits, _ = self._forward(x)
        shifted = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        return float(np.mean(lse - shifted[:, label]))

    def mean_grad(self, x: np.ndarray, label: int) -> np.ndarray:
        logits, hidden = self._forward(x)
        p = _softmax(logits)
        p[:, label] -= 1.0
        if self.arch.kind == LOGISTIC_REGRESSION:
            return np.einsum("wcd,wc->d", self._w, p) / self.size
        dz = np.einsum("wch,wc->wh", self._w2, p) * (1.0 - hidden * hidden)
        return np.einsum("whd,wh->d", self._w1, dz) / self.size


def save_params(params: ModelParams, path) -> None:
    """Write theta as little-endian float64 bytes plus a JSON sidecar."""
    path = str(path)
    with open(path, "wb") as fh:
        fh.write(params.theta.astype("<f8").tobytes())
    meta = {
        "kind": params.arch.kind,
        "input_dim": params.arch.input_dim,
        "num_classes": params.arch.num_classes,
        "hidden_width": params.arch.hidden_width,
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(path) -> ModelParams:
    path = str(path)
    with open(path + ".json", encoding="utf-8") as fh:
        meta = json.load(fh)
    arch = Architecture(
        meta["kind"], meta["input_dim"], meta["num_classes"], meta["hidden_width"]
    )
    theta = np.frombuffer(open(path, "rb").read(), dtype="<f8").astype(np.float64)
    theta.setflags(write=False)
    return ModelParams(arch, theta)
