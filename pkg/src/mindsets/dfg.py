"""Deep Feature Generation network in NumPy.

A tabular row of width D is laid out row-major on an S x S grid (S = ceil(sqrt(D)),
zero padded), convolved by ``n_filters`` same-padded kernels, rectified and max
pooled (window = stride = ``pool_width``, ceil output size). The pooled maps are
flattened into G generated features, concatenated with the raw row and passed to
a ReLU multilayer perceptron with a softmax output. Everything runs in float64.
"""
from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mindsets.errors import DimMismatch, ModelVersionMismatch, SingleClassTrainSet

MODEL_FORMAT = "mindsets-dfg"
MODEL_VERSION = 1
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class DfgConfig:
    n_filters: int = 14
    kernel: tuple[int, int] = (7, 7)
    pool_width: int = 2
    hidden_sizes: tuple[int, ...] = (64,)
    max_epochs: int = 500
    patience: int = 5
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    n_classes: int = 2
    use_dfg: bool = True
    val_fraction: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.n_filters < 1:
            raise ValueError("n_filters must be >= 1")
        if len(self.kernel) != 2 or any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise ValueError("kernel dims must be odd and positive")
        if self.pool_width < 1:
            raise ValueError("pool_width must be >= 1")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("patience, max_epochs and batch_size must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = list(self.kernel)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DfgConfig":
        return cls(**d)


def ablate_dfg(config: DfgConfig) -> DfgConfig:
    """Same configuration with the generated-feature branch switched off (G = 0)."""
    return replace(config, use_dfg=False)


def grid_side(d: int) -> int:
    return max(1, math.isqrt(d - 1) + 1) if d > 1 else 1


def reshape_to_grid(x) -> np.ndarray:
    """Zero-pad a D-vector (or a batch of them) to S*S and lay it out row-major."""
    x = np.asarray(x, dtype=np.float64)
    batch = x.reshape(-1, x.shape[-1])
    d = batch.shape[1]
    if d < 1:
        raise ValueError("need at least one feature")
    s = grid_side(d)
    out = np.zeros((len(batch), s * s))
    out[:, :d] = batch
    out = out.reshape(len(batch), s, s)
    return out[0] if x.ndim == 1 else out


@dataclass
class DfgModel:
    config: DfgConfig
    input_dim: int
    params: dict = field(repr=False)  # name -> float64 array, in serialization order

    @property
    def grid_side(self) -> int:
        return grid_side(self.input_dim)

    @property
    def pooled_side(self) -> int:
        return -(-self.grid_side // self.config.pool_width)

    @property
    def generated_dim(self) -> int:
        return self.config.n_filters * self.pooled_side**2 if self.config.use_dfg else 0

    @property
    def classifier_input_dim(self) -> int:
        return self.input_dim + self.generated_dim

    @property
    def n_dense(self) -> int:
        return len(self.config.hidden_sizes) + 1

    def copy(self) -> "DfgModel":
        return DfgModel(self.config, self.input_dim, {k: v.copy() for k, v in self.params.items()})

    # -------------------------------------------------------------- serialization

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "config": self.config.to_dict(),
            "input_dim": self.input_dim,
            "params": [
                {"name": k, "shape": list(v.shape),
                 "data": base64.b64encode(v.astype("<f8").tobytes()).decode("ascii")}
                for k, v in self.params.items()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DfgModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ModelVersionMismatch(
                f"expected {MODEL_FORMAT} v{MODEL_VERSION}, got {d.get('format')} v{d.get('version')}")
        params = {}
        for p in d["params"]:
            arr = np.frombuffer(base64.b64decode(p["data"]), dtype="<f8").astype(np.float64)
            params[p["name"]] = arr.reshape(p["shape"])
        return cls(DfgConfig.from_dict(d["config"]), int(d["input_dim"]), params)

    @classmethod
    def from_json(cls, text: str) -> "DfgModel":
        return cls.from_dict(json.loads(text))


def init_model(config: DfgConfig, input_dim: int, rng: np.random.Generator | None = None,
               zero: bool = False) -> DfgModel:
    """Glorot-uniform weights and zero biases (or all zeros with ``zero``)."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(config.seed))
    kh, kw = config.kernel
    shell = DfgModel(config, input_dim, {})

    def draw(shape, fan_in, fan_out):
        if zero:
            return np.zeros(shape)
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    params = {
        "conv_w": draw((config.n_filters, kh, kw), kh * kw, kh * kw * config.n_filters),
        "conv_b": np.zeros(config.n_filters),
    }
    widths = [shell.classifier_input_dim, *config.hidden_sizes, config.n_classes]
    for i in range(len(widths) - 1):
        params[f"dense{i}_w"] = draw((widths[i], widths[i + 1]), widths[i], widths[i + 1])
        params[f"dense{i}_b"] = np.zeros(widths[i + 1])
    return DfgModel(config, input_dim, params)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check(model: DfgModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.input_dim:
        raise DimMismatch(f"model expects {model.input_dim} features, got {X.shape[1]}")
    return X


def _matmul(a: np.ndarray, b: np.ndarray, rowwise: bool) -> np.ndarray:
    # einsum without BLAS reduces every row in the same order, so a row's result
    # does not depend on which other rows share the batch
    return np.einsum("ij,jk->ik", a, b, optimize=False) if rowwise else a @ b


def _generate(model: DfgModel, X: np.ndarray, cache: dict | None, rowwise: bool = False):
    cfg = model.config
    kh, kw = cfg.kernel
    n = len(X)
    s = model.grid_side
    pw = cfg.pool_width
    ps = model.pooled_side
    grid = reshape_to_grid(X).reshape(n, s, s)
    padded = np.pad(grid, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    cols = sliding_window_view(padded, (kh, kw), axis=(1, 2)).reshape(n * s * s, kh * kw)
    W = model.params["conv_w"].reshape(cfg.n_filters, kh * kw)
    pre = (_matmul(cols, W.T, rowwise) + model.params["conv_b"]).reshape(n, s, s, cfg.n_filters)
    act = np.maximum(pre, 0.0)
    full = np.full((n, ps * pw, ps * pw, cfg.n_filters), -np.inf)
    full[:, :s, :s, :] = act
    # (n, ps, ps, F, pw*pw) with window cells in row-major order
    windows = full.reshape(n, ps, pw, ps, pw, cfg.n_filters).transpose(0, 1, 3, 5, 2, 4)
    windows = windows.reshape(n, ps, ps, cfg.n_filters, pw * pw)
    arg = windows.argmax(axis=4)
    pooled = np.take_along_axis(windows, arg[..., None], axis=4)[..., 0]
    generated = pooled.transpose(0, 3, 1, 2).reshape(n, -1)
    if cache is not None:
        cache.update(cols=cols, pre=pre, arg=arg)
    return generated


def _forward(model: DfgModel, X: np.ndarray, cache: dict | None = None, rowwise: bool = False):
    if model.config.use_dfg:
        generated = _generate(model, X, cache, rowwise)
    else:
        generated = np.zeros((len(X), 0))
    h = np.concatenate([X, generated], axis=1)
    acts = [h]
    for i in range(model.n_dense):
        z = _matmul(h, model.params[f"dense{i}_w"], rowwise) + model.params[f"dense{i}_b"]
        h = z if i == model.n_dense - 1 else np.maximum(z, 0.0)
        acts.append(h)
    logits = acts[-1]
    probs = _softmax(logits)
    if cache is not None:
        cache["acts"] = acts
    return logits, generated, probs


def forward(model: DfgModel, x):
    """``(logits, generated, probabilities)`` for one row or a batch of rows."""
    X = _check(model, x)
    logits, generated, probs = _forward(model, X, rowwise=True)
    if np.ndim(x) == 1:
        return logits[0], generated[0], probs[0]
    return logits, generated, probs


def loss(probabilities, true_class) -> float:
    """Cross-entropy ``-log p[true]`` with p clamped at 1e-12."""
    p = float(np.asarray(probabilities)[int(true_class)])
    return -math.log(max(p, PROB_FLOOR))


def batch_loss(model: DfgModel, X, y) -> float:
    X = _check(model, X)
    y = np.asarray(y, dtype=np.int64)
    _, _, probs = _forward(model, X)
    p = np.maximum(probs[np.arange(len(y)), y], PROB_FLOOR)
    return float(-np.log(p).mean())


def gradients(model: DfgModel, X, y) -> dict:
    """Exact gradient of the mean batch cross-entropy with respect to every parameter."""
    X = _check(model, X)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("empty batch")
    n = len(X)
    cache: dict = {}
    _, _, probs = _forward(model, X, cache)
    acts = cache["acts"]
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}

    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    for i in reversed(range(model.n_dense)):
        grads[f"dense{i}_w"] = acts[i].T @ delta
        grads[f"dense{i}_b"] = delta.sum(axis=0)
        upstream = delta @ model.params[f"dense{i}_w"].T
        delta = upstream * (acts[i] > 0) if i > 0 else upstream

    if model.config.use_dfg:
        cfg = model.config
        s, ps, pw, nf = model.grid_side, model.pooled_side, cfg.pool_width, cfg.n_filters
        d_gen = delta[:, model.input_dim:].reshape(n, nf, ps, ps).transpose(0, 2, 3, 1)
        d_windows = np.zeros((n, ps, ps, nf, pw * pw))
        np.put_along_axis(d_windows, cache["arg"][..., None], d_gen[..., None], axis=4)
        d_full = d_windows.reshape(n, ps, ps, nf, pw, pw).transpose(0, 1, 4, 2, 5, 3)
        d_full = d_full.reshape(n, ps * pw, ps * pw, nf)[:, :s, :s, :]
        d_pre = (d_full * (cache["pre"] > 0)).reshape(n * s * s, nf)
        grads["conv_w"] = (d_pre.T @ cache["cols"]).reshape(model.params["conv_w"].shape)
        grads["conv_b"] = d_pre.sum(axis=0)
    return grads


def predict_proba(model: DfgModel, matrix) -> np.ndarray:
    """Row-wise probabilities; each row's output is independent of the rest of the batch."""
    X = _check(model, matrix)
    return _forward(model, X, rowwise=True)[2]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    monitored: str = "val"

    def to_dict(self) -> dict:
        return asdict(self)


class EarlyStopping:
    """Tracks the best monitored loss; epochs are 1-based."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.epoch = 0

    def step(self, value: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        self.epoch += 1
        if value < self.best:
            self.best = value
            self.best_epoch = self.epoch
            return False
        return self.epoch - self.best_epoch >= self.patience


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _canonical_order(X, y, groups) -> np.ndarray:
    # row order fed to the optimiser depends only on content, never on input order
    _, gcode = np.unique(np.asarray(groups).astype(str), return_inverse=True)
    keys = [X[:, j] for j in reversed(range(X.shape[1]))] + [y, gcode]
    return np.lexsort(keys)


def split_validation(groups, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of validation rows: a seeded ``fraction`` of the distinct groups."""
    groups = np.asarray(groups).astype(str)
    unique = np.unique(groups)
    if fraction <= 0 or len(unique) < 2:
        return np.zeros(len(groups), dtype=bool)
    n_val = min(len(unique) - 1, max(1, int(round(fraction * len(unique)))))
    chosen = rng.permutation(len(unique))[:n_val]
    return np.isin(groups, unique[chosen])


def train(matrix, labels, groups, config: DfgConfig) -> tuple[DfgModel, TrainLog]:
    """Mini-batch Adam with group-aware validation early stopping.

    Returns the parameters of the best monitored epoch. Deterministic given
    ``config.seed``; the order of the input rows does not matter.
    """
    X = np.asarray(matrix, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    groups = np.asarray(groups).astype(str)
    if len(np.unique(y)) < 2:
        raise SingleClassTrainSet("training labels contain fewer than two classes")
    if y.min() < 0 or y.max() >= config.n_classes:
        raise ValueError("labels must lie in [0, n_classes)")
    order = _canonical_order(X, y, groups)
    X, y, groups = X[order], y[order], groups[order]

    rng = np.random.Generator(np.random.Philox(config.seed))
    val = split_validation(groups, config.val_fraction, rng)
    Xt, yt = X[~val], y[~val]
    Xv, yv = X[val], y[val]
    model = init_model(config, X.shape[1], rng)
    opt = Adam(model.params, config.learning_rate)
    stopper = EarlyStopping(config.patience)
    log = TrainLog(monitored="val" if val.any() else "train")
    best = model.copy()

    for _ in range(config.max_epochs):
        perm = rng.permutation(len(Xt))
        for start in range(0, len(perm), config.batch_size):
            batch = perm[start:start + config.batch_size]
            opt.step(model.params, gradients(model, Xt[batch], yt[batch]))
        tr = batch_loss(model, Xt, yt)
        vl = batch_loss(model, Xv, yv) if val.any() else tr
        log.train_loss.append(tr)
        log.val_loss.append(vl)
        stop = stopper.step(vl)
        if stopper.best_epoch == stopper.epoch:
            best = model.copy()
        if stop:
            break
    log.best_epoch = stopper.best_epoch
    log.stopped_epoch = stopper.epoch
    return best, log
