"""Desk-scale LoRA lab.

A two-layer classifier over hashed character trigrams::

    x (d_in, L2-normalised counts) -> tanh(W1 x + b1 [+ (alpha/r) B A x]) -> W2 h + b2 -> softmax(3)

``full`` mode trains W1, b1, W2, b2.  ``lora`` mode freezes W1, b1 and trains
the adapter (A, B) on that layer together with the classification head.
Loss is class-weighted cross-entropy averaged over the batch:
``(1/n) * sum_i w[y_i] * -log p_i[y_i]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InputError
from .metrics import ConfusionMatrix3, f1_scores
from .rng import SplitMix64, derive_seed

CHECKPOINT_FORMAT = "releval-lab-checkpoint"
CHECKPOINT_VERSION = 1
DEFAULT_D_IN = 2048


# -- features -------------------------------------------------------------

def _fnv1a32(data: bytes) -> int:
    h = 0x811C9DC5
    for byte in data:
        h = ((h ^ byte) * 0x01000193) & 0xFFFFFFFF
    return h


def featurize(text: str, d_in: int = DEFAULT_D_IN, n: int = 3) -> np.ndarray:
    """Hashed character n-gram counts, L2-normalised (FNV-1a 32 on UTF-8 bytes)."""
    v = np.zeros(d_in)
    grams = [text[i:i + n] for i in range(len(text) - n + 1)] or ([text] if text else [])
    for g in grams:
        v[_fnv1a32(g.encode("utf-8")) % d_in] += 1.0
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def featurize_all(texts: Sequence[str], d_in: int = DEFAULT_D_IN) -> np.ndarray:
    return np.stack([featurize(t, d_in) for t in texts]) if texts else np.zeros((0, d_in))


# -- layers ---------------------------------------------------------------

@dataclass
class DenseLayer:
    W: np.ndarray  # (d_out, d_in)
    b: np.ndarray  # (d_out,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise InputError(f"dense layer shapes W{self.W.shape}, b{self.b.shape} do not agree")
        if not (np.isfinite(self.W).all() and np.isfinite(self.b).all()):
            raise InputError("dense layer has non-finite entries")

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Works on a single vector (d_in,) or a batch (n, d_in)."""
        return x @ self.W.T + self.b


@dataclass
class LoraAdapter:
    A: np.ndarray  # (r, d_in)
    B: np.ndarray  # (d_out, r)
    alpha: float
    dropout_rate: float = 0.0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        r = self.A.shape[0]
        if self.A.ndim != 2 or self.B.ndim != 2 or self.B.shape[1] != r:
            raise InputError(f"adapter shapes A{self.A.shape}, B{self.B.shape} do not agree")
        if r < 1 or r > min(self.A.shape[1], self.B.shape[0]):
            raise InputError(f"rank {r} must lie in [1, min(d_in, d_out)]")
        if self.alpha <= 0:
            raise InputError("alpha must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InputError("adapter dropout must lie in [0, 1)")

    @classmethod
    def init(cls, d_in: int, d_out: int, rank: int, alpha: float, dropout_rate: float = 0.0,
             seed: int = 0) -> "LoraAdapter":
        """A ~ U(-0.01, 0.01) from the seeded stream, B = 0."""
        if not 1 <= rank <= min(d_in, d_out):
            raise InputError(f"rank {rank} must lie in [1, min(d_in, d_out)] = [1, {min(d_in, d_out)}]")
        rng = SplitMix64.stream(seed, "lora_A")
        A = np.array([rng.uniform(-0.01, 0.01) for _ in range(rank * d_in)]).reshape(rank, d_in)
        return cls(A, np.zeros((d_out, rank)), alpha, dropout_rate)

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def scale(self) -> float:
        return self.alpha / self.rank


def _check_dims(layer: DenseLayer, adapter: LoraAdapter) -> None:
    if adapter.A.shape[1] != layer.d_in or adapter.B.shape[0] != layer.d_out:
        raise InputError(f"adapter A{adapter.A.shape}/B{adapter.B.shape} does not fit layer "
                         f"W{layer.W.shape}")


def forward_adapted(layer: DenseLayer, adapter: LoraAdapter, x: np.ndarray,
                    adapter_input: np.ndarray | None = None) -> np.ndarray:
    """W x + b + (alpha/r) B (A x), never forming B A.

    ``adapter_input`` substitutes the low-rank branch's input (dropout path).
    """
    _check_dims(layer, adapter)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.d_in:
        raise InputError(f"input has {x.shape[-1]} features, layer expects {layer.d_in}")
    xa = x if adapter_input is None else adapter_input
    return layer.forward(x) + adapter.scale * ((xa @ adapter.A.T) @ adapter.B.T)


def merge(layer: DenseLayer, adapter: LoraAdapter) -> DenseLayer:
    _check_dims(layer, adapter)
    return DenseLayer(layer.W + adapter.scale * (adapter.B @ adapter.A), layer.b.copy())


def param_count(d_in: int, d_out: int, mode: str, r: int | None = None) -> int:
    """Trainable parameters of one dense layer: full d_out*(d_in+1), LoRA r*(d_in+d_out)."""
    if d_in < 1 or d_out < 1:
        raise InputError("dimensions must be positive")
    if mode == "full":
        return d_out * (d_in + 1)
    if mode == "lora":
        if r is None or r < 1:
            raise InputError("lora mode needs a positive rank")
        return r * (d_in + d_out)
    raise InputError(f"mode must be 'full' or 'lora', got {mode!r}")


# -- model ----------------------------------------------------------------

def _uniform(rng: SplitMix64, d_out: int, d_in: int, a: float) -> np.ndarray:
    return np.array([rng.uniform(-a, a) for _ in range(d_out * d_in)]).reshape(d_out, d_in)


@dataclass
class LabModel:
    hidden: DenseLayer
    head: DenseLayer
    mode: str = "lora"
    adapter: LoraAdapter | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("full", "lora"):
            raise InputError(f"mode must be 'full' or 'lora', got {self.mode!r}")
        if self.mode == "lora" and self.adapter is None:
            raise InputError("lora mode needs an adapter")
        if self.head.d_in != self.hidden.d_out or self.head.d_out != 3:
            raise InputError("head must map the hidden width to 3 classes")

    @classmethod
    def create(cls, d_in: int = DEFAULT_D_IN, d_hidden: int = 32, mode: str = "lora",
               rank: int = 4, alpha: float = 4.0, lora_dropout: float = 0.0,
               seed: int = 0) -> "LabModel":
        rng = SplitMix64.stream(seed, "lab_init")
        # inputs are unit-norm, so U(-sqrt(3), sqrt(3)) gives unit-variance pre-activations
        hidden = DenseLayer(_uniform(rng, d_hidden, d_in, math.sqrt(3.0)), np.zeros(d_hidden))
        head = DenseLayer(_uniform(rng, 3, d_hidden, math.sqrt(6.0 / (d_hidden + 3))), np.zeros(3))
        adapter = (LoraAdapter.init(d_in, d_hidden, rank, alpha, lora_dropout, seed)
                   if mode == "lora" else None)
        return cls(hidden, head, mode, adapter, seed)

    @property
    def d_in(self) -> int:
        return self.hidden.d_in

    def trainable(self) -> dict[str, np.ndarray]:
        """Live references to the trainable arrays (in-place updates stick)."""
        params = {"W2": self.head.W, "b2": self.head.b}
        if self.mode == "full":
            params.update(W1=self.hidden.W, b1=self.hidden.b)
        else:
            params.update(A=self.adapter.A, B=self.adapter.B)
        return params

    def trainable_count(self) -> int:
        r = self.adapter.rank if self.adapter is not None else None
        return (param_count(self.hidden.d_in, self.hidden.d_out, self.mode, r)
                + param_count(self.head.d_in, self.head.d_out, "full"))

    def _hidden_pre(self, X: np.ndarray, X_adapter: np.ndarray | None = None) -> np.ndarray:
        if self.adapter is None:
            return self.hidden.forward(X)
        return forward_adapted(self.hidden, self.adapter, X, X_adapter)

    def logits(self, X: np.ndarray) -> np.ndarray:
        return self.head.forward(np.tanh(self._hidden_pre(X)))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(X), axis=-1)

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray, class_weights: Sequence[float],
                       dropout_mask: np.ndarray | None = None) -> tuple[float, dict[str, np.ndarray]]:
        """Weighted cross-entropy and its analytic gradient w.r.t. trainable arrays.

        ``dropout_mask`` (same shape as X, already scaled by 1/(1-p)) multiplies the
        adapter branch input only.
        """
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        n = X.shape[0]
        if n == 0:
            raise InputError("empty batch")
        w = np.asarray(class_weights, dtype=float)[y]
        Xa = X * dropout_mask if (dropout_mask is not None and self.adapter is not None) else X
        H = np.tanh(self._hidden_pre(X, Xa))
        Z = self.head.forward(H)
        Z = Z - Z.max(axis=1, keepdims=True)
        logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
        loss = float(np.sum(-w * logp[np.arange(n), y]) / n)

        dZ = np.exp(logp)
        dZ[np.arange(n), y] -= 1.0
        dZ *= (w / n)[:, None]
        grads = {"W2": dZ.T @ H, "b2": dZ.sum(axis=0)}
        dpre = (dZ @ self.head.W) * (1.0 - H * H)
        if self.mode == "full":
            grads["W1"] = dpre.T @ X
            grads["b1"] = dpre.sum(axis=0)
        else:
            s = self.adapter.scale
            U = Xa @ self.adapter.A.T
            grads["B"] = s * (dpre.T @ U)
            grads["A"] = s * ((dpre @ self.adapter.B).T @ Xa)
        return loss, grads

    def merged(self) -> "LabModel":
        """Equivalent model with the adapter folded into W1 (mode becomes full)."""
        hidden = merge(self.hidden, self.adapter) if self.adapter is not None else DenseLayer(
            self.hidden.W.copy(), self.hidden.b.copy())
        return LabModel(hidden, DenseLayer(self.head.W.copy(), self.head.b.copy()), "full",
                        None, self.seed)

    # -- checkpoint

    def to_checkpoint(self) -> dict:
        weights = {"W1": self.hidden.W, "b1": self.hidden.b, "W2": self.head.W, "b2": self.head.b}
        if self.adapter is not None:
            weights.update(A=self.adapter.A, B=self.adapter.B)
        return {
            "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "mode": self.mode, "seed": self.seed,
            "dims": {"d_in": self.hidden.d_in, "d_hidden": self.hidden.d_out, "d_out": 3,
                     "rank": self.adapter.rank if self.adapter is not None else None},
            "alpha": self.adapter.alpha if self.adapter is not None else None,
            "lora_dropout": self.adapter.dropout_rate if self.adapter is not None else None,
            "weights": {k: {"shape": list(v.shape), "data": v.ravel(order="C").tolist()}
                        for k, v in weights.items()},
        }

    @classmethod
    def from_checkpoint(cls, ck: dict) -> "LabModel":
        if ck.get("format") != CHECKPOINT_FORMAT or "version" not in ck:
            raise InputError("not a lab checkpoint")
        if ck["version"] != CHECKPOINT_VERSION:
            raise InputError(f"unsupported checkpoint version {ck['version']!r}")
        arr = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in ck["weights"].items()}
        adapter = None
        if ck["mode"] == "lora":
            adapter = LoraAdapter(arr["A"], arr["B"], ck["alpha"], ck["lora_dropout"])
        return cls(DenseLayer(arr["W1"], arr["b1"]), DenseLayer(arr["W2"], arr["b2"]),
                   ck["mode"], adapter, ck["seed"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_checkpoint()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LabModel":
        return cls.from_checkpoint(json.loads(Path(path).read_text(encoding="utf-8")))


def grad_check(model: LabModel, X: np.ndarray, y: np.ndarray, class_weights: Sequence[float] = (1, 1, 1),
               eps: float = 1e-5, max_entries: int | None = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per entry is ``|g - g_fd| / max(|g|, |g_fd|, 1e-6)``.  With
    ``max_entries`` set, larger arrays are checked on a seeded random subset.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise InputError("grad check needs a non-empty batch")
    _, grads = model.loss_and_grads(X, y, class_weights)
    worst = 0.0
    for name, p in model.trainable().items():
        flat = p.reshape(-1)  # view
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "grad_check", name)))
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        g = grads[name].reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            lp, _ = model.loss_and_grads(X, y, class_weights)
            flat[i] = old - eps
            lm, _ = model.loss_and_grads(X, y, class_weights)
            flat[i] = old
            fd = (lp - lm) / (2 * eps)
            err = abs(g[i] - fd) / max(abs(g[i]), abs(fd), 1e-6)
            worst = max(worst, err)
    return worst


# -- schedulers -----------------------------------------------------------

class ConstantLR:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, metric: float) -> float:
        return self.lr


class ReduceOnPlateau:
    """Multiply lr by ``factor`` whenever the metric fails to beat the best so far by ``min_delta``."""

    def __init__(self, lr: float, factor: float = 0.5, min_delta: float = 0.001):
        if not 0.0 < factor < 1.0:
            raise InputError("plateau factor must lie in (0, 1)")
        self.lr = lr
        self.factor = factor
        self.min_delta = min_delta
        self.best = -math.inf
        self.reductions = 0

    def step(self, metric: float) -> float:
        if metric - self.best < self.min_delta:
            self.lr *= self.factor
            self.reductions += 1
        self.best = max(self.best, metric)
        return self.lr


# -- training -------------------------------------------------------------

@dataclass
class TrainConfig:
    mode: str = "lora"
    learning_rate: float = 0.5
    class_weights: tuple = (1.0, 1.0, 1.0)
    scheduler: str = "reduce_on_plateau"
    plateau_min_delta: float = 0.001
    plateau_factor: float = 0.5
    validation_every: float = 0.10
    seed: int = 0
    rank: int = 4
    alpha: float = 4.0
    lora_dropout: float = 0.0
    d_in: int = DEFAULT_D_IN
    d_hidden: int = 32
    batch_size: int = 16
    epochs: int = 3
    weight_decay: float = 0.0
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.mode not in ("full", "lora"):
            raise InputError(f"mode must be 'full' or 'lora', got {self.mode!r}")
        if self.scheduler not in ("constant", "reduce_on_plateau"):
            raise InputError(f"unknown scheduler {self.scheduler!r}")
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")
        if len(self.class_weights) != 3 or any(w < 0 for w in self.class_weights):
            raise InputError("class_weights must be three non-negative numbers")
        if not 0.0 < self.plateau_factor < 1.0:
            raise InputError("plateau_factor must lie in (0, 1)")
        if not 0.0 < self.validation_every <= 1.0:
            raise InputError("validation_every must lie in (0, 1]")
        if not 0.0 < self.val_fraction < 1.0:
            raise InputError("val_fraction must lie in (0, 1)")
        self.class_weights = tuple(float(w) for w in self.class_weights)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class HistoryEntry:
    step: int
    lr: float
    val_micro_f1: float


@dataclass
class TrainResult:
    model: LabModel
    history: list[HistoryEntry] = field(default_factory=list)
    train_size: int = 0
    val_size: int = 0


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    order = list(range(n))
    SplitMix64.stream(seed, "train_val_split").shuffle(order)
    n_val = max(1, int(round(n * val_fraction)))
    return sorted(order[n_val:]), sorted(order[:n_val])


def micro_f1(model: LabModel, X: np.ndarray, y: np.ndarray) -> float:
    return f1_scores(ConfusionMatrix3.from_labels(y, model.predict(X))).micro


def train(texts: Sequence[str], labels: Sequence[int], config: TrainConfig = TrainConfig(),
          val_metric: Callable[[LabModel, int], float] | None = None) -> TrainResult:
    """Mini-batch gradient descent with periodic validation and lr scheduling.

    Validation runs each time another ``validation_every`` fraction of the
    training split has been consumed.  Each history row holds the step, the
    lr in force after the scheduler saw that validation, and the validation
    micro f1.  ``val_metric`` replaces the measured f1 (for scripted curves).
    """
    if len(texts) != len(labels):
        raise InputError("texts and labels differ in length")
    y_all = np.array([int(v) for v in labels], dtype=int)
    tr, va = split_indices(len(texts), config.val_fraction, config.seed)
    if set(y_all[tr].tolist()) != {0, 1, 2}:
        raise InputError("training split must contain all three classes")
    X_all = featurize_all(list(texts), config.d_in)
    X_tr, y_tr, X_va, y_va = X_all[tr], y_all[tr], X_all[va], y_all[va]

    model = LabModel.create(config.d_in, config.d_hidden, config.mode, config.rank,
                            config.alpha, config.lora_dropout, config.seed)
    sched = (ReduceOnPlateau(config.learning_rate, config.plateau_factor, config.plateau_min_delta)
             if config.scheduler == "reduce_on_plateau" else ConstantLR(config.learning_rate))
    result = TrainResult(model, [], len(tr), len(va))
    interval = max(1, math.ceil(config.validation_every * len(tr)))
    next_val, seen, step = interval, 0, 0
    p = config.lora_dropout if config.mode == "lora" else 0.0
    for epoch in range(config.epochs):
        order = list(range(len(tr)))
        SplitMix64.stream(config.seed, "epoch", epoch).shuffle(order)
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            Xb, yb = X_tr[idx], y_tr[idx]
            mask = None
            if p > 0:
                g = np.random.Generator(np.random.PCG64(derive_seed(config.seed, "adapter_dropout", step)))
                mask = (g.random(Xb.shape) >= p) / (1.0 - p)
            _, grads = model.loss_and_grads(Xb, yb, config.class_weights, mask)
            lr = sched.lr
            for name, param in model.trainable().items():
                param -= lr * grads[name]
                if config.weight_decay:
                    param -= lr * config.weight_decay * param
            step += 1
            seen += len(idx)
            while seen >= next_val:
                f1 = val_metric(model, step) if val_metric is not None else micro_f1(model, X_va, y_va)
                result.history.append(HistoryEntry(step, sched.step(f1), f1))
                next_val += interval
    return result
