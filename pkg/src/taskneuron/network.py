"""Fully connected networks over any neuron kind, trained with RMSProp or Adam."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .expr import template_from_json
from .neuron import (
    KINDS,
    TASK_KINDS,
    NeuronParams,
    bank_backward,
    bank_forward,
    build_bank,
    count_per_neuron,
)

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


def parse_structure(text):
    """``"5-3-1"`` -> ``[5, 3, 1]``; commas are accepted as separators too."""
    parts = str(text).replace(",", "-").split("-")
    try:
        widths = [int(p) for p in parts if p.strip()]
    except ValueError:
        raise ValueError(f"bad layer structure {text!r}") from None
    if not widths or min(widths) < 1:
        raise ValueError(f"layer widths must all be >= 1, got {text!r}")
    return widths


@dataclass
class NetworkSpec:
    """Layer widths including the output layer, e.g. ``[5, 3, 1]``."""

    layer_widths: list
    neuron_kind: str | list = "linear"
    activation: str = "relu"
    task: str = "regression"

    def __post_init__(self):
        if isinstance(self.layer_widths, str):
            self.layer_widths = parse_structure(self.layer_widths)
        self.layer_widths = [int(w) for w in self.layer_widths]
        if not self.layer_widths or min(self.layer_widths) < 1:
            raise ValueError(f"layer widths must all be >= 1, got {self.layer_widths}")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "regression" and self.layer_widths[-1] != 1:
            raise ValueError("regression networks need a single output")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for kind in self.kinds:
            if kind not in KINDS:
                raise ValueError(f"unknown neuron kind {kind!r}")

    @property
    def kinds(self):
        if isinstance(self.neuron_kind, str):
            return [self.neuron_kind] * len(self.layer_widths)
        if len(self.neuron_kind) != len(self.layer_widths):
            raise ValueError("one neuron kind per layer is required")
        return list(self.neuron_kind)

    @property
    def structure(self):
        return "-".join(map(str, self.layer_widths))

    @property
    def output_dim(self):
        return self.layer_widths[-1]

    def to_json(self):
        return asdict(self)


@dataclass
class TrainConfig:
    optimizer: str = "rmsprop"
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 500
    loss: str = "mse"
    seed: int = 0
    rmsprop_decay: float = 0.9
    adam_betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("rmsprop", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("mse", "cross_entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_json(self):
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def for_task(cls, task, **overrides):
        """RMSProp + MSE for regression, Adam + cross-entropy for classification."""
        base = {"optimizer": "rmsprop", "loss": "mse"} if task == "regression" else \
               {"optimizer": "adam", "loss": "cross_entropy"}
        base.update(overrides)
        return cls(**base)


@dataclass
class TrainedModel:
    spec: NetworkSpec
    layers: list
    d_input: int
    template: object = None
    history: list = field(default_factory=list)
    epochs_done: int = 0

    @property
    def n_params(self):
        return sum(layer.n_params for layer in self.layers)

    @property
    def structure_string(self):
        return f"{self.spec.structure}({self.n_params})"

    def copy(self):
        return TrainedModel(self.spec, [layer.copy() for layer in self.layers], self.d_input,
                            self.template, [dict(h) for h in self.history], self.epochs_done)

    def parameters(self):
        return [layer.arrays for layer in self.layers]

    def to_json(self):
        return {
            "spec": self.spec.to_json(),
            "d_input": self.d_input,
            "template": None if self.template is None else self.template.to_json(),
            "layers": [layer.to_json() for layer in self.layers],
            "history": self.history,
            "epochs_done": self.epochs_done,
            "n_params": self.n_params,
        }

    @classmethod
    def from_json(cls, data):
        tmpl = data.get("template")
        return cls(NetworkSpec(**data["spec"]), [NeuronParams.from_json(x) for x in data["layers"]],
                   data["d_input"], None if tmpl is None else template_from_json(tmpl),
                   data.get("history", []), data.get("epochs_done", 0))


# --- construction ----------------------------------------------------------

def count_parameters(spec, d_input, template=None):
    """Analytic parameter count of a network."""
    total = 0
    fan_in = d_input
    for width, kind in zip(spec.layer_widths, spec.kinds):
        total += width * count_per_neuron(kind, fan_in, template)
        fan_in = width
    return total


def build_network(spec, template, d_input, rng=None, init_rule="uniform"):
    if d_input < 1:
        raise ValueError("d_input must be >= 1")
    kinds = spec.kinds
    if any(k in TASK_KINDS for k in kinds) and template is None:
        raise ValueError("task-based layers need a template")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    layers = []
    fan_in = d_input
    for width, kind in zip(spec.layer_widths, kinds):
        layers.append(build_bank(kind, fan_in, width, template if kind in TASK_KINDS else None,
                                 init_rule, rng))
        fan_in = width
    model = TrainedModel(spec, layers, d_input, template)
    expected = count_parameters(spec, d_input, template)
    if model.n_params != expected:
        raise AssertionError(f"parameter count {model.n_params} != analytic {expected}")
    return model


# --- propagation -----------------------------------------------------------

def _activate(name, Z):
    if name == "relu":
        return np.maximum(Z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-np.clip(Z, -500, 500)))
    if name == "tanh":
        return np.tanh(Z)
    return Z


def _activate_grad(name, Z, A):
    if name == "relu":
        return (Z > 0).astype(float)
    if name == "sigmoid":
        return A * (1.0 - A)
    if name == "tanh":
        return 1.0 - A * A
    return np.ones_like(Z)


def forward(model, X, cache=False):
    """Network outputs ``(n, output_dim)``; the last layer has no activation."""
    A = np.atleast_2d(np.asarray(X, dtype=float))
    if A.shape[1] != model.d_input:
        raise ValueError(f"batch has {A.shape[1]} features, model expects {model.d_input}")
    trace = []
    last = len(model.layers) - 1
    with np.errstate(over="ignore", invalid="ignore"):
        for i, layer in enumerate(model.layers):
            Z = bank_forward(layer, A)
            act = "identity" if i == last else model.spec.activation
            out = _activate(act, Z)
            trace.append((A, Z, out, act))
            A = out
    return (A, trace) if cache else A


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(outputs, targets, loss):
    """Mean loss over the batch and its gradient w.r.t. the outputs."""
    n = outputs.shape[0]
    if loss == "mse":
        t = np.asarray(targets, dtype=float).reshape(outputs.shape)
        with np.errstate(over="ignore", invalid="ignore"):
            diff = outputs - t
            return float(np.mean(diff ** 2)), 2.0 * diff / diff.size
    if loss == "cross_entropy":
        t = np.asarray(targets, dtype=int).ravel()
        p = softmax(outputs)
        value = -float(np.mean(np.log(np.clip(p[np.arange(n), t], 1e-300, None))))
        g = p.copy()
        g[np.arange(n), t] -= 1.0
        return value, g / n
    raise ValueError(f"unknown loss {loss!r}")


def backward(model, X, targets, loss="mse"):
    """Loss value and per-layer gradient dicts (mean-over-batch convention)."""
    outputs, trace = forward(model, X, cache=True)
    value, grad = loss_and_grad(outputs, targets, loss)
    grads = [None] * len(model.layers)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(len(model.layers) - 1, -1, -1):
            A_in, Z, A_out, act = trace[i]
            dZ = grad * _activate_grad(act, Z, A_out)
            grads[i], grad = bank_backward(model.layers[i], A_in, dZ)
    return value, grads


def predict(model, X):
    out = forward(model, X)
    if model.spec.task == "classification":
        return np.argmax(out, axis=1)
    return out[:, 0]


# --- optimizers ------------------------------------------------------------

class RMSProp:
    def __init__(self, lr=1e-3, decay=0.9, eps=1e-8):
        self.lr, self.decay, self.eps = lr, decay, eps
        self.state = None

    def step(self, params, grads):
        if self.state is None:
            self.state = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        for p, g, s in zip(params, grads, self.state):
            for k in p:
                s[k] = self.decay * s[k] + (1.0 - self.decay) * g[k] * g[k]
                p[k] -= self.lr * g[k] / (np.sqrt(s[k]) + self.eps)

    def state_dict(self):
        return {"v": self.state}


class Adam:
    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.t = 0
        self.m = self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
            self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            for k in p:
                m[k] = self.b1 * m[k] + (1.0 - self.b1) * g[k]
                v[k] = self.b2 * v[k] + (1.0 - self.b2) * g[k] * g[k]
                p[k] -= self.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + self.eps)

    def state_dict(self):
        return {"t": self.t, "m": self.m, "v": self.v}


def make_optimizer(config):
    if config.optimizer == "rmsprop":
        return RMSProp(config.learning_rate, config.rmsprop_decay, config.eps)
    return Adam(config.learning_rate, config.adam_betas, config.eps)


def rmsprop_step(params, grads, state, lr, decay=0.9, eps=1e-8):
    """Functional RMSProp update on flat dicts; returns ``(params, state)``."""
    state = {k: decay * state.get(k, 0.0) + (1 - decay) * grads[k] ** 2 for k in params}
    new = {k: params[k] - lr * grads[k] / (np.sqrt(state[k]) + eps) for k in params}
    return new, state


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """Functional Adam update on flat dicts; ``state`` holds ``t``, ``m``, ``v``."""
    b1, b2 = betas
    t = state.get("t", 0) + 1
    m = {k: b1 * state.get("m", {}).get(k, 0.0) + (1 - b1) * grads[k] for k in params}
    v = {k: b2 * state.get("v", {}).get(k, 0.0) + (1 - b2) * grads[k] ** 2 for k in params}
    new = {k: params[k] - lr * (m[k] / (1 - b1 ** t)) / (np.sqrt(v[k] / (1 - b2 ** t)) + eps)
           for k in params}
    return new, {"t": t, "m": m, "v": v}


# --- training --------------------------------------------------------------

def evaluate(model, X, y):
    """Test metric: MSE for regression, accuracy for classification."""
    if model.spec.task == "classification":
        return float(np.mean(predict(model, X) == np.asarray(y, dtype=int)))
    return float(np.mean((predict(model, X) - np.asarray(y, dtype=float)) ** 2))


@dataclass
class TrainState:
    """Everything needed to resume training bit-for-bit."""

    optimizer: object
    rng: np.random.Generator


def train(model, dataset, config, state=None, train_split="train", test_split="test"):
    """Mini-batch training; returns ``(model, metrics)``.

    The model is updated in place.  Pass the returned ``metrics['state']`` back
    in as ``state`` to continue training exactly where it stopped.
    """
    X, y = dataset.part(train_split) if dataset.splits else (dataset.X, dataset.y)
    if test_split in dataset.splits:
        X_test, y_test = dataset.part(test_split)
    else:
        X_test, y_test = X, y
    if state is None:
        state = TrainState(make_optimizer(config), np.random.default_rng(config.seed))
    n = X.shape[0]
    for _ in range(config.epochs):
        order = state.rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            value, grads = backward(model, X[idx], y[idx], config.loss)
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {model.epochs_done}",
                                       model.history)
            state.optimizer.step(model.parameters(), grads)
            total += value * idx.size
        model.epochs_done += 1
        test_metric = evaluate(model, X_test, y_test)
        if not math.isfinite(test_metric):
            raise TrainingDiverged(f"non-finite test metric at epoch {model.epochs_done}",
                                   model.history)
        model.history.append({"epoch": model.epochs_done, "train_loss": total / n,
                              "test_metric": test_metric})
    metrics = {
        "train_metric": evaluate(model, X, y),
        "test_metric": evaluate(model, X_test, y_test),
        "metric": "accuracy" if model.spec.task == "classification" else "mse",
        "n_params": model.n_params,
        "epochs": model.epochs_done,
        "state": state,
    }
    return model, metrics


# --- persistence -----------------------------------------------------------

def _to_lists(obj):
    if isinstance(obj, np.ndarray):
        return {"__array__": obj.tolist()}
    if isinstance(obj, dict):
        return {k: _to_lists(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_to_lists(v) for v in obj]
    return obj


def _from_lists(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            return np.asarray(obj["__array__"], dtype=float)
        return {k: _from_lists(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_from_lists(v) for v in obj]
    return obj


def save_checkpoint(path, model, config=None, state=None):
    """Write a JSON checkpoint (floats are stored with full precision)."""
    payload = {"model": model.to_json()}
    if config is not None:
        payload["train_config"] = config.to_json()
    if state is not None:
        opt = state.optimizer
        payload["optimizer"] = {"type": type(opt).__name__, **_to_lists(opt.state_dict())}
        payload["rng"] = state.rng.bit_generator.state
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload))
    return path


def load_checkpoint(path):
    """Return ``(model, train_config or None, TrainState or None)``."""
    payload = json.loads(Path(path).read_text())
    model = TrainedModel.from_json(payload["model"])
    config = TrainConfig(**payload["train_config"]) if "train_config" in payload else None
    state = None
    if "optimizer" in payload and config is not None:
        opt = make_optimizer(config)
        saved = _from_lists(payload["optimizer"])
        if isinstance(opt, RMSProp):
            opt.state = saved["v"]
        else:
            opt.t, opt.m, opt.v = int(saved["t"]), saved["m"], saved["v"]
        rng = np.random.default_rng()
        rng.bit_generator.state = payload["rng"]
        state = TrainState(opt, rng)
    return model, config, state


def write_history_csv(path, history):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "test_metric"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["test_metric"])])
    return path
