"""Neuron aggregation functions with analytic gradients.

A :class:`NeuronParams` holds a *bank* of ``width`` neurons of one kind that
all read the same ``d`` inputs; every array carries the bank on its leading
axis.  A single neuron is simply a bank of width one.  Pre-activations are
computed here; activations belong to the network layer.

Kinds
-----
``task_poly``   sum_k w_k^T (x ⊙^k x) + b over the template's positive degrees
``task_trig``   sum_i f(v_i x_i; c) + w^T x + b for a trigonometric tree ``f``
``linear``      w^T x + b
``quad_goyal``  w^T (x ⊙ x) + b
``quad_bu``     (w1^T x)(w2^T x) + b
``quad_xu``     (w1^T x)(w2^T x) + w3^T x + b
``quad_fan``    (w1^T x)(w2^T x) + w3^T (x ⊙ x) + b
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .expr import ARITY, VAR, PolyTemplate, TrigTemplate, is_const, template_from_json

KINDS = ("task_poly", "task_trig", "linear", "quad_fan", "quad_xu", "quad_bu", "quad_goyal")
TASK_KINDS = ("task_poly", "task_trig")
INIT_RULES = ("uniform", "template", "zeros")

_QUAD_VECTORS = {"linear": ("w",), "quad_goyal": ("w",), "quad_bu": ("w1", "w2"),
                 "quad_xu": ("w1", "w2", "w3"), "quad_fan": ("w1", "w2", "w3")}


class ShapeError(ValueError):
    pass


def degree_key(k):
    return f"w{k}"


@dataclass
class NeuronParams:
    kind: str
    arrays: dict
    template: PolyTemplate | TrigTemplate | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown neuron kind {self.kind!r}")
        self.arrays = {k: np.asarray(v, dtype=float) for k, v in self.arrays.items()}
        if self.kind == "task_poly":
            expected = self.d * len(self.degrees) + 1
            if self.params_per_neuron != expected:
                raise ShapeError(f"task_poly neuron has {self.params_per_neuron} parameters, expected {expected}")

    @property
    def width(self):
        return self.arrays["b"].shape[0]

    @property
    def d(self):
        for key, value in self.arrays.items():
            if value.ndim == 2 and key != "c":
                return value.shape[1]
        raise ShapeError("no weight vectors")

    @property
    def degrees(self):
        if self.kind != "task_poly":
            return ()
        return tuple(sorted((int(k[1:]) for k in self.arrays if k.startswith("w")), reverse=True))

    @property
    def n_params(self):
        return int(sum(v.size for v in self.arrays.values()))

    @property
    def params_per_neuron(self):
        return self.n_params // self.width

    def all_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())

    def copy(self):
        return NeuronParams(self.kind, {k: v.copy() for k, v in self.arrays.items()},
                            self.template, dict(self.meta))

    def neuron(self, j):
        """The ``j``-th neuron of the bank as a width-one bank."""
        return NeuronParams(self.kind, {k: v[j:j + 1].copy() for k, v in self.arrays.items()},
                            self.template, dict(self.meta))

    def to_json(self):
        return {
            "kind": self.kind,
            "template": None if self.template is None else self.template.to_json(),
            "arrays": {k: v.tolist() for k, v in self.arrays.items()},
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, data):
        tmpl = data.get("template")
        return cls(data["kind"], {k: np.asarray(v, dtype=float) for k, v in data["arrays"].items()},
                   None if tmpl is None else template_from_json(tmpl), dict(data.get("meta", {})))


@dataclass
class NeuronGrad:
    """Parameter gradients (same keys/shapes as the params) plus input gradient."""

    arrays: dict
    dx: np.ndarray


# --- construction ----------------------------------------------------------

def init_scale(fan_in):
    return math.sqrt(6.0 / (fan_in + 1))


def _vector(rng, width, d, init):
    if init == "zeros":
        return np.zeros((width, d))
    a = init_scale(d)
    return rng.uniform(-a, a, size=(width, d))


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def count_per_neuron(kind, fan_in, template=None):
    if kind == "task_poly":
        return fan_in * len(template.positive_degrees) + 1
    if kind == "task_trig":
        return len(template.slots) + fan_in * (2 if template.linear_tail else 1) + 1
    return fan_in * len(_QUAD_VECTORS[kind]) + 1


def build_bank(kind, d, width=1, template=None, init_rule="uniform", rng=None):
    """A bank of ``width`` freshly initialised neurons of one kind."""
    if d < 1 or width < 1:
        raise ShapeError("need d >= 1 and width >= 1")
    if init_rule not in INIT_RULES:
        raise ValueError(f"unknown init rule {init_rule!r}")
    rng = _rng(rng)
    if kind == "task_poly":
        if not isinstance(template, PolyTemplate):
            raise ValueError("task_poly neurons need a PolyTemplate")
        degrees = template.positive_degrees
        if not degrees:
            raise ValueError(f"template {template} has no positive-degree term")
        arrays = {}
        for k in degrees:
            if init_rule == "template":
                arrays[degree_key(k)] = np.full((width, d), template.terms[k])
            else:
                arrays[degree_key(k)] = _vector(rng, width, d, init_rule)
        b = d * template.constant if init_rule == "template" else 0.0
        arrays["b"] = np.full(width, b)
        meta = {"template_constant_dropped": template.constant} if template.constant else {}
        return NeuronParams(kind, arrays, template, meta)
    if kind == "task_trig":
        if not isinstance(template, TrigTemplate):
            raise ValueError("task_trig neurons need a TrigTemplate")
        consts = np.asarray(template.constants, dtype=float)
        arrays = {"c": np.tile(consts, (width, 1)).reshape(width, len(consts))}
        if init_rule == "template":
            arrays["v"] = np.ones((width, d))
            if template.linear_tail:
                arrays["w"] = np.ones((width, d))
            arrays["b"] = np.full(width, 1.0 if template.linear_tail else 0.0)
        else:
            arrays["v"] = _vector(rng, width, d, init_rule)
            if template.linear_tail:
                arrays["w"] = _vector(rng, width, d, init_rule)
            arrays["b"] = np.zeros(width)
        return NeuronParams(kind, arrays, template, {"linear_tail": template.linear_tail})
    if kind in _QUAD_VECTORS:
        arrays = {name: _vector(rng, width, d, "zeros" if init_rule == "zeros" else "uniform")
                  for name in _QUAD_VECTORS[kind]}
        arrays["b"] = np.zeros(width)
        return NeuronParams(kind, arrays)
    raise ValueError(f"unknown neuron kind {kind!r}")


def build_neuron(template, d, init_rule="uniform", rng=None):
    """Task-based polynomial neuron: one weight vector per positive degree plus a bias.

    The template's learned coefficients are discarded (random init) unless
    ``init_rule == 'template'``; its constant maps onto the bias.
    """
    return build_bank("task_poly", d, 1, template, init_rule, rng)


def build_trig_neuron(template, d, init_rule="uniform", rng=None):
    return build_bank("task_trig", d, 1, template, init_rule, rng)


# --- trigonometric tree with reverse mode ----------------------------------

def _trig_nodes(program):
    """(token, children, slot) per prefix position."""
    nodes = [None] * len(program)
    slot = 0

    def walk(i):
        nonlocal slot
        tok = program[i]
        arity = ARITY.get(tok, 0)
        children = []
        j = i + 1
        for _ in range(arity):
            children.append(j)
            j = walk(j)
        s = None
        if is_const(tok):
            s = slot
            slot += 1
        nodes[i] = (tok, tuple(children), s)
        return j

    walk(0)
    return nodes


def _trig_forward(params, X):
    program = params.template.tree.program
    nodes = _trig_nodes(program)
    c, v = params.arrays["c"], params.arrays["v"]
    n = X.shape[0]
    shape = (n, params.width, X.shape[1])
    leaf = X[:, None, :] * v[None, :, :]
    values = [None] * len(nodes)
    for i in range(len(nodes) - 1, -1, -1):
        tok, ch, s = nodes[i]
        if tok == VAR:
            values[i] = leaf
        elif s is not None:
            values[i] = np.broadcast_to(c[None, :, s, None], shape)
        elif tok == "add":
            values[i] = values[ch[0]] + values[ch[1]]
        elif tok == "sub":
            values[i] = values[ch[0]] - values[ch[1]]
        elif tok == "mul":
            values[i] = values[ch[0]] * values[ch[1]]
        elif tok == "sin":
            values[i] = np.sin(values[ch[0]])
        else:
            values[i] = np.cos(values[ch[0]])
    return nodes, values


def _trig_backward(params, X, dZ, nodes, values):
    n, m, d = X.shape[0], params.width, X.shape[1]
    adj = [None] * len(nodes)
    adj[0] = np.broadcast_to(dZ[:, :, None], (n, m, d))
    dc = np.zeros_like(params.arrays["c"])
    dleaf = np.zeros((n, m, d))
    for i, (tok, ch, s) in enumerate(nodes):
        g = adj[i]
        if g is None:
            continue
        if tok == VAR:
            dleaf += g
            continue
        if s is not None:
            dc[:, s] += g.sum(axis=(0, 2))
            continue
        if tok == "add":
            parts = ((ch[0], g), (ch[1], g))
        elif tok == "sub":
            parts = ((ch[0], g), (ch[1], -g))
        elif tok == "mul":
            parts = ((ch[0], g * values[ch[1]]), (ch[1], g * values[ch[0]]))
        elif tok == "sin":
            parts = ((ch[0], g * np.cos(values[ch[0]])),)
        else:
            parts = ((ch[0], -g * np.sin(values[ch[0]])),)
        for j, gj in parts:
            adj[j] = gj if adj[j] is None else adj[j] + gj
    v = params.arrays["v"]
    dv = np.einsum("nmd,nd->md", dleaf, X)
    dX = np.einsum("nmd,md->nd", dleaf, v)
    return {"c": dc, "v": dv}, dX


# --- forward / backward over a batch ---------------------------------------

def _check(params, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.d:
        raise ShapeError(f"expected inputs of width {params.d}, got shape {X.shape}")
    return X


def bank_forward(params, X):
    """Pre-activations ``(n, width)`` for a batch ``X`` of shape ``(n, d)``."""
    X = _check(params, X)
    a = params.arrays
    kind = params.kind
    if kind == "task_poly":
        Z = np.zeros((X.shape[0], params.width))
        for k in params.degrees:
            Z += (X ** k) @ a[degree_key(k)].T
    elif kind == "task_trig":
        _, values = _trig_forward(params, X)
        Z = values[0].sum(axis=2)
        if "w" in a:
            Z = Z + X @ a["w"].T
    elif kind == "linear":
        Z = X @ a["w"].T
    elif kind == "quad_goyal":
        Z = (X * X) @ a["w"].T
    else:
        Z = (X @ a["w1"].T) * (X @ a["w2"].T)
        if kind == "quad_xu":
            Z += X @ a["w3"].T
        elif kind == "quad_fan":
            Z += (X * X) @ a["w3"].T
    return Z + a["b"]


def bank_backward(params, X, dZ):
    """Gradients of ``sum(dZ * Z)``: parameter dict and ``dX`` of shape ``(n, d)``."""
    X = _check(params, X)
    dZ = np.asarray(dZ, dtype=float).reshape(X.shape[0], params.width)
    a = params.arrays
    kind = params.kind
    grads = {"b": dZ.sum(axis=0)}
    if kind == "task_poly":
        dX = np.zeros_like(X)
        for k in params.degrees:
            W = a[degree_key(k)]
            grads[degree_key(k)] = dZ.T @ (X ** k)
            dX += k * (X ** (k - 1)) * (dZ @ W)
    elif kind == "task_trig":
        nodes, values = _trig_forward(params, X)
        tree_grads, dX = _trig_backward(params, X, dZ, nodes, values)
        grads.update(tree_grads)
        if "w" in a:
            grads["w"] = dZ.T @ X
            dX = dX + dZ @ a["w"]
    elif kind == "linear":
        grads["w"] = dZ.T @ X
        dX = dZ @ a["w"]
    elif kind == "quad_goyal":
        grads["w"] = dZ.T @ (X * X)
        dX = 2 * X * (dZ @ a["w"])
    else:
        A = X @ a["w1"].T
        B = X @ a["w2"].T
        dA, dB = dZ * B, dZ * A
        grads["w1"] = dA.T @ X
        grads["w2"] = dB.T @ X
        dX = dA @ a["w1"] + dB @ a["w2"]
        if kind == "quad_xu":
            grads["w3"] = dZ.T @ X
            dX += dZ @ a["w3"]
        elif kind == "quad_fan":
            grads["w3"] = dZ.T @ (X * X)
            dX += 2 * X * (dZ @ a["w3"])
    return {k: grads[k] for k in a}, dX


# --- single-neuron convenience ---------------------------------------------

def neuron_forward(params, x):
    """Pre-activation of a single neuron for one input vector (or a batch)."""
    x = np.asarray(x, dtype=float)
    if params.width != 1:
        raise ShapeError("neuron_forward expects a single neuron")
    if x.ndim == 1:
        if x.shape[0] != params.d:
            raise ShapeError(f"expected input of length {params.d}, got {x.shape[0]}")
        return float(bank_forward(params, x[None, :])[0, 0])
    return bank_forward(params, x)[:, 0]


def neuron_backward(params, x, upstream=1.0):
    """Gradient of ``upstream * neuron_forward(params, x)`` for one input vector."""
    x = np.asarray(x, dtype=float)
    if params.width != 1:
        raise ShapeError("neuron_backward expects a single neuron")
    if x.ndim != 1 or x.shape[0] != params.d:
        raise ShapeError(f"expected input of length {params.d}, got shape {x.shape}")
    grads, dX = bank_backward(params, x[None, :], np.array([[float(upstream)]]))
    return NeuronGrad(grads, dX[0])
