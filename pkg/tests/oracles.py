"""Independent reference computations shared by the tests."""

import math

import numpy as np

from taskneuron.expr import ExpressionTree, PolyTemplate, TrigTemplate
from taskneuron.neuron import bank_backward, bank_forward, build_bank
from taskneuron.vsr import GpConfig, random_tree

H = 1e-5


def central_diff(f, array, h=H):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``array`` (in place)."""
    grad = np.zeros_like(array)
    flat, gflat = array.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_error(analytic, numeric, floor=1e-7):
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale)


def loop_oracle(program, z):
    """Recursive per-scalar evaluation, written independently of the stack machine."""
    def walk(i):
        tok = program[i]
        if tok == "x":
            return z, i + 1
        if isinstance(tok, float):
            return tok, i + 1
        if tok in ("sin", "cos"):
            a, j = walk(i + 1)
            return (math.sin(a) if tok == "sin" else math.cos(a)), j
        a, j = walk(i + 1)
        b, k = walk(j)
        return {"add": a + b, "sub": a - b, "mul": a * b}[tok], k

    return walk(0)[0]


def random_poly_template(rng, max_degree=4):
    k = int(rng.integers(1, max_degree + 1))
    degrees = set(rng.choice(np.arange(1, max_degree + 1), size=k, replace=False).tolist())
    if rng.random() < 0.5:
        degrees.add(0)
    return PolyTemplate({d: float(rng.uniform(0.5, 3)) for d in degrees})


def random_trig_template(rng):
    cfg = GpConfig(population_size=10, operator_set="trigonometric", max_depth=4,
                   const_range=(-1.0, 1.0))
    while True:
        tree = ExpressionTree(random_tree(cfg, rng, int(rng.integers(2, 5)), "grow"))
        if tree.uses_variable:
            return TrigTemplate(tree, linear_tail=bool(rng.random() < 0.7))


def random_bank(kind, rng, d=None, width=None):
    d = d or int(rng.integers(1, 5))
    width = width or int(rng.integers(1, 4))
    template = None
    if kind == "task_poly":
        template = random_poly_template(rng)
    elif kind == "task_trig":
        template = random_trig_template(rng)
    params = build_bank(kind, d, width, template, "uniform", rng)
    # non-zero biases and trig constants so every path is exercised
    for key, value in params.arrays.items():
        if key in ("b", "c"):
            value[...] = rng.uniform(-1, 1, size=value.shape)
    return params


def bank_gradient_errors(params, rng, n=3):
    """Worst relative error over all parameter arrays and the input."""
    X = rng.uniform(-1, 1, size=(n, params.d))
    dZ = rng.normal(size=(n, params.width))

    def objective():
        return float(np.sum(dZ * bank_forward(params, X)))

    grads, dX = bank_backward(params, X, dZ)
    errors = {key: rel_error(grads[key], central_diff(objective, params.arrays[key]))
              for key in params.arrays}
    errors["dX"] = rel_error(dX, central_diff(objective, X))
    return errors


def two_pass_mean_std(values):
    values = [float(v) for v in values]
    n = len(values)
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))
