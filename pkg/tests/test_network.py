import json

import numpy as np
import pytest

from oracles import central_diff, rel_error, random_poly_template, random_trig_template
from taskneuron.bench import synthetic_structures
from taskneuron.data import POLYNOMIALS, Dataset, SyntheticSpec, make_synthetic, normalize_minmax, split
from taskneuron.expr import PolyTemplate
from taskneuron.network import (
    Adam,
    NetworkSpec,
    RMSProp,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    backward,
    build_network,
    count_parameters,
    forward,
    load_checkpoint,
    loss_and_grad,
    parse_structure,
    predict,
    rmsprop_step,
    save_checkpoint,
    softmax,
    train,
    write_history_csv,
)
from taskneuron.neuron import KINDS, neuron_forward

# LN counts per structure as printed for the ten synthetic tasks (d = 10)
LN_COUNTS = {
    "p1": [25, 61, 77, 187, 303], "p2": [37, 73, 123, 249, 353], "p6": [49, 97, 139, 287, 401],
    "p10": [61, 121, 171, 359, 422],
}


# --- spec / counts -----------------------------------------------------------

def test_parse_structure():
    assert parse_structure("5-3-1") == [5, 3, 1]
    for bad in ("0-1", "", "a-1", "3--1x"):
        with pytest.raises(ValueError):
            parse_structure(bad)


def test_spec_invariants():
    with pytest.raises(ValueError):
        NetworkSpec([3, 2], "linear", task="regression")
    with pytest.raises(ValueError):
        NetworkSpec([2, 1], "linear", activation="swish")
    with pytest.raises(ValueError):
        NetworkSpec([2, 1], ["linear"])
    assert NetworkSpec("4-3", "linear", task="classification").output_dim == 3


def test_linear_count_by_hand():
    assert count_parameters(NetworkSpec("5-3-1", "linear"), 8) == 9 * 5 + 6 * 3 + 4 * 1 == 67


def test_ln_counts_match_table_convention():
    table = synthetic_structures()
    for poly, counts in LN_COUNTS.items():
        for s, expected in zip(("S1", "S2", "S3", "S4", "S5"), counts):
            ln, _ = table[poly][s]
            assert count_parameters(NetworkSpec(ln, "linear"), 10) == expected, (poly, s)


def test_tn_counts_never_exceed_paired_ln():
    table = synthetic_structures()
    for poly, template in POLYNOMIALS.items():
        for s, (ln, tn) in table[poly].items():
            ln_count = count_parameters(NetworkSpec(ln, "linear"), 10)
            tn_count = count_parameters(NetworkSpec(tn, "task_poly"), 10, template)
            assert tn_count <= ln_count, (poly, s)


def test_tn_count_under_two_vector_convention():
    # "1(21)" and "2-1(47)" correspond to two weight vectors per neuron at d = 10
    two = PolyTemplate({2: 1, 1: 1})
    assert count_parameters(NetworkSpec("1", "task_poly"), 10, two) == 21
    assert count_parameters(NetworkSpec("2-1", "task_poly"), 10, two) == 47
    # our literal count for the single-degree p1 template
    assert count_parameters(NetworkSpec("1", "task_poly"), 10, POLYNOMIALS["p1"]) == 11


def test_build_network_counts_and_template_requirement():
    m = build_network(NetworkSpec("2-1", "linear"), None, 10, rng=0)
    assert m.n_params == 25
    assert m.structure_string == "2-1(25)"
    with pytest.raises(ValueError):
        build_network(NetworkSpec("1", "task_poly"), None, 4, rng=0)


# --- forward -----------------------------------------------------------------

def test_constant_linear_neuron():
    m = build_network(NetworkSpec("1", "linear"), None, 3, init_rule="zeros")
    m.layers[0].arrays["b"][:] = 2.5
    np.testing.assert_array_equal(forward(m, np.random.default_rng(0).normal(size=(4, 3))), 2.5)


def test_sigmoid_of_zero():
    spec = NetworkSpec([1, 1], ["task_poly", "linear"], activation="sigmoid")
    m = build_network(spec, PolyTemplate({2: 1}), 3, init_rule="zeros")
    m.layers[1].arrays["w"][:] = 1.0
    assert forward(m, np.ones((1, 3)))[0, 0] == 0.5


def test_forward_matches_per_sample_loop():
    rng = np.random.default_rng(0)
    spec = NetworkSpec("4-3-1", ["quad_fan", "task_poly", "linear"], activation="sigmoid")
    m = build_network(spec, PolyTemplate({3: 1, 1: 1}), 5, rng=rng)
    X = rng.uniform(-1, 1, (6, 5))
    out = forward(m, X)
    for i, x in enumerate(X):
        a = x
        for li, layer in enumerate(m.layers):
            z = np.array([neuron_forward(layer.neuron(j), a) for j in range(layer.width)])
            a = z if li == len(m.layers) - 1 else 1 / (1 + np.exp(-z))
        np.testing.assert_allclose(out[i], a, rtol=1e-10, atol=1e-12)


def test_forward_rejects_wrong_width():
    m = build_network(NetworkSpec("1", "linear"), None, 3, rng=0)
    with pytest.raises(ValueError):
        forward(m, np.ones((2, 4)))


# --- backward ----------------------------------------------------------------

def _model_gradient_error(model, X, targets, loss):
    _, grads = backward(model, X, targets, loss)

    def objective():
        return loss_and_grad(forward(model, X), targets, loss)[0]

    worst = 0.0
    for layer, g in zip(model.layers, grads):
        for key, arr in layer.arrays.items():
            worst = max(worst, rel_error(g[key], central_diff(objective, arr)))
    return worst


def test_zero_loss_gives_zero_gradient():
    m = build_network(NetworkSpec("2-1", "linear"), None, 3, rng=0)
    X = np.random.default_rng(1).normal(size=(5, 3))
    y = forward(m, X)[:, 0]
    value, grads = backward(m, X, y, "mse")
    assert value == 0.0
    assert all(np.all(g[k] == 0) for g in grads for k in g)


def test_tiny_network_gradient():
    # one linear neuron on two inputs: three parameters
    m = build_network(NetworkSpec("1", "linear"), None, 2, rng=3)
    X = np.random.default_rng(4).normal(size=(7, 2))
    y = np.random.default_rng(5).normal(size=7)
    assert _model_gradient_error(m, X, y, "mse") <= 1e-4


def test_cross_entropy_gradient_closed_form():
    logits = np.array([[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]])
    targets = np.array([2, 0])
    _, g = loss_and_grad(logits, targets, "cross_entropy")
    expected = softmax(logits)
    expected[np.arange(2), targets] -= 1
    np.testing.assert_allclose(g, expected / 2, rtol=1e-14)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("loss", ["mse", "cross_entropy"])
def test_whole_model_gradients(kind, loss):
    rng = np.random.default_rng(KINDS.index(kind) * 7 + len(loss))
    for _ in range(10):
        template = None
        if kind == "task_poly":
            template = random_poly_template(rng, max_degree=3)
        elif kind == "task_trig":
            template = random_trig_template(rng)
        d = int(rng.integers(2, 4))
        out = 1 if loss == "mse" else 3
        task = "regression" if loss == "mse" else "classification"
        spec = NetworkSpec([2, out], kind, activation=str(rng.choice(["sigmoid", "tanh"])), task=task)
        m = build_network(spec, template, d, rng=rng)
        assert m.n_params <= 100
        X = rng.uniform(-1, 1, (4, d))
        y = rng.normal(size=4) if loss == "mse" else rng.integers(0, out, 4)
        assert _model_gradient_error(m, X, y, loss) <= 1e-4


# --- optimizers --------------------------------------------------------------

def test_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.zeros(2)}
    new, _ = rmsprop_step(p, g, {}, 0.1)
    np.testing.assert_array_equal(new["w"], p["w"])
    new, _ = adam_step(p, g, {}, 0.1)
    np.testing.assert_array_equal(new["w"], p["w"])


def test_rmsprop_first_step_closed_form():
    g, lr = 0.3, 0.01
    new, _ = rmsprop_step({"w": np.array(1.0)}, {"w": np.array(g)}, {}, lr)
    assert float(new["w"]) == pytest.approx(1.0 - lr * g / (np.sqrt(0.1 * g * g) + 1e-8), rel=1e-14)
    opt = RMSProp(lr)
    params = [{"w": np.array([1.0])}]
    opt.step(params, [{"w": np.array([g])}])
    assert params[0]["w"][0] == pytest.approx(float(new["w"]), rel=1e-14)


def test_adam_constant_gradient_step_tends_to_lr():
    lr, p, state = 0.01, {"w": np.array(0.0)}, {}
    prev = 0.0
    for _ in range(2000):
        p, state = adam_step(p, {"w": np.array(-0.7)}, state, lr)
        step = float(p["w"]) - prev
        prev = float(p["w"])
    assert step == pytest.approx(lr, rel=1e-6)
    opt = Adam(lr)
    params = [{"w": np.array([0.0])}]
    for _ in range(3):
        opt.step(params, [{"w": np.array([-0.7])}])
    assert opt.t == 3


def test_for_task_defaults():
    assert (TrainConfig.for_task("regression").optimizer, TrainConfig.for_task("regression").loss) == ("rmsprop", "mse")
    c = TrainConfig.for_task("classification")
    assert (c.optimizer, c.loss) == ("adam", "cross_entropy")
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)


# --- training ----------------------------------------------------------------

def _p1(seed=0):
    return normalize_minmax(make_synthetic(SyntheticSpec("p1", seed=seed)))


def test_tn_fits_p1_and_beats_ln():
    ds = _p1()
    cfg = TrainConfig(epochs=200, seed=0)
    tn = build_network(NetworkSpec("1", "task_poly"), POLYNOMIALS["p1"], ds.d, rng=0)
    _, tn_metrics = train(tn, ds, cfg)
    ln = build_network(NetworkSpec("2-1", "linear"), None, ds.d, rng=0)
    _, ln_metrics = train(ln, ds, cfg)
    assert tn_metrics["test_metric"] < 1e-3
    assert ln_metrics["test_metric"] > tn_metrics["test_metric"]


def test_zero_epochs_leaves_model_unchanged():
    ds = _p1()
    m = build_network(NetworkSpec("2-1", "linear"), None, ds.d, rng=0)
    before = m.copy()
    train(m, ds, TrainConfig(epochs=0))
    for a, b in zip(m.layers, before.layers):
        for k in a.arrays:
            np.testing.assert_array_equal(a.arrays[k], b.arrays[k])


def test_training_deterministic():
    ds = _p1()
    finals = []
    for _ in range(2):
        m = build_network(NetworkSpec("3-1", "quad_xu"), None, ds.d, rng=5)
        train(m, ds, TrainConfig(epochs=5, seed=9))
        finals.append(json.dumps(m.to_json()))
    assert finals[0] == finals[1]


def test_full_batch_gd_decreases_convex_loss():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (50, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 0.3
    m = build_network(NetworkSpec("1", "linear"), None, 3, rng=1)
    losses = []
    for _ in range(50):
        value, grads = backward(m, X, y)
        losses.append(value)
        for layer, g in zip(m.layers, grads):
            for k in layer.arrays:
                layer.arrays[k] -= 0.05 * g[k]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_divergence_raises_with_history():
    ds = _p1()
    m = build_network(NetworkSpec("1", "task_poly"), PolyTemplate({5: 1}), ds.d, rng=0)
    for arr in m.layers[0].arrays.values():
        arr[...] = 1e300
    with pytest.raises(TrainingDiverged) as info:
        train(m, ds, TrainConfig(epochs=3))
    assert isinstance(info.value.history, list)


def test_classification_accuracy():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    ds = split(Dataset(X, y, task="classification"), (0.8, 0.2), seed=0)
    m = build_network(NetworkSpec("2", "linear", task="classification"), None, 2, rng=0)
    _, metrics = train(m, ds, TrainConfig.for_task("classification", epochs=60, learning_rate=0.05))
    assert metrics["metric"] == "accuracy"
    assert metrics["test_metric"] >= 0.9
    assert set(np.unique(predict(m, X))) <= {0, 1}


# --- persistence -------------------------------------------------------------

@pytest.mark.parametrize("optimizer", ["rmsprop", "adam"])
def test_resume_reproduces_uninterrupted_run(tmp_path, optimizer):
    ds = _p1()
    cfg = TrainConfig(optimizer=optimizer, epochs=6, seed=3)
    straight = build_network(NetworkSpec("2-1", "linear"), None, ds.d, rng=1)
    train(straight, ds, cfg)

    half = TrainConfig(optimizer=optimizer, epochs=3, seed=3)
    m = build_network(NetworkSpec("2-1", "linear"), None, ds.d, rng=1)
    m, metrics = train(m, ds, half)
    save_checkpoint(tmp_path / "ck.json", m, half, metrics["state"])
    m2, cfg2, state = load_checkpoint(tmp_path / "ck.json")
    assert cfg2 == half
    train(m2, ds, cfg2, state=state)

    assert m2.epochs_done == 6
    assert json.dumps(m2.to_json()) == json.dumps(straight.to_json())


def test_history_csv(tmp_path):
    path = write_history_csv(tmp_path / "h.csv", [{"epoch": 1, "train_loss": 0.5, "test_metric": 0.25}])
    assert path.read_text().splitlines() == ["epoch,train_loss,test_metric", "1,0.5,0.25"]
