import json
import math
import warnings

import numpy as np
import pytest

from taskneuron.data import POLYNOMIALS, SyntheticSpec, add_noise, gen_synthetic
from taskneuron.expr import ExpressionTree, PolyTemplate, TrigTemplate, template_to_tree
from taskneuron.vsr import (
    GpConfig,
    Individual,
    crossover,
    error_rate,
    evolve,
    fitness,
    init_population,
    mutate,
    point_mutation,
    random_tree,
    refine_template,
    subtree_mutation,
    tournament_select,
)


def small(**kw):
    base = dict(population_size=200, max_generations=15, seed=0)
    base.update(kw)
    return GpConfig(**base)


# --- config ------------------------------------------------------------------

def test_config_invariants():
    with pytest.raises(ValueError):
        GpConfig(crossover_prob=0.5, mutation_prob=0.5, reproduction_prob=0.5)
    with pytest.raises(ValueError):
        GpConfig(const_range=(1.0, 1.0))
    with pytest.raises(ValueError):
        GpConfig(operator_set="rational")
    assert GpConfig(population_size=500).tournament_size == 15
    assert GpConfig(population_size=10).tournament_size == 2
    assert GpConfig(population_size=500).n_elite == 25


def test_presets():
    sup = GpConfig.preset("supplementary")
    assert (sup.population_size, sup.max_generations, sup.max_depth) == (500, 80, 6)
    assert tuple(sup.const_range) == (-20.0, 20.0)
    assert (sup.crossover_prob, sup.mutation_prob, sup.reproduction_prob) == (0.30, 0.60, 0.10)
    assert (sup.elite_fraction, sup.tournament_fraction) == (0.05, 0.03)
    main = GpConfig.preset("main-paper")
    assert (main.population_size, main.max_generations) == (5000, 30)
    assert tuple(main.const_range) == (-1.0, 1.0)
    desk = GpConfig.preset("desk", seed=4)
    assert (desk.population_size, desk.max_generations, desk.seed) == (500, 40, 4)


def test_config_dict_round_trip_rejects_unknown():
    cfg = small(parsimony_penalty=0.0)
    assert GpConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises((TypeError, ValueError, KeyError)):
        GpConfig.from_dict({"population": 3})


# --- initialisation ----------------------------------------------------------

def test_init_population_depths():
    cfg = GpConfig(population_size=500, max_depth=6)
    pop = init_population(cfg, np.random.default_rng(0))
    assert len(pop) == 500
    depths = {ind.tree.depth for ind in pop}
    assert min(depths) >= 2 and max(depths) <= 6
    assert depths == set(range(2, 7))
    lo, hi = cfg.const_range
    for ind in pop:
        assert all(lo <= t <= hi for t in ind.tree.program if isinstance(t, float))


def test_init_population_minimum():
    assert len(init_population(GpConfig(population_size=2), np.random.default_rng(0))) == 2


def test_init_population_deterministic():
    cfg = GpConfig(population_size=300)
    a = init_population(cfg, np.random.default_rng(5))
    b = init_population(cfg, np.random.default_rng(5))
    assert [i.tree.program for i in a] == [i.tree.program for i in b]


# --- selection ---------------------------------------------------------------

def _pop(fitnesses, sizes=None):
    sizes = sizes or [1] * len(fitnesses)
    trees = {1: ("x",), 3: ("mul", "x", "x"), 5: ("mul", "x", "mul", "x", "x")}
    return [Individual(ExpressionTree(trees[s]), f) for f, s in zip(fitnesses, sizes)]


def test_exhaustive_tournament_returns_best():
    pop = _pop([5.0, 1.0, 3.0, 0.5, 9.0])
    rng = np.random.default_rng(0)
    cfg = GpConfig(population_size=5)
    # with replacement, so a large tournament covers everyone with near certainty
    for _ in range(20):
        assert tournament_select(pop, cfg, rng, size=200) is pop[3]


def test_tournament_of_one():
    pop = _pop([2.0])
    assert tournament_select(pop, GpConfig(), np.random.default_rng(0)) is pop[0]


def test_tournament_tie_breaks():
    pop = _pop([1.0, 1.0, 1.0], sizes=[5, 3, 3])
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert tournament_select(pop, GpConfig(), rng, size=100) is pop[1]


def test_tournament_frequency_matches_closed_form():
    n, t, draws = 50, 3, 10_000
    pop = _pop(list(np.arange(n, 0, -1.0)))
    best = pop[-1]
    rng = np.random.default_rng(42)
    hits = sum(tournament_select(pop, GpConfig(), rng, size=t) is best for _ in range(draws))
    p = 1 - (1 - 1 / n) ** t
    sigma = math.sqrt(draws * p * (1 - p))
    assert abs(hits - draws * p) <= 3 * sigma


# --- variation ---------------------------------------------------------------

def test_crossover_hand_traced():
    a = Individual(ExpressionTree(("add", "x", 1.0)))
    b = Individual(ExpressionTree(("mul", "x", "x")))

    class Fixed:
        # first draw picks a's "1" leaf (index 2), second picks b's root
        def __init__(self):
            self.values = [2, 0]

        def integers(self, *args, **kwargs):
            return self.values.pop(0)

    child = crossover(a, b, GpConfig(), Fixed())
    assert child.tree.program == ("add", "x", "mul", "x", "x")


def test_crossover_identical_root_swap():
    a = Individual(ExpressionTree(("add", "x", 1.0)))

    class Root:
        def integers(self, *args, **kwargs):
            return 0

    assert crossover(a, a, GpConfig(), Root()).tree == a.tree


def test_crossover_respects_depth():
    cfg = GpConfig(population_size=200, max_depth=6)
    rng = np.random.default_rng(1)
    pop = init_population(cfg, rng)
    for _ in range(1000):
        a, b = pop[rng.integers(len(pop))], pop[rng.integers(len(pop))]
        assert crossover(a, b, cfg, rng).tree.depth <= 6


def test_point_mutation_on_leaf():
    tree = ExpressionTree(("x",))
    cfg = GpConfig()
    rng = np.random.default_rng(0)
    for _ in range(50):
        out = point_mutation(tree, 0, cfg, rng)
        assert out.node_count == 1
        tok = out.program[0]
        assert tok == "x" or cfg.const_range[0] <= tok <= cfg.const_range[1]


def test_point_mutation_keeps_arity():
    tree = ExpressionTree(("add", "x", 1.0))
    out = point_mutation(tree, 0, GpConfig(), np.random.default_rng(0))
    assert out.program[0] in ("sub", "mul")
    assert out.program[1:] == ("x", 1.0)


def test_mutation_respects_depth():
    cfg = GpConfig(population_size=50, max_depth=6)
    rng = np.random.default_rng(2)
    deep = [Individual(ExpressionTree(random_tree(cfg, rng, 6, "full"))) for _ in range(20)]
    for i in range(1000):
        parent = deep[i % 20]
        assert mutate(parent, cfg, rng).tree.depth <= 6
        idx = int(rng.integers(parent.node_count))
        assert subtree_mutation(parent.tree, idx, cfg, rng).depth <= 6


def test_mutation_reintroduces_variable():
    X = np.random.default_rng(0).uniform(-1, 1, (50, 3))
    y = X.sum(axis=1)
    cfg = GpConfig(population_size=100, max_generations=50, seed=3, refine=False)
    constants = [ExpressionTree((float(c),)) for c in np.linspace(-1, 1, 100)]
    result = evolve((X, y), cfg, population=constants)
    assert result.best.tree.uses_variable


# --- fitness -----------------------------------------------------------------

def test_fitness_exact_generator_is_penalty_only():
    ds = gen_synthetic(SyntheticSpec("p1", seed=0))
    tree = template_to_tree(POLYNOMIALS["p1"])
    cfg = GpConfig()
    assert fitness(tree, ds, cfg) == pytest.approx(cfg.parsimony_penalty * tree.node_count, abs=1e-12)


def test_fitness_constant_zero_on_zero_targets():
    X = np.ones((4, 2))
    cfg = GpConfig(parsimony_penalty=0.0)
    assert fitness(ExpressionTree((0.0,)), (X, np.zeros(4)), cfg) == 0.0


def test_fitness_single_point():
    cfg = GpConfig(parsimony_penalty=0.0)
    assert fitness(ExpressionTree(("x",)), (np.array([[1.0]]), np.array([2.0])), cfg) == 1.0


def test_fitness_overflow_is_inf():
    big = ExpressionTree(("mul",) * 8 + ("x",) * 9)
    assert fitness(big, (np.full((2, 2), 1e60), np.zeros(2))) == math.inf


# --- error rate --------------------------------------------------------------

def test_error_rate_basics():
    y = np.array([1.0, -2.0, 4.0])
    assert error_rate(y, y) == 0.0
    assert error_rate([1.0], [2.0]) == 0.5


def test_error_rate_skips_zero_targets():
    with pytest.warns(RuntimeWarning):
        value, skipped = error_rate([1.0, 1.0], [0.0, 2.0], return_skipped=True)
    assert skipped == 1
    assert value == 0.5


# --- evolve ------------------------------------------------------------------

def test_evolve_recovers_p1_quickly():
    ds = gen_synthetic(SyntheticSpec("p1", seed=0))
    result = evolve(ds, small())
    assert result.template.terms == {2: pytest.approx(6.0, rel=1e-12)}
    assert result.error_rate < 1e-12
    assert result.formula == "6(x⊙x)^T"


def test_evolve_constant_target():
    for d in (1, 3):
        X = np.random.default_rng(1).uniform(-1, 1, (40, d))
        y = np.full(40, 4.5)
        result = evolve((X, y), small(max_generations=10))
        history = result.history
        assert history[-1]["best_fitness"] < history[0]["best_fitness"]
        assert result.template_mse == pytest.approx(0.0, abs=1e-20)
        assert set(result.template.terms) == {0}
        assert result.template.constant * d == pytest.approx(4.5)


def test_evolve_history_and_monotone_best():
    ds = gen_synthetic(SyntheticSpec("p3", seed=1))
    cfg = small(max_generations=12)
    result = evolve(ds, cfg)
    assert 1 <= len(result.history) <= cfg.max_generations
    best = [h["best_fitness"] for h in result.history]
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
    assert result.best.fitness == min(best)


def test_evolve_deterministic():
    ds = gen_synthetic(SyntheticSpec("p9", seed=2))
    a = evolve(ds, small(seed=7)).to_json()
    b = evolve(ds, small(seed=7)).to_json()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_evolve_early_stop():
    ds = gen_synthetic(SyntheticSpec("p1", seed=0))
    result = evolve(ds, small(max_generations=50, stop_threshold=1e-3))
    assert len(result.history) < 50


def test_evolve_trig_mode():
    X = np.random.default_rng(0).uniform(-1, 1, (60, 2))
    y = np.cos(X).sum(axis=1)
    result = evolve((X, y), small(operator_set="trigonometric", max_generations=10))
    assert isinstance(result.template, TrigTemplate)
    assert result.best.mse < 0.1


def test_noisy_p3_error_rate_order_of_magnitude():
    # clean-target error rate of the template found on 5% noisy data
    spec = SyntheticSpec("p3", seed=0)
    ds = gen_synthetic(spec)
    noisy = add_noise(ds.y, 0.05, np.random.default_rng(1))
    result = evolve((ds.X, noisy), GpConfig.preset("supplementary", max_generations=30))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        delta = error_rate(result.template.evaluate(ds.X), ds.y)
    assert abs(delta - 0.0014) <= 0.005


# --- refinement --------------------------------------------------------------

def test_refine_restores_small_low_order_term():
    X = np.random.default_rng(0).uniform(-50, 50, (300, 10))
    truth = PolyTemplate({4: 2, 1: 6})
    y = truth.evaluate(X)
    refined, err = refine_template(PolyTemplate({4: 2.0}), X, y)
    assert refined.terms.keys() == truth.terms.keys()
    assert refined.terms[1] == pytest.approx(6.0, rel=1e-6)
    found, _ = refine_template(PolyTemplate({4: 2.0}), X, y, scope="found")
    assert set(found.terms) == {4}


def test_refine_drops_spurious_terms():
    X = np.random.default_rng(1).uniform(-50, 50, (300, 10))
    y = PolyTemplate({2: 6}).evaluate(X)
    refined, _ = refine_template(PolyTemplate({2: 5.9, 1: 0.1, 0: 100.0}), X, y)
    assert refined.terms == {2: pytest.approx(6.0)}
