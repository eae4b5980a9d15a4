"""Vectorized symbolic regression by genetic programming.

Every individual is a single-variable tree; its prediction for a row ``x`` is
``sum_i f(x_i)``.  The loop follows the usual gplearn recipe: ramped
half-and-half initialisation, tournament selection, subtree crossover, point
or subtree mutation and reproduction, plus elitism.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources

import numpy as np

from .expr import (
    ARITY,
    DEFAULT_MAX_DEGREE,
    DEFAULT_PRUNE_EPSILON,
    POLY_FUNCTIONS,
    TRIG_FUNCTIONS,
    VAR,
    DegreeError,
    EvaluationError,
    ExpressionTree,
    PolyTemplate,
    TrigTemplate,
    canonicalize,
    eval_elementwise,
    template_to_string,
)

log = logging.getLogger(__name__)

CROSSOVER_RETRIES = 5
PRESETS = ("main-paper", "supplementary", "desk")


@dataclass
class GpConfig:
    population_size: int = 500
    max_generations: int = 80
    crossover_prob: float = 0.30
    mutation_prob: float = 0.60
    reproduction_prob: float = 0.10
    tournament_fraction: float = 0.03
    elite_fraction: float = 0.05
    max_depth: int = 6
    min_init_depth: int = 2
    const_range: tuple = (-20.0, 20.0)
    operator_set: str = "polynomial"
    seed: int = 0
    parsimony_penalty: float = 1e-6
    max_degree: int = DEFAULT_MAX_DEGREE
    prune_epsilon: float = DEFAULT_PRUNE_EPSILON
    stop_threshold: float | None = None
    refine: bool = True
    refine_tolerance: float = 1e-12
    refine_scope: str = "full"

    def __post_init__(self):
        self.const_range = tuple(float(c) for c in self.const_range)
        self.validate()

    def validate(self):
        total = self.crossover_prob + self.mutation_prob + self.reproduction_prob
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"operator probabilities sum to {total}, expected 1")
        if min(self.crossover_prob, self.mutation_prob, self.reproduction_prob) < 0:
            raise ValueError("operator probabilities must be non-negative")
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")
        lo, hi = self.const_range
        if not lo < hi:
            raise ValueError(f"const_range must have lo < hi, got {self.const_range}")
        if self.operator_set not in ("polynomial", "trigonometric"):
            raise ValueError(f"unknown operator_set {self.operator_set!r}")
        if self.refine_scope not in ("found", "full"):
            raise ValueError(f"unknown refine_scope {self.refine_scope!r}")
        if not 1 <= self.min_init_depth <= self.max_depth:
            raise ValueError("need 1 <= min_init_depth <= max_depth")
        if not 0 <= self.elite_fraction < 1:
            raise ValueError("elite_fraction must lie in [0, 1)")

    @property
    def tournament_size(self):
        return max(2, int(round(self.tournament_fraction * self.population_size)))

    @property
    def n_elite(self):
        return int(round(self.elite_fraction * self.population_size))

    @property
    def functions(self):
        return POLY_FUNCTIONS if self.operator_set == "polynomial" else TRIG_FUNCTIONS

    def to_dict(self):
        d = asdict(self)
        d["const_range"] = list(self.const_range)
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown GpConfig keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def preset(cls, name, **overrides):
        if name not in PRESETS:
            raise KeyError(f"unknown preset {name!r}; choose from {PRESETS}")
        text = resources.files("taskneuron.presets").joinpath(f"{name}.json").read_text()
        data = json.loads(text)["gp"]
        data.update(overrides)
        return cls.from_dict(data)


@dataclass
class Individual:
    tree: ExpressionTree
    fitness: float = math.inf
    mse: float = math.inf

    @property
    def node_count(self):
        return self.tree.node_count

    @property
    def valid(self):
        return math.isfinite(self.fitness)


@dataclass
class RegressionResult:
    best: Individual
    template: PolyTemplate | TrigTemplate
    history: list = field(default_factory=list)
    error_rate: float = math.nan
    template_mse: float = math.nan
    skipped_zero_targets: int = 0
    config: dict = field(default_factory=dict)

    @property
    def formula(self):
        return template_to_string(self.template, precision=6)

    def to_json(self):
        return {
            "formula": self.formula,
            "template": self.template.to_json(),
            "best_tree": self.best.tree.to_json(),
            "best_infix": str(self.best.tree),
            "best_fitness": self.best.fitness,
            "best_mse": self.best.mse,
            "template_mse": self.template_mse,
            "error_rate": self.error_rate,
            "skipped_zero_targets": self.skipped_zero_targets,
            "history": self.history,
            "config": self.config,
        }


# --- tree generation -------------------------------------------------------

def _random_terminal(config, rng):
    if rng.random() < 0.5:
        return VAR
    lo, hi = config.const_range
    return float(rng.uniform(lo, hi))


def random_tree(config, rng, depth, method="grow"):
    """Prefix program of depth at most ``depth`` (exactly ``depth`` for 'full')."""
    functions = config.functions
    n_func = len(functions)
    program = []
    # each stack entry: depth of the next node to be placed
    pending = [1]
    while pending:
        level = pending.pop()
        if level >= depth:
            program.append(_random_terminal(config, rng))
            continue
        if level == 1 or method == "full":
            choose_function = True
        else:
            # gplearn's grow: pick uniformly among functions and terminals (var + const)
            choose_function = rng.integers(n_func + 2) < n_func
        if choose_function:
            func = functions[rng.integers(n_func)]
            program.append(func)
            pending.extend([level + 1] * ARITY[func])
        else:
            program.append(_random_terminal(config, rng))
    return tuple(program)


def init_population(config, rng):
    """Ramped half-and-half population of ``config.population_size`` trees."""
    depths = np.arange(config.min_init_depth, config.max_depth + 1)
    population = []
    for i in range(config.population_size):
        depth = int(depths[i % depths.size])
        method = "full" if (i // depths.size) % 2 == 0 else "grow"
        program = random_tree(config, rng, depth, method)
        population.append(Individual(ExpressionTree(program)))
    return population


# --- selection & variation -------------------------------------------------

def _better(a, b, ia, ib):
    """True when individual ``a`` (index ``ia``) ranks ahead of ``b``."""
    return (a.fitness, a.node_count, ia) < (b.fitness, b.node_count, ib)


def tournament_select(population, config, rng, size=None):
    """Fittest member of a uniformly drawn (with replacement) tournament."""
    size = config.tournament_size if size is None else size
    contenders = rng.integers(len(population), size=size)
    best = int(contenders[0])
    for idx in contenders[1:]:
        idx = int(idx)
        if _better(population[idx], population[best], idx, best):
            best = idx
    return population[best]


def _random_node(tree, rng):
    return int(rng.integers(tree.node_count))


def crossover(parent_a, parent_b, config, rng):
    """Replace a random subtree of ``parent_a`` with a random subtree of ``parent_b``."""
    a, b = parent_a.tree, parent_b.tree
    for _ in range(CROSSOVER_RETRIES):
        start = _random_node(a, rng)
        end = a.subtree_end(start)
        dstart = _random_node(b, rng)
        dend = b.subtree_end(dstart)
        child = a.replace(start, end, b.program[dstart:dend])
        if child.depth <= config.max_depth:
            return Individual(child)
    return Individual(a)


def _node_depth(tree, index):
    """Depth (root = 1) of the node at ``index``."""
    stack = [0]
    for i, tok in enumerate(tree.program):
        if i == index:
            return len(stack)
        arity = ARITY.get(tok, 0)
        if arity:
            stack.append(arity)
        else:
            while len(stack) > 1:
                stack[-1] -= 1
                if stack[-1] > 0:
                    break
                stack.pop()
    raise IndexError(index)


def point_mutation(tree, index, config, rng):
    tok = tree.program[index]
    arity = ARITY.get(tok, 0)
    if arity:
        same = [f for f in config.functions if ARITY[f] == arity and f != tok]
        if not same:
            return tree
        new = same[rng.integers(len(same))]
        return tree.replace(index, index + 1, (new,))
    return tree.replace(index, index + 1, (_random_terminal(config, rng),))


def subtree_mutation(tree, index, config, rng):
    level = _node_depth(tree, index)
    budget = config.max_depth - level + 1
    depth = int(rng.integers(1, budget + 1))
    donor = random_tree(config, rng, depth, "grow")
    return tree.replace(index, tree.subtree_end(index), donor)


def mutate(parent, config, rng):
    """Point mutation or subtree replacement at a random node, 50/50."""
    tree = parent.tree
    index = _random_node(tree, rng)
    if rng.random() < 0.5:
        child = point_mutation(tree, index, config, rng)
    else:
        child = subtree_mutation(tree, index, config, rng)
    return Individual(child)


# --- fitness ---------------------------------------------------------------

def _as_xy(dataset):
    if isinstance(dataset, tuple):
        X, y = dataset
    else:
        X, y = dataset.X, dataset.y
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 1:
        raise ValueError("dataset has no rows")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y disagree on the number of rows")
    return X, y


def mse(tree, X, y):
    try:
        pred = eval_elementwise(tree, X)
    except EvaluationError:
        return math.inf
    with np.errstate(all="ignore"):
        value = float(np.mean((pred - y) ** 2))
    return value if math.isfinite(value) else math.inf


def fitness(tree, dataset, config=None):
    """MSE of the elementwise prediction plus the parsimony surcharge."""
    X, y = _as_xy(dataset)
    penalty = GpConfig().parsimony_penalty if config is None else config.parsimony_penalty
    value = mse(tree, X, y)
    return value + penalty * tree.node_count if math.isfinite(value) else math.inf


class _Evaluator:
    """Fitness with caching; polynomial trees go through their power sums."""

    def __init__(self, X, y, config):
        self.X, self.y, self.config = X, y, config
        self.cache = {}
        if config.operator_set == "polynomial":
            with np.errstate(all="ignore"):
                self.power_sums = np.stack(
                    [np.full(X.shape[0], float(X.shape[1]))]
                    + [np.sum(X ** k, axis=1) for k in range(1, config.max_degree + 1)],
                    axis=1,
                )

    def raw_mse(self, tree):
        if self.config.operator_set != "polynomial":
            return mse(tree, self.X, self.y)
        try:
            tmpl = canonicalize(tree, self.config.max_degree, 0.0)
        except DegreeError:
            return math.inf
        coef = np.zeros(self.power_sums.shape[1])
        for k, c in tmpl.terms.items():
            coef[k] = c
        with np.errstate(all="ignore"):
            value = float(np.mean((self.power_sums @ coef - self.y) ** 2))
        return value if math.isfinite(value) else math.inf

    def __call__(self, ind):
        key = ind.tree.program
        value = self.cache.get(key)
        if value is None:
            value = self.raw_mse(ind.tree)
            self.cache[key] = value
        ind.mse = value
        ind.fitness = value + self.config.parsimony_penalty * ind.node_count if math.isfinite(value) else math.inf
        return ind.fitness


# --- error rate ------------------------------------------------------------

def error_rate(predictions, targets, return_skipped=False):
    """Mean relative absolute error; terms with a zero target are skipped."""
    pred = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(targets, dtype=float).ravel()
    if pred.shape != y.shape:
        raise ValueError("predictions and targets differ in length")
    nonzero = y != 0
    skipped = int(np.count_nonzero(~nonzero))
    if skipped:
        warnings.warn(f"error_rate skipped {skipped} zero target(s)", RuntimeWarning, stacklevel=2)
    if not nonzero.any():
        value = math.nan
    else:
        value = float(np.mean(np.abs(y[nonzero] - pred[nonzero]) / np.abs(y[nonzero])))
    return (value, skipped) if return_skipped else value


# --- coefficient refinement -------------------------------------------------

def _lstsq(S, y, degrees):
    A = S[:, degrees]
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    coef, *_ = np.linalg.lstsq(A / scale, y, rcond=None)
    coef = coef / scale
    resid = A @ coef - y
    return coef, float(np.mean(resid ** 2))


def refine_template(template, X, y, max_degree=DEFAULT_MAX_DEGREE, tolerance=1e-12,
                    prune_epsilon=DEFAULT_PRUNE_EPSILON, scope="full"):
    """Least-squares refit of a template's coefficients.

    With ``scope="found"`` only the template's own degrees are refit; with
    ``scope="full"`` every degree from 0 up to the template's top degree is a
    candidate, which lets small low-order terms that the search overlooked
    back in.

    Terms are then dropped greedily while doing so lowers the Bayesian
    information criterion ``n log(mse) + p log(n)``.  MSE values are floored
    at ``(tolerance * rms(y))**2`` so that exact fits compare on equal terms.
    Returns the refined template and its MSE.
    """
    degrees = sorted(template.terms)
    if not degrees:
        return template, float(np.mean(y ** 2))
    if scope == "full":
        degrees = list(range(max(degrees) + 1))
    elif scope != "found":
        raise ValueError(f"unknown refine scope {scope!r}")
    n = y.size
    S = np.stack([np.full(X.shape[0], float(X.shape[1]))]
                 + [np.sum(X ** k, axis=1) for k in range(1, max_degree + 1)], axis=1)
    floor = (tolerance * math.sqrt(float(np.mean(y ** 2)))) ** 2 or np.finfo(float).tiny

    def bic(err, p):
        return n * math.log(max(err, floor)) + p * math.log(n)

    coef, err = _lstsq(S, y, degrees)
    score = bic(err, len(degrees))
    while len(degrees) > 1:
        trials = []
        for k in degrees:
            rest = [j for j in degrees if j != k]
            c, e = _lstsq(S, y, rest)
            trials.append((bic(e, len(rest)), k, c))
        trial_score, k, c = min(trials, key=lambda t: t[0])
        if trial_score >= score:
            break
        degrees = [j for j in degrees if j != k]
        coef, score = c, trial_score
    terms = {k: c for k, c in zip(degrees, coef) if abs(c) > prune_epsilon}
    refined = PolyTemplate(terms)
    return refined, float(np.mean((refined.evaluate(X) - y) ** 2))


# --- main loop -------------------------------------------------------------

def _offspring(population, config, seed):
    rng = np.random.default_rng(seed)
    draw = rng.random()
    parent = tournament_select(population, config, rng)
    if draw < config.crossover_prob:
        donor = tournament_select(population, config, rng)
        return crossover(parent, donor, config, rng)
    if draw < config.crossover_prob + config.mutation_prob:
        return mutate(parent, config, rng)
    return Individual(parent.tree)


def _ranked(population):
    order = sorted(range(len(population)),
                   key=lambda i: (population[i].fitness, population[i].node_count, i))
    return [population[i] for i in order]


def evolve(dataset, config, population=None):
    """Run the GP loop and return the best formula found.

    ``population`` optionally seeds generation 0 (trees only; fitness is
    recomputed).
    """
    X, y = _as_xy(dataset)
    rng = np.random.default_rng(config.seed)
    evaluate = _Evaluator(X, y, config)
    if population is None:
        population = init_population(config, rng)
    else:
        population = [Individual(ind.tree if isinstance(ind, Individual) else ind) for ind in population]
    history = []
    best = None
    for gen in range(config.max_generations):
        for ind in population:
            evaluate(ind)
        ranked = _ranked(population)
        finite = [ind.fitness for ind in population if ind.valid]
        if best is None or _better(ranked[0], best, 0, 1):
            best = Individual(ranked[0].tree, ranked[0].fitness, ranked[0].mse)
        history.append({
            "generation": gen,
            "best_fitness": best.fitness,
            "generation_best": ranked[0].fitness,
            "mean_fitness": float(np.mean(finite)) if finite else math.inf,
            "best_size": best.node_count,
        })
        log.debug("gen %d best %.6g size %d", gen, best.fitness, best.node_count)
        if config.stop_threshold is not None and best.fitness < config.stop_threshold:
            break
        if gen == config.max_generations - 1:
            break
        elites = [Individual(ind.tree, ind.fitness, ind.mse) for ind in ranked[: config.n_elite]]
        seeds = rng.integers(0, 2 ** 63 - 1, size=config.population_size - len(elites))
        children = [_offspring(ranked, config, int(s)) for s in seeds]
        population = elites + children

    return _finish(best, X, y, config, history)


def _finish(best, X, y, config, history):
    if config.operator_set == "polynomial":
        template = canonicalize(best.tree, config.max_degree, config.prune_epsilon)
        if config.refine:
            template, _ = refine_template(template, X, y, config.max_degree,
                                          config.refine_tolerance, config.prune_epsilon,
                                          config.refine_scope)
        pred = template.evaluate(X)
    else:
        template = TrigTemplate(best.tree, linear_tail=True)
        pred = eval_elementwise(best.tree, X)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        delta, skipped = error_rate(pred, y, return_skipped=True)
    return RegressionResult(
        best=best,
        template=template,
        history=history,
        error_rate=delta,
        template_mse=float(np.mean((pred - y) ** 2)),
        skipped_zero_targets=skipped,
        config=config.to_dict(),
    )


def predict(template, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(template, TrigTemplate):
        return eval_elementwise(template.tree, X)
    return template.evaluate(X)


def with_seed(config, seed):
    return replace(config, seed=seed)
