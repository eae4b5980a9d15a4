"""Expression trees over a single shared variable and their polynomial templates.

A tree encodes a scalar function ``f(x)``.  Applied to a feature vector it is
evaluated on every component and the results are summed, so a tree learned
once describes ``sum_i f(x_i)`` for any input width ``d``.

Trees are stored as immutable prefix tuples (the gplearn layout): function
tokens are strings from :data:`ARITY`, the variable is :data:`VAR`, and
constants are Python floats.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

VAR = "x"

ARITY = {"add": 2, "sub": 2, "mul": 2, "sin": 1, "cos": 1}
POLY_FUNCTIONS = ("add", "sub", "mul")
TRIG_FUNCTIONS = ("add", "sub", "mul", "sin", "cos")

_SYMBOL = {"add": "+", "sub": "-", "mul": "*"}

DEFAULT_MAX_DEGREE = 10
DEFAULT_PRUNE_EPSILON = 1e-8


class EvaluationError(ArithmeticError):
    """Raised when a tree produces a non-finite value."""


class DegreeError(ValueError):
    """Raised when a polynomial tree expands beyond the allowed degree."""


class TemplateParseError(ValueError):
    def __init__(self, message, text, position):
        super().__init__(f"{message} at position {position}: {text!r}")
        self.text = text
        self.position = position


def is_const(token):
    return isinstance(token, float)


@dataclass(frozen=True)
class ExpressionTree:
    """Immutable prefix-encoded formula in one variable."""

    program: tuple

    def __post_init__(self):
        program = tuple(float(t) if isinstance(t, (int, np.floating)) and not isinstance(t, bool) else t
                        for t in self.program)
        object.__setattr__(self, "program", program)
        need = 1
        for tok in program:
            if need == 0:
                raise ValueError(f"trailing tokens in program {program!r}")
            if tok in ARITY:
                need += ARITY[tok] - 1
            elif tok == VAR or is_const(tok):
                need -= 1
            else:
                raise ValueError(f"unknown token {tok!r}")
        if need != 0:
            raise ValueError(f"incomplete program {program!r}")

    def __len__(self):
        return len(self.program)

    @property
    def node_count(self):
        return len(self.program)

    @property
    def depth(self):
        """Depth counting a lone leaf as 1."""
        # stack of remaining child counts per open function node
        stack = [0]
        depth = 0
        for tok in self.program:
            arity = ARITY.get(tok, 0)
            depth = max(depth, len(stack))
            if arity:
                stack.append(arity)
            else:
                while len(stack) > 1:
                    stack[-1] -= 1
                    if stack[-1] > 0:
                        break
                    stack.pop()
        return depth

    @property
    def is_polynomial(self):
        return all(tok not in ("sin", "cos") for tok in self.program)

    @property
    def uses_variable(self):
        return VAR in self.program

    def constant_slots(self):
        """Positions of constant tokens, in program order."""
        return [i for i, tok in enumerate(self.program) if is_const(tok)]

    def subtree_end(self, start):
        """Index one past the subtree rooted at ``start``."""
        need = 1
        end = start
        while need > 0:
            need += ARITY.get(self.program[end], 0) - 1
            end += 1
        return end

    def replace(self, start, end, donor):
        return ExpressionTree(self.program[:start] + tuple(donor) + self.program[end:])

    def __call__(self, z):
        return eval_scalar(self, z)

    def __str__(self):
        return to_infix(self.program)

    def to_json(self):
        return list(self.program)

    @classmethod
    def from_json(cls, data):
        return cls(tuple(data))


def to_infix(program):
    def walk(i):
        tok = program[i]
        if tok in ("sin", "cos"):
            arg, j = walk(i + 1)
            return f"{tok}({arg})", j
        if tok in _SYMBOL:
            left, j = walk(i + 1)
            right, k = walk(j)
            return f"({left} {_SYMBOL[tok]} {right})", k
        if tok == VAR:
            return VAR, i + 1
        return repr(tok), i + 1

    text, _ = walk(0)
    if text.startswith("(") and text.endswith(")"):
        # drop outermost parens only when they enclose the whole string
        depth = 0
        for pos, ch in enumerate(text):
            depth += ch == "("
            depth -= ch == ")"
            if depth == 0 and pos < len(text) - 1:
                return text
        return text[1:-1]
    return text


def _apply(tok, a, b=None):
    if tok == "add":
        return a + b
    if tok == "sub":
        return a - b
    if tok == "mul":
        return a * b
    if tok == "sin":
        return np.sin(a)
    return np.cos(a)


def _execute(program, leaf):
    stack = []
    for tok in reversed(program):
        arity = ARITY.get(tok)
        if arity == 2:
            a = stack.pop()
            b = stack.pop()
            stack.append(_apply(tok, a, b))
        elif arity == 1:
            stack.append(_apply(tok, stack.pop()))
        elif tok == VAR:
            stack.append(leaf)
        else:
            stack.append(tok)
    return stack[0]


def eval_scalar(tree, z):
    """Evaluate the per-component function ``f`` at ``z`` (array-broadcasting)."""
    z = np.asarray(z, dtype=float)
    with np.errstate(all="ignore"):
        out = _execute(tree.program, z)
    return np.broadcast_to(np.asarray(out, dtype=float), z.shape).copy()


def eval_elementwise(tree, x):
    """Return ``sum_i f(x_i)`` over the last axis of ``x``.

    ``x`` may be a single feature vector of shape ``(d,)`` or a batch of
    shape ``(n, d)``.  A bare constant ``c`` therefore contributes ``d * c``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ValueError("need at least one feature")
    values = eval_scalar(tree, x)
    with np.errstate(all="ignore"):
        out = values.sum(axis=-1)
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"non-finite value evaluating {tree}")
    return float(out) if np.ndim(out) == 0 else out


def _trim(coef):
    nz = np.flatnonzero(coef)
    return coef[: nz[-1] + 1] if nz.size else coef[:1]


def poly_coefficients(tree, max_degree=DEFAULT_MAX_DEGREE):
    """Dense ascending coefficient array of the polynomial a tree encodes."""
    stack = []
    for tok in reversed(tree.program):
        arity = ARITY.get(tok)
        if arity == 2:
            a = stack.pop()
            b = stack.pop()
            if tok == "mul":
                c = np.convolve(a, b)
            else:
                n = max(a.size, b.size)
                c = np.zeros(n)
                c[: a.size] += a
                c[: b.size] += -b if tok == "sub" else b
            c = _trim(c)
            if c.size - 1 > max_degree:
                raise DegreeError(f"degree {c.size - 1} exceeds max_degree {max_degree}")
            stack.append(c)
        elif arity == 1:
            raise ValueError(f"{tok} is not allowed in a polynomial tree")
        elif tok == VAR:
            stack.append(np.array([0.0, 1.0]))
        else:
            stack.append(np.array([tok]))
    return stack[0]


@dataclass(frozen=True)
class PolyTemplate:
    """Degree -> coefficient map for ``sum_k c_k (x ⊙^k x)^T``.

    Coefficients no larger than ``DEFAULT_PRUNE_EPSILON`` in magnitude are
    dropped on construction.
    """

    terms: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for k, c in dict(self.terms).items():
            k = int(k)
            c = float(c)
            if k < 0:
                raise ValueError(f"negative degree {k}")
            if not math.isfinite(c):
                raise ValueError(f"non-finite coefficient {c} for degree {k}")
            if abs(c) > DEFAULT_PRUNE_EPSILON:
                clean[k] = c
        object.__setattr__(self, "terms", dict(sorted(clean.items(), reverse=True)))

    @property
    def max_degree(self):
        return max(self.terms, default=0)

    @property
    def degrees(self):
        return tuple(self.terms)

    @property
    def positive_degrees(self):
        return tuple(k for k in self.terms if k >= 1)

    @property
    def constant(self):
        return self.terms.get(0, 0.0)

    def __len__(self):
        return len(self.terms)

    def evaluate(self, x):
        """``sum_k c_k sum_i x_i^k``; the constant contributes ``d * c_0``."""
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        out = np.zeros(x.shape[:-1])
        for k, c in self.terms.items():
            out = out + (c * d if k == 0 else c * np.sum(x ** k, axis=-1))
        return float(out) if out.ndim == 0 else out

    def scalar(self, z):
        z = np.asarray(z, dtype=float)
        return sum((c * z ** k for k, c in self.terms.items()), np.zeros_like(z))

    def to_json(self):
        return {"terms": {str(k): c for k, c in self.terms.items()}}

    @classmethod
    def from_json(cls, data):
        if isinstance(data, str):
            data = json.loads(data)
        return cls({int(k): float(c) for k, c in data["terms"].items()})

    def __str__(self):
        return template_to_string(self)


@dataclass(frozen=True)
class TrigTemplate:
    """A trigonometric-mode tree plus the optional appended affine term."""

    tree: ExpressionTree
    linear_tail: bool = True

    @property
    def slots(self):
        return self.tree.constant_slots()

    @property
    def constants(self):
        return [self.tree.program[i] for i in self.slots]

    def evaluate(self, x):
        """Formula value with the tail taken as ``x^T + 1`` (unit weights)."""
        x = np.asarray(x, dtype=float)
        out = eval_elementwise(self.tree, x)
        if self.linear_tail:
            out = out + x.sum(axis=-1) + 1.0
        return out

    def to_json(self):
        return {"tree": self.tree.to_json(), "linear_tail": self.linear_tail}

    @classmethod
    def from_json(cls, data):
        return cls(ExpressionTree.from_json(data["tree"]), bool(data.get("linear_tail", True)))

    def __str__(self):
        return template_to_string(self)


def canonicalize(tree, max_degree=DEFAULT_MAX_DEGREE, prune_epsilon=DEFAULT_PRUNE_EPSILON):
    """Expand a polynomial tree into its canonical :class:`PolyTemplate`.

    The degree-0 coefficient is the per-element constant; it is not multiplied
    by the input width here.
    """
    if max_degree < 1:
        raise ValueError("max_degree must be >= 1")
    if not tree.is_polynomial:
        raise ValueError("canonicalize needs a polynomial tree")
    coef = poly_coefficients(tree, max_degree)
    return PolyTemplate({k: c for k, c in enumerate(coef) if abs(c) > prune_epsilon})


_SUPERSCRIPT = str.maketrans("0123456789", "⁰¹²³⁴⁵⁶⁷⁸⁹")
_FROM_SUPERSCRIPT = str.maketrans("⁰¹²³⁴⁵⁶⁷⁸⁹", "0123456789")


def _fmt(c, precision):
    if precision is None:
        s = repr(float(c))
        return s[:-2] if s.endswith(".0") else s
    return format(float(c), f".{precision}g")


def _power(k):
    if k == 1:
        return "x^T"
    if k == 2:
        return "(x⊙x)^T"
    return f"(x⊙{str(k).translate(_SUPERSCRIPT)}x)^T"


def template_to_string(template, precision=None):
    """Render a template in ``6(x⊙x)^T + 5x^T - 2`` notation.

    ``precision`` is a number of significant digits; ``None`` writes the
    shortest exact representation so :func:`parse_template` round-trips.
    """
    if isinstance(template, TrigTemplate):
        body = f"({template.tree})1^T"
        return body + (" + w x^T + b" if template.linear_tail else "")
    if not template.terms:
        return "0"
    parts = []
    for k, c in template.terms.items():
        mag = _fmt(abs(c), precision)
        if k == 0:
            term = mag
        elif mag == "1":
            term = _power(k)
        else:
            term = mag + _power(k)
        if not parts:
            parts.append(("-" if c < 0 else "") + term)
        else:
            parts.append((" - " if c < 0 else " + ") + term)
    return "".join(parts)


_NUMBER = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_POWER = re.compile(r"\(x⊙\^?([0-9⁰¹²³⁴⁵⁶⁷⁸⁹]*)x\)\^T")


def parse_template(text):
    """Parse the notation written by :func:`template_to_string`."""
    s = text
    pos = 0
    n = len(s)
    terms = {}

    def skip():
        nonlocal pos
        while pos < n and s[pos] == " ":
            pos += 1

    skip()
    if s[pos:].strip() == "0":
        return PolyTemplate()
    first = True
    while True:
        skip()
        if pos >= n:
            if first:
                raise TemplateParseError("empty template", text, pos)
            break
        sign = 1.0
        if s[pos] in "+-":
            sign = -1.0 if s[pos] == "-" else 1.0
            pos += 1
            skip()
        elif not first:
            raise TemplateParseError("expected '+' or '-'", text, pos)
        first = False
        m = _NUMBER.match(s, pos)
        coef = 1.0
        if m:
            coef = float(m.group())
            pos = m.end()
        p = _POWER.match(s, pos)
        if p:
            digits = p.group(1).translate(_FROM_SUPERSCRIPT)
            k = int(digits) if digits else 2
            pos = p.end()
        elif s.startswith("x^T", pos):
            k = 1
            pos += 3
        elif m:
            k = 0
        else:
            raise TemplateParseError("expected a coefficient or power term", text, pos)
        terms[k] = terms.get(k, 0.0) + sign * coef
    return PolyTemplate(terms)


def template_from_json(data):
    if isinstance(data, str):
        data = json.loads(data)
    if "tree" in data:
        return TrigTemplate.from_json(data)
    return PolyTemplate.from_json(data)


def power_tree(coefficient, k):
    """Tree for ``coefficient * z**k`` built by repeated multiplication."""
    node = (VAR,)
    for _ in range(k - 1):
        node = ("mul",) + node + (VAR,)
    if k == 0:
        return (float(coefficient),)
    return ("mul", float(coefficient)) + node


def template_to_tree(template):
    """A (not depth-minimal) tree whose canonical form is ``template``."""
    terms = [power_tree(c, k) for k, c in template.terms.items()]
    if not terms:
        return ExpressionTree((0.0,))
    program = terms[0]
    for t in terms[1:]:
        program = ("add",) + program + t
    return ExpressionTree(program)


def isclose_templates(a, b, rel_tol=1e-6, abs_tol=0.0):
    if set(a.terms) != set(b.terms):
        return False
    return all(math.isclose(a.terms[k], b.terms[k], rel_tol=rel_tol, abs_tol=abs_tol) for k in a.terms)
