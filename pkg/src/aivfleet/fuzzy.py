"""
Mamdani fuzzy inference.

Membership functions, linguistic variables and rule bases are plain data
(see ``load_model``). Inference uses min for AND, min (clip) implication,
max aggregation and centroid defuzzification over a sampled output universe.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "FuzzyError",
    "FuzzyConfigError",
    "NoRuleFiredError",
    "MembershipFunction",
    "LinguisticVariable",
    "FuzzyRule",
    "FuzzyModel",
    "AggregatedSet",
    "membership_degree",
    "fuzzify",
    "rule_activation",
    "infer",
    "infer_from_activations",
    "defuzzify_centroid",
    "evaluate",
    "three_term_partition",
    "load_model",
    "model_from_dict",
    "model_to_dict",
]

DEFAULT_RESOLUTION = 1001


class FuzzyError(Exception):
    pass


class FuzzyConfigError(FuzzyError):
    """Malformed model: unknown variable/term, bad parameters, missing input."""


class NoRuleFiredError(FuzzyError):
    """The aggregated output set is zero everywhere."""


@dataclass(frozen=True)
class MembershipFunction:
    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        expected = {"triangular": 3, "trapezoidal": 4}.get(self.kind)
        if expected is None:
            raise FuzzyConfigError(f"unknown membership kind {self.kind!r}")
        if len(params) != expected:
            raise FuzzyConfigError(
                f"{self.kind} needs {expected} parameters, got {len(params)}"
            )
        if any(not math.isfinite(p) for p in params):
            raise FuzzyConfigError(f"non-finite parameter in {params}")
        if any(a > b for a, b in zip(params, params[1:])):
            raise FuzzyConfigError(f"{self.kind} parameters must be ordered: {params}")

    @classmethod
    def triangular(cls, a: float, b: float, c: float) -> "MembershipFunction":
        return cls("triangular", (a, b, c))

    @classmethod
    def trapezoidal(cls, a: float, b: float, c: float, d: float) -> "MembershipFunction":
        return cls("trapezoidal", (a, b, c, d))

    @property
    def support(self) -> tuple[float, float]:
        return self.params[0], self.params[-1]

    @property
    def plateau(self) -> tuple[float, float]:
        p = self.params
        return (p[1], p[1]) if self.kind == "triangular" else (p[1], p[2])

    def __call__(self, x: float) -> float:
        return membership_degree(self, x)

    def sample(self, xs: np.ndarray) -> np.ndarray:
        """Vectorised degree over an array of abscissae."""
        lo, hi = self.support
        left, right = self.plateau
        xs = np.asarray(xs, dtype=float)
        out = np.zeros_like(xs)
        flat = (xs >= left) & (xs <= right)
        out[flat] = 1.0
        if left > lo:
            rise = (xs > lo) & (xs < left)
            out[rise] = (xs[rise] - lo) / (left - lo)
        if hi > right:
            fall = (xs > right) & (xs < hi)
            out[fall] = (hi - xs[fall]) / (hi - right)
        return out


def membership_degree(mf: MembershipFunction, x: float) -> float:
    lo, hi = mf.support
    left, right = mf.plateau
    if x < lo or x > hi:
        return 0.0
    if left <= x <= right:
        return 1.0
    if x < left:
        return (x - lo) / (left - lo)
    return (hi - x) / (hi - right)


@dataclass(frozen=True)
class LinguisticVariable:
    name: str
    universe: tuple[float, float]
    terms: tuple[tuple[str, MembershipFunction], ...]
    unit: str = ""

    def __post_init__(self):
        lo, hi = (float(v) for v in self.universe)
        object.__setattr__(self, "universe", (lo, hi))
        object.__setattr__(self, "terms", tuple((str(lb), mf) for lb, mf in self.terms))
        if not lo < hi:
            raise FuzzyConfigError(f"{self.name}: empty universe [{lo}, {hi}]")
        if not self.terms:
            raise FuzzyConfigError(f"{self.name}: no terms")
        labels = [label for label, _ in self.terms]
        if len(set(labels)) != len(labels):
            raise FuzzyConfigError(f"{self.name}: duplicate term labels {labels}")
        tol = 1e-9 * (hi - lo)
        for label, mf in self.terms:
            a, b = mf.support
            if a < lo - tol or b > hi + tol:
                raise FuzzyConfigError(
                    f"{self.name}.{label}: support [{a}, {b}] outside universe [{lo}, {hi}]"
                )

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.terms)

    def term(self, label: str) -> MembershipFunction:
        for lb, mf in self.terms:
            if lb == label:
                return mf
        raise FuzzyConfigError(f"variable {self.name!r} has no term {label!r}")

    def clamp(self, x: float) -> float:
        lo, hi = self.universe
        return min(hi, max(lo, float(x)))

    def coverage_gaps(self, samples: int = 1001) -> list[float]:
        """Points of the universe where every term has degree 0."""
        xs = np.linspace(*self.universe, samples)
        total = np.zeros(samples)
        for _, mf in self.terms:
            total = np.maximum(total, mf.sample(xs))
        return [float(x) for x in xs[total <= 0.0]]


def three_term_partition(
    name: str, lo: float, hi: float, labels: Sequence[str] = ("Low", "Medium", "High"), unit: str = ""
) -> LinguisticVariable:
    """Low/Medium/High triangular partition of unity on [lo, hi]."""
    mid = (lo + hi) / 2.0
    low, medium, high = labels
    return LinguisticVariable(
        name,
        (lo, hi),
        (
            (low, MembershipFunction.triangular(lo, lo, mid)),
            (medium, MembershipFunction.triangular(lo, mid, hi)),
            (high, MembershipFunction.triangular(mid, hi, hi)),
        ),
        unit,
    )


def fuzzify(var: LinguisticVariable, x: float) -> dict[str, float]:
    x = var.clamp(x)
    return {label: membership_degree(mf, x) for label, mf in var.terms}


@dataclass(frozen=True)
class FuzzyRule:
    antecedents: tuple[tuple[str, str], ...]
    consequent: tuple[str, str]

    def __post_init__(self):
        ants = tuple((str(v), str(t)) for v, t in self.antecedents)
        object.__setattr__(self, "antecedents", ants)
        object.__setattr__(self, "consequent", (str(self.consequent[0]), str(self.consequent[1])))
        if not ants:
            raise FuzzyConfigError("rule has no antecedents")
        names = [v for v, _ in ants]
        if len(set(names)) != len(names):
            raise FuzzyConfigError(f"rule repeats an input variable: {names}")

    def __str__(self):
        cond = " AND ".join(f"{v} IS {t}" for v, t in self.antecedents)
        return f"IF {cond} THEN {self.consequent[0]} IS {self.consequent[1]}"


def rule_activation(rule: FuzzyRule, fuzzified: Mapping[str, Mapping[str, float]]) -> float:
    degree = 1.0
    for var, term in rule.antecedents:
        try:
            d = fuzzified[var][term]
        except KeyError:
            raise FuzzyConfigError(f"rule references unknown {var}.{term}") from None
        degree = min(degree, d)
    return degree


@dataclass(frozen=True)
class AggregatedSet:
    xs: np.ndarray
    degrees: np.ndarray
    universe: tuple[float, float]


@dataclass(frozen=True, eq=False)
class FuzzyModel:
    name: str
    inputs: tuple[LinguisticVariable, ...]
    output: LinguisticVariable
    rules: tuple[FuzzyRule, ...]
    resolution: int = DEFAULT_RESOLUTION
    _grid: np.ndarray = field(init=False, repr=False)
    _term_samples: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "rules", tuple(self.rules))
        if not self.rules:
            raise FuzzyConfigError(f"{self.name}: empty rule base")
        if int(self.resolution) < 2:
            raise FuzzyConfigError(f"{self.name}: resolution must be >= 2")
        object.__setattr__(self, "resolution", int(self.resolution))
        by_name = {v.name: v for v in self.inputs}
        if len(by_name) != len(self.inputs):
            raise FuzzyConfigError(f"{self.name}: duplicate input names")
        for rule in self.rules:
            for var, term in rule.antecedents:
                if var not in by_name:
                    raise FuzzyConfigError(f"{self.name}: unknown input variable {var!r} in '{rule}'")
                by_name[var].term(term)
            out_var, out_term = rule.consequent
            if out_var != self.output.name:
                raise FuzzyConfigError(f"{self.name}: consequent {out_var!r} is not the output")
            self.output.term(out_term)
        grid = np.linspace(*self.output.universe, self.resolution)
        object.__setattr__(self, "_grid", grid)
        object.__setattr__(
            self, "_term_samples", {label: mf.sample(grid) for label, mf in self.output.terms}
        )

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.inputs)

    def variable(self, name: str) -> LinguisticVariable:
        for v in (*self.inputs, self.output):
            if v.name == name:
                return v
        raise FuzzyConfigError(f"{self.name}: no variable {name!r}")

    def with_resolution(self, resolution: int) -> "FuzzyModel":
        return FuzzyModel(self.name, self.inputs, self.output, self.rules, resolution)

    def completeness_gaps(self, samples_per_input: int = 11) -> list[dict[str, float]]:
        """Grid points of the input space where no rule fires."""
        axes = [np.linspace(*v.universe, samples_per_input) for v in self.inputs]
        gaps = []
        for point in np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(axes), -1).T:
            crisp = dict(zip(self.input_names, map(float, point)))
            fz = {v.name: fuzzify(v, crisp[v.name]) for v in self.inputs}
            if max(rule_activation(r, fz) for r in self.rules) <= 0.0:
                gaps.append(crisp)
        return gaps

    def evaluate(self, **inputs: float) -> float:
        return evaluate(self, inputs)


def _activations(model: FuzzyModel, inputs: Mapping[str, float]) -> list[float]:
    missing = [n for n in model.input_names if n not in inputs]
    if missing:
        raise FuzzyConfigError(f"{model.name}: missing input(s) {missing}")
    fz = {v.name: fuzzify(v, inputs[v.name]) for v in model.inputs}
    return [rule_activation(rule, fz) for rule in model.rules]


def infer_from_activations(model: FuzzyModel, activations: Sequence[float]) -> AggregatedSet:
    """Clip each rule's consequent at its activation and take the pointwise max."""
    if len(activations) != len(model.rules):
        raise FuzzyConfigError("one activation per rule expected")
    per_term: dict[str, float] = {}
    for rule, act in zip(model.rules, activations):
        label = rule.consequent[1]
        per_term[label] = max(per_term.get(label, 0.0), float(act))
    agg = np.zeros(model.resolution)
    for label, act in per_term.items():
        if act > 0.0:
            np.maximum(agg, np.minimum(model._term_samples[label], act), out=agg)
    return AggregatedSet(model._grid, agg, model.output.universe)


def infer(model: FuzzyModel, inputs: Mapping[str, float]) -> AggregatedSet:
    return infer_from_activations(model, _activations(model, inputs))


def defuzzify_centroid(agg: AggregatedSet) -> float:
    mass = float(np.sum(agg.degrees))
    if mass <= 0.0:
        raise NoRuleFiredError("aggregated output set is empty")
    value = float(np.dot(agg.xs, agg.degrees)) / mass
    lo, hi = agg.universe
    return min(hi, max(lo, value))


def evaluate(model: FuzzyModel, inputs: Mapping[str, float]) -> float:
    # Clamping first makes the cache key canonical.
    key = tuple(v.clamp(inputs[v.name]) if v.name in inputs else None for v in model.inputs)
    if None in key:
        _activations(model, inputs)  # raises the missing-input error
    return _evaluate_cached(model, key)


@lru_cache(maxsize=65536)
def _evaluate_cached(model: FuzzyModel, key: tuple[float, ...]) -> float:
    return defuzzify_centroid(infer(model, dict(zip(model.input_names, key))))


# --------------------------------------------------------------------------
# rule-base files

_SYMBOL = re.compile(r"^\s*(?:([-+0-9.eE]+)\s*\*\s*)?\$(\w+)\s*$")


def _resolve(value, bindings: Mapping[str, float]) -> float:
    if isinstance(value, (int, float)):
        return float(value)
    m = _SYMBOL.match(str(value))
    if not m:
        raise FuzzyConfigError(f"cannot interpret parameter {value!r}")
    factor, name = m.groups()
    if name not in bindings:
        raise FuzzyConfigError(f"unbound symbol ${name}")
    return (float(factor) if factor else 1.0) * float(bindings[name])


def _variable_from_dict(doc: Mapping, bindings: Mapping[str, float]) -> LinguisticVariable:
    try:
        lo, hi = (_resolve(v, bindings) for v in doc["universe"])
        terms = tuple(
            (t["label"], MembershipFunction(t["kind"], tuple(_resolve(p, bindings) for p in t["params"])))
            for t in doc["terms"]
        )
        return LinguisticVariable(doc["name"], (lo, hi), terms, doc.get("unit", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise FuzzyConfigError(f"malformed variable {doc!r}: {exc}") from exc


def model_from_dict(doc: Mapping, bindings: Mapping[str, float] | None = None) -> FuzzyModel:
    """Build a model from its JSON document.

    Universe bounds and term parameters may be numbers or symbolic strings
    such as ``"$diameter"`` or ``"0.5*$diameter"``, resolved from ``bindings``.
    """
    bindings = dict(bindings or {})
    try:
        inputs = tuple(_variable_from_dict(v, bindings) for v in doc["inputs"])
        output = _variable_from_dict(doc["output"], bindings)
        rules = tuple(
            FuzzyRule(
                tuple((a["var"], a["term"]) for a in r["if"]),
                (r["then"]["var"], r["then"]["term"]),
            )
            for r in doc["rules"]
        )
    except (KeyError, TypeError) as exc:
        raise FuzzyConfigError(f"malformed rule-base document: {exc}") from exc
    return FuzzyModel(
        doc.get("name", "model"), inputs, output, rules, doc.get("resolution", DEFAULT_RESOLUTION)
    )


def model_to_dict(model: FuzzyModel) -> dict:
    def var(v: LinguisticVariable) -> dict:
        return {
            "name": v.name,
            "unit": v.unit,
            "universe": list(v.universe),
            "terms": [{"label": lb, "kind": mf.kind, "params": list(mf.params)} for lb, mf in v.terms],
        }

    return {
        "name": model.name,
        "inputs": [var(v) for v in model.inputs],
        "output": var(model.output),
        "rules": [
            {"if": [{"var": a, "term": t} for a, t in r.antecedents],
             "then": {"var": r.consequent[0], "term": r.consequent[1]}}
            for r in model.rules
        ],
        "resolution": model.resolution,
    }


def load_model(path: str | Path, bindings: Mapping[str, float] | None = None) -> FuzzyModel:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FuzzyConfigError(f"{path}: {exc}") from exc
    return model_from_dict(doc, bindings)
