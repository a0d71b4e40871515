"""Named scenarios: a gamma, its coordinate names and a working box."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .fields import FieldError, GammaSpec, VectorField


@dataclass(frozen=True)
class Scenario:
    name: str
    gamma: GammaSpec
    variables: tuple[str, ...]
    description: str = ""

    @property
    def box(self) -> np.ndarray:
        return self.gamma.working_box()

    def to_dict(self) -> dict:
        terms = []
        for alpha, X in self.gamma.terms.items():
            if not X.is_symbolic:
                raise FieldError("numeric fields cannot be serialized")
            terms.append({
                "alpha": list(alpha),
                "name": self.gamma.label(alpha),
                "field": [str(c) for c in X.coeffs],
            })
        return {
            "name": self.name,
            "variables": list(self.variables),
            "factor_dims": list(self.gamma.factor_dims),
            "box": self.box.tolist(),
            "terms": terms,
            "description": self.description,
        }


def scenario_from_dict(data: dict) -> Scenario:
    """Build a scenario from its JSON form (see ``Scenario.to_dict``)."""
    try:
        variables = tuple(data["variables"])
        factor_dims = tuple(data["factor_dims"])
        raw_terms = data["terms"]
    except KeyError as exc:
        raise FieldError(f"scenario is missing key {exc}") from exc
    terms, names = {}, {}
    for entry in raw_terms:
        alpha = tuple(int(a) for a in entry["alpha"])
        if alpha in terms:
            raise FieldError(f"duplicate multi-index {alpha}")
        terms[alpha] = VectorField.from_strings(entry["field"], variables)
        if "name" in entry:
            names[alpha] = entry["name"]
    box = data.get("box")
    gamma = GammaSpec(factor_dims, terms, names, None if box is None else np.asarray(box, float))
    return Scenario(data.get("name", "custom"), gamma, variables, data.get("description", ""))


def _make(name, variables, factor_dims, terms, box, description) -> Scenario:
    return scenario_from_dict({
        "name": name,
        "variables": variables,
        "factor_dims": factor_dims,
        "box": box,
        "terms": [{"alpha": a, "name": nm, "field": f} for a, nm, f in terms],
        "description": description,
    })


def heisenberg() -> Scenario:
    return _make(
        "heisenberg", ["x", "y", "t"], [1, 1],
        [([1, 0], "X", ["1", "0", "-y/2"]),
         ([0, 1], "Y", ["0", "1", "x/2"]),
         ([1, 1], "T", ["0", "0", "1"])],
        [[-1, 1]] * 3,
        "left-invariant X, Y on the Heisenberg group with T = [X, Y] attached to t1*t2",
    )


def cubic_counterexample() -> Scenario:
    return _make(
        "cubic-counterexample", ["x"], [1, 1],
        [([3, 0], "A", ["1"]), ([1, 1], "B", ["1"]), ([0, 3], "C", ["1"])],
        [[-4, 4]],
        "x + t1^3 + t1 t2 + t2^3 on the line",
    )


def square_variant() -> Scenario:
    return _make(
        "square-variant", ["x"], [1, 1],
        [([2, 0], "A", ["1"]), ([1, 1], "B", ["1"]), ([0, 2], "C", ["1"])],
        [[-4, 4]],
        "x + t1^2 + t1 t2 + t2^2 on the line",
    )


def euclidean_negative() -> Scenario:
    return _make(
        "euclidean-negative", ["x", "y", "t"], [1, 1],
        [([1, 0], "X", ["1", "0", "0"]),
         ([0, 1], "Y", ["0", "1", "0"]),
         ([1, 1], "T", ["0", "0", "1"])],
        [[-1, 1]] * 3,
        "commuting coordinate fields in place of the Heisenberg frame",
    )


def degenerate_flat() -> Scenario:
    return _make(
        "degenerate-flat", ["x", "y"], [1, 1],
        [([1, 0], "X1", ["1", "0"]),
         ([2, 0], "X2", ["0", "flat(x)"]),
         ([0, 1], "X3", ["0", "1"])],
        [[-1, 1]] * 2,
        "exp(t1 dx + t1^2 flat(x) dy + t2 dy) with flat(x) = exp(-1/x^2)",
    )


def grushin() -> Scenario:
    return _make(
        "grushin", ["x", "y"], [2],
        [([1, 0], "X", ["1", "0"]), ([0, 1], "Y", ["0", "x"])],
        [[-1, 1]] * 2,
        "Grushin pair dx, x dy",
    )


def abelian_translation() -> Scenario:
    return _make(
        "abelian-translation", ["x"], [1],
        [([1], "D", ["1"])],
        [[-2, 2]],
        "translation x + t",
    )


LIBRARY: dict[str, Callable[[], Scenario]] = {
    "heisenberg": heisenberg,
    "cubic-counterexample": cubic_counterexample,
    "square-variant": square_variant,
    "euclidean-negative": euclidean_negative,
    "degenerate-flat": degenerate_flat,
    "grushin": grushin,
    "abelian-translation": abelian_translation,
}


def get_scenario(name_or_path: str) -> Scenario:
    if name_or_path in LIBRARY:
        return LIBRARY[name_or_path]()
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        return scenario_from_dict(json.loads(path.read_text()))
    raise KeyError(f"unknown scenario {name_or_path!r}; known: {sorted(LIBRARY)}")
