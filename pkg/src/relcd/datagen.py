"""Linear Gaussian parametrization of an RCM plus the random-model generator.

Attribute values are produced in attribute-class topological order: each item
attribute is a coefficient-weighted sum of the averages of its parent
multisets plus Gaussian noise. Coefficients are 1 + |gamma| with gamma drawn
from a small-variance normal, so every edge carries signal.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from random import Random
from typing import Callable, Sequence

import numpy as np

from .rcm import (
    RCM,
    Adjacency,
    RelationalDependency,
    _attr_graph_has_cycle,
    enumerate_candidate_deps,
    path_cardinality,
    reverse_path,
    validate_rcm,
)
from .schema import Cardinality, GenerationExhausted, Schema
from .skeleton import AttrData, Skeleton, terminal_items


@dataclass
class LinearGaussianParams:
    beta: dict[RelationalDependency, float]
    noise_sd: float = 0.1
    coeff_sd: float = 0.1


def parametrize(model: RCM, rng_seed: int, noise_sd: float = 0.1, coeff_sd: float = 0.1) -> LinearGaussianParams:
    """One coefficient per dependency, sampled as 1 + |gamma|."""
    rng = np.random.default_rng(rng_seed)
    beta = {}
    for dep in sorted(model.dependencies):
        beta[dep] = 1.0 + abs(float(rng.normal(0.0, coeff_sd)))
    return LinearGaussianParams(beta=beta, noise_sd=noise_sd, coeff_sd=coeff_sd)


def _attr_topo_order(model: RCM) -> list[str]:
    attrs = sorted(model.schema.attr_names())
    parents: dict[str, set[str]] = {a: set() for a in attrs}
    for dep in model.dependencies:
        parents[dep.effect.attr].add(dep.cause.attr)
    order: list[str] = []
    placed: set[str] = set()
    while len(order) < len(attrs):
        progressed = False
        for a in attrs:
            if a in placed:
                continue
            if parents[a] <= placed:
                order.append(a)
                placed.add(a)
                progressed = True
        if not progressed:
            raise AssertionError("attribute graph is cyclic")
    return order


def generate_data(
    model: RCM, params: LinearGaussianParams, sk: Skeleton, rng_seed: int
) -> AttrData:
    """Sample attribute values over the skeleton.

    Parents with an empty terminal set contribute zero; attributes with no
    parents are pure noise. Evaluation order and noise draws are keyed by
    sorted item ids, so regeneration is bit-identical for equal inputs.
    """
    rng = np.random.default_rng(rng_seed)
    data = AttrData()
    values = data.values
    schema = model.schema
    for attr in _attr_topo_order(model):
        owner = schema.attribute_owner[attr]
        items = sk.items_of(owner)
        deps = model.parents_of(attr)
        noise = rng.normal(0.0, params.noise_sd, size=len(items))
        for pos, item in enumerate(items):
            total = noise[pos]
            for dep in deps:
                terms = terminal_items(sk, dep.cause.path, item)
                if not terms:
                    continue
                s = 0.0
                for t in terms:
                    s += values[(t, dep.cause.attr)]
                total += params.beta[dep] * s / len(terms)
            values[(item, attr)] = float(total)
    return data


# ---------------------------------------------------------------------------
# Random models
# ---------------------------------------------------------------------------


@dataclass
class RCMGenConfig:
    hop_choices: tuple[int, ...] = (2, 3, 4)
    max_parents: int = 3
    max_retries: int = 2000


def _directed_candidates(schema: Schema, h: int) -> list[RelationalDependency]:
    out = []
    for adj in sorted(enumerate_candidate_deps(schema, h)):
        out.extend(adj.forms())
    return sorted(out)


def _rbo_capable(schema: Schema, dep: RelationalDependency) -> bool:
    path = dep.cause.path
    return (
        path_cardinality(schema, path) is Cardinality.MANY
        or path_cardinality(schema, reverse_path(path)) is Cardinality.MANY
    )


def random_rcm(
    schema: Schema,
    rng_seed: int,
    config: RCMGenConfig | None = None,
    orientable_check: Callable[[RCM], bool] | None = None,
) -> tuple[RCM, int]:
    """Draw a random RCM: uniform dependency subset under validity constraints.

    Constraints: attribute-level acyclicity, at most ``max_parents`` parents
    per canonical variable, no isolated attribute class, and an orientable
    equivalence class. Orientability defaults to a structural shortcut (some
    dependency admits a bivariate-orientation test, i.e. a `many` path); pass
    ``orientable_check`` to decide with the exact oracle instead. Returns the
    model and the hop threshold used.
    """
    cfg = config or RCMGenConfig()
    rng = Random(rng_seed)
    attrs = set(schema.attr_names())
    n_deps_target = (3 * len(attrs)) // 2
    for _ in range(cfg.max_retries):
        h = rng.choice(cfg.hop_choices)
        candidates = _directed_candidates(schema, h)
        if len(candidates) < n_deps_target:
            continue
        chosen = rng.sample(candidates, n_deps_target)
        deps = frozenset(chosen)
        effect_counts: dict[str, int] = {}
        for d in deps:
            effect_counts[d.effect.attr] = effect_counts.get(d.effect.attr, 0) + 1
        if any(c > cfg.max_parents for c in effect_counts.values()):
            continue
        if _attr_graph_has_cycle((d.cause.attr, d.effect.attr) for d in deps):
            continue
        touched = {d.cause.attr for d in deps} | {d.effect.attr for d in deps}
        if touched != attrs:
            continue
        model = RCM(schema=schema, dependencies=deps)
        if validate_rcm(model):
            continue
        if orientable_check is not None:
            if not orientable_check(model):
                continue
        elif not any(_rbo_capable(schema, d) for d in deps):
            continue
        return model, h
    raise GenerationExhausted(f"no valid model after {cfg.max_retries} retries (seed={rng_seed})")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_params(params: LinearGaussianParams, path: str | Path) -> None:
    payload = {
        "noise_sd": params.noise_sd,
        "coeff_sd": params.coeff_sd,
        "beta": [
            {
                "cause_path": list(dep.cause.path),
                "cause_attr": dep.cause.attr,
                "effect_attr": dep.effect.attr,
                "value": value,
            }
            for dep, value in sorted(params.beta.items())
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_params(path: str | Path) -> LinearGaussianParams:
    from .rcm import RelationalVariable

    payload = json.loads(Path(path).read_text())
    beta = {}
    for entry in payload["beta"]:
        dep = RelationalDependency(
            cause=RelationalVariable(tuple(entry["cause_path"]), entry["cause_attr"]),
            effect=RelationalVariable((entry["cause_path"][0],), entry["effect_attr"]),
        )
        beta[dep] = float(entry["value"])
    return LinearGaussianParams(
        beta=beta, noise_sd=payload["noise_sd"], coeff_sd=payload["coeff_sd"]
    )
