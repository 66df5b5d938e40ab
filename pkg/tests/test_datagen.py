from __future__ import annotations

import math
from random import Random

import numpy as np
import pytest

from relcd.datagen import (
    LinearGaussianParams,
    RCMGenConfig,
    generate_data,
    load_params,
    parametrize,
    random_rcm,
    save_params,
)
from relcd.rcm import RCM, Adjacency, validate_rcm
from relcd.schema import Cardinality, Schema, random_schema
from relcd.skeleton import random_skeleton, terminal_items

from conftest import dep


def test_parametrize_betas_at_least_one(company_model):
    params = parametrize(company_model, 0)
    assert len(params.beta) == len(company_model.dependencies)
    assert all(b >= 1.0 for b in params.beta.values())


def test_parametrize_empty_model(company_schema):
    params = parametrize(RCM(company_schema, frozenset()), 0)
    assert params.beta == {}


def test_parametrize_deterministic(company_model):
    assert parametrize(company_model, 5).beta == parametrize(company_model, 5).beta


def test_beta_mean_matches_half_normal(company_model):
    # beta = 1 + |gamma|, gamma ~ N(0, 0.1^2): mean = 1 + 0.1 * sqrt(2/pi)
    values = []
    for seed in range(2000):
        values.extend(parametrize(company_model, seed).beta.values())
    expected = 1.0 + 0.1 * math.sqrt(2.0 / math.pi)
    assert np.mean(values) == pytest.approx(expected, abs=0.003)


def test_root_attribute_variance(company_schema):
    # competence has no parents: variance equals the noise variance
    model = RCM(company_schema, frozenset({dep(("employee",), "competence", "salary")}))
    sk = random_skeleton(company_schema, 10_000, 1)
    params = parametrize(model, 1)
    data = generate_data(model, params, sk, 1)
    roots = [data.get(i, "competence") for i in sk.items_of("employee")]
    assert np.var(roots) == pytest.approx(0.01, rel=0.10)


def test_single_parent_residual(company_schema):
    model = RCM(company_schema, frozenset({dep(("employee",), "competence", "salary")}))
    sk = random_skeleton(company_schema, 5000, 2)
    params = parametrize(model, 2)
    data = generate_data(model, params, sk, 2)
    beta = next(iter(params.beta.values()))
    residuals = [
        data.get(i, "salary") - beta * data.get(i, "competence")
        for i in sk.items_of("employee")
    ]
    assert np.mean(residuals) == pytest.approx(0.0, abs=0.01)
    assert np.var(residuals) == pytest.approx(0.01, rel=0.10)


def test_chain_variance_propagation(company_model, company_schema):
    # success = beta * mean(developers' competence) + noise, so its variance
    # for a product with m developers is beta^2 * 0.01 / m + 0.01
    sk = random_skeleton(company_schema, 4000, 3)
    params = parametrize(company_model, 3)
    data = generate_data(company_model, params, sk, 3)
    beta = params.beta[dep(("product", "develops", "employee"), "competence", "success")]
    path = ("product", "develops", "employee")
    by_m: dict[int, list[float]] = {}
    for p in sk.items_of("product"):
        m = len(terminal_items(sk, path, p))
        if m:
            by_m.setdefault(m, []).append(data.get(p, "success"))
    for m, vals in by_m.items():
        if len(vals) < 300:
            continue
        expected = beta * beta * 0.01 / m + 0.01
        assert np.var(vals) == pytest.approx(expected, rel=0.10)


def test_generate_data_deterministic(company_model, company_schema):
    sk = random_skeleton(company_schema, 50, 4)
    params = parametrize(company_model, 4)
    a = generate_data(company_model, params, sk, 4)
    b = generate_data(company_model, params, sk, 4)
    assert a.values == b.values


def test_zero_noise_is_deterministic_function(company_model, company_schema):
    sk = random_skeleton(company_schema, 30, 5)
    params = parametrize(company_model, 5)
    params.noise_sd = 0.0
    data = generate_data(company_model, params, sk, 5)
    # all roots are zero, so everything downstream is exactly zero
    assert all(v == 0.0 for v in data.values.values())


def test_empty_parent_set_contributes_zero(company_schema, company_model):
    from conftest import company_skeleton_from_pairs

    sk = company_skeleton_from_pairs(company_schema, develops=[], funds=[])
    params = parametrize(company_model, 6)
    params.noise_sd = 0.0
    data = generate_data(company_model, params, sk, 6)
    assert data.get("p1", "success") == 0.0


def test_params_round_trip(tmp_path, company_model):
    params = parametrize(company_model, 7)
    path = tmp_path / "params.json"
    save_params(params, path)
    loaded = load_params(path)
    assert loaded.beta == params.beta
    assert loaded.noise_sd == params.noise_sd


def test_random_rcm_respects_constraints():
    built = 0
    seed = 0
    while built < 25:
        seed += 1
        schema = random_schema(seed)
        model, h = random_rcm(schema, seed)
        assert h in (2, 3, 4)
        attrs = set(schema.attr_names())
        assert len(model.dependencies) == (3 * len(attrs)) // 2
        assert validate_rcm(model) == []
        effect_counts: dict[str, int] = {}
        touched = set()
        for d in model.dependencies:
            effect_counts[d.effect.attr] = effect_counts.get(d.effect.attr, 0) + 1
            touched |= {d.cause.attr, d.effect.attr}
            assert d.cause.hops <= h
        assert max(effect_counts.values()) <= 3
        assert touched == attrs  # no isolated attribute classes
        built += 1


def test_random_rcm_deterministic():
    schema = random_schema(11)
    assert random_rcm(schema, 11)[0] == random_rcm(schema, 11)[0]


def test_random_rcm_orientable_check_is_called():
    schema = random_schema(12)
    seen = []

    def check(model):
        seen.append(model)
        return True

    model, _ = random_rcm(schema, 12, orientable_check=check)
    assert seen and seen[-1] == model
