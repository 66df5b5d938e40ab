from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relcd.schema import (
    Cardinality,
    GenerationExhausted,
    Schema,
    SchemaGenConfig,
    load_schema,
    random_schema,
    save_schema,
    schema_from_dict,
    schema_to_dict,
    validate_schema,
)


def test_company_schema_is_valid(company_schema):
    assert validate_schema(company_schema) == []


def test_minimal_schema_is_valid():
    schema = Schema.build(entities=["a"], relationships={}, attributes={"x": "a"})
    assert validate_schema(schema) == []


def test_broken_reference_is_reported():
    schema = Schema.build(
        entities=["a"],
        relationships={"r": [("a", Cardinality.ONE), ("ghost", Cardinality.MANY)]},
        attributes={},
    )
    problems = validate_schema(schema)
    assert any("ghost" in p for p in problems)


def test_duplicate_participant_is_reported():
    schema = Schema.build(
        entities=["a", "b"],
        relationships={"r": [("a", Cardinality.ONE), ("a", Cardinality.MANY)]},
        attributes={},
    )
    assert any("twice" in p for p in validate_schema(schema))


def test_schema_equality_is_order_insensitive(company_schema):
    shuffled = Schema.build(
        entities=["unit", "employee", "product"],
        relationships={
            "funds": [("product", Cardinality.ONE), ("unit", Cardinality.MANY)],
            "develops": [("employee", Cardinality.MANY), ("product", Cardinality.MANY)],
        },
        attributes={
            "budget": "unit",
            "competence": "employee",
            "revenue": "unit",
            "salary": "employee",
            "success": "product",
        },
    )
    assert shuffled == company_schema


def test_cardinality_lookup(company_schema):
    assert company_schema.cardinality("product", "funds") is Cardinality.ONE
    assert company_schema.cardinality("unit", "funds") is Cardinality.MANY
    assert company_schema.cardinality("employee", "develops") is Cardinality.MANY


def test_random_schema_deterministic():
    assert random_schema(42) == random_schema(42)


def test_random_schema_entity_fraction():
    # entity-class count is drawn before the rejection loop, so the accepted
    # fraction tracks the configured distribution
    counts = {3: 0, 4: 0, 5: 0}
    n = 10_000
    for seed in range(n):
        counts[len(random_schema(seed).entities)] += 1
    assert counts[3] / n == pytest.approx(0.50, abs=0.02)
    assert counts[4] / n == pytest.approx(0.25, abs=0.02)
    assert counts[5] / n == pytest.approx(0.25, abs=0.02)


def test_random_schema_rejection_rules_hold():
    for seed in range(300):
        schema = random_schema(seed)
        assert len(schema.attributes) <= 8
        # connectivity: walk the item-class graph
        classes = list(schema.item_classes)
        seen = {classes[0]}
        frontier = [classes[0]]
        while frontier:
            cur = frontier.pop()
            for nxt in schema.adjacent_classes(cur):
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        assert seen == set(classes)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=10**9))
def test_random_schema_always_validates(seed):
    assert validate_schema(random_schema(seed)) == []


def test_generation_exhausted():
    cfg = SchemaGenConfig(max_total_attrs=0, max_retries=5)
    with pytest.raises(GenerationExhausted):
        random_schema(0, cfg)


def test_schema_round_trip(tmp_path, company_schema):
    path = tmp_path / "schema.json"
    save_schema(company_schema, path)
    assert load_schema(path) == company_schema
    # bit-exact round trip of the file itself
    text = path.read_text()
    save_schema(load_schema(path), path)
    assert path.read_text() == text


def test_schema_dict_shape(company_schema):
    payload = schema_to_dict(company_schema)
    assert set(payload) == {"entities", "relationships", "attributes"}
    assert payload["attributes"][0].keys() == {"id", "owner"}
    assert schema_from_dict(json.loads(json.dumps(payload))) == company_schema
