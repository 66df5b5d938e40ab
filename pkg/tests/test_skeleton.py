from __future__ import annotations

import itertools
from random import Random

import pytest

from relcd.rcm import enumerate_paths, reverse_path, valid_path
from relcd.schema import Cardinality, random_schema
from relcd.skeleton import (
    AttrData,
    GenerationExhausted,
    Skeleton,
    load_attr_data,
    load_skeleton,
    random_skeleton,
    save_attr_data,
    save_skeleton,
    terminal_items,
    validate_skeleton,
)

from conftest import company_skeleton_from_pairs, DEVELOPS_PAIRS, FUNDS_PAIRS


# -- independent oracle: enumerate full item sequences, filter at the end ----


def walk_oracle(sk: Skeleton, path, start) -> set[str]:
    """All terminal items of complete, pairwise-distinct item sequences.

    Deliberately different construction from the library: builds every
    candidate sequence level by level from raw adjacency and applies the
    distinctness filter on complete sequences only.
    """
    sequences = [[start]] if sk.class_of(start) == path[0] else []
    for depth in range(1, len(path)):
        nxt = []
        for seq in sequences:
            for cand in sk.neighbors(seq[-1], path[depth]):
                nxt.append(seq + [cand])
        sequences = nxt
    return {
        seq[-1] for seq in sequences if len(set(seq)) == len(seq)
    }


def test_company_skeleton_valid(company_schema, company_skeleton):
    assert validate_skeleton(company_schema, company_skeleton) == []


def test_double_funding_violates_cardinality(company_schema):
    sk = company_skeleton_from_pairs(
        company_schema, funds=FUNDS_PAIRS + [("p1", "b2")]
    )
    problems = validate_skeleton(company_schema, sk)
    assert any("cardinality" in p for p in problems)


def test_isolated_entity_is_fine(company_schema):
    sk = company_skeleton_from_pairs(
        company_schema, develops=DEVELOPS_PAIRS[1:]
    )  # e1 develops nothing
    assert validate_skeleton(company_schema, sk) == []


def test_duplicate_tuple_reported(company_schema):
    entity_items = (("e1", "employee"), ("p1", "product"), ("b1", "unit"))
    rel_items = (
        ("d_a", "develops", ("e1", "p1")),
        ("d_b", "develops", ("e1", "p1")),
    )
    sk = Skeleton(company_schema, entity_items, rel_items)
    assert any("duplicate" in p for p in validate_skeleton(company_schema, sk))


def test_terminal_set_worked_examples(company_skeleton):
    sk = company_skeleton
    assert terminal_items(sk, ("product", "develops", "employee"), "p3") == {
        "e2",
        "e3",
        "e4",
    }
    assert terminal_items(sk, ("employee",), "e2") == {"e2"}
    assert terminal_items(
        sk, ("employee", "develops", "product", "funds", "unit"), "e2"
    ) == {"b1", "b2"}
    # coworkers exclude the start item under distinct-item semantics
    assert terminal_items(
        sk, ("employee", "develops", "product", "develops", "employee"), "e2"
    ) == {"e1", "e3", "e4"}


def test_terminal_set_class_check(company_skeleton):
    with pytest.raises(ValueError):
        terminal_items(company_skeleton, ("product", "develops", "employee"), "e1")


def test_terminal_class_membership(company_schema, company_skeleton):
    for path in enumerate_paths(company_schema, "employee", 4):
        for item in company_skeleton.items_of("employee"):
            for out in terminal_items(company_skeleton, path, item):
                assert company_skeleton.class_of(out) == path[-1]


def test_terminal_set_symmetry(company_schema, company_skeleton):
    sk = company_skeleton
    for base in company_schema.item_classes:
        for path in enumerate_paths(company_schema, base, 4):
            rev = reverse_path(path)
            for i in sk.items_of(base):
                for j in terminal_items(sk, path, i):
                    assert i in terminal_items(sk, rev, j)


def test_terminal_set_matches_walk_oracle(company_schema, company_skeleton):
    for base in company_schema.item_classes:
        for path in enumerate_paths(company_schema, base, 5):
            for item in company_skeleton.items_of(base):
                assert terminal_items(company_skeleton, path, item) == walk_oracle(
                    company_skeleton, path, item
                )


def test_terminal_set_matches_walk_oracle_random():
    rng = Random(1)
    cases = 0
    seed = 0
    while cases < 200:
        seed += 1
        schema = random_schema(seed)
        try:
            sk = random_skeleton(schema, rng.randint(2, 8), seed)
        except GenerationExhausted:
            continue
        base = rng.choice(schema.item_classes)
        paths = enumerate_paths(schema, base, 4)
        path = rng.choice(paths)
        items = sk.items_of(base)
        if not items:
            continue
        item = rng.choice(items)
        assert terminal_items(sk, path, item) == walk_oracle(sk, path, item)
        cases += 1


def test_random_skeleton_counts(company_schema):
    sk = random_skeleton(company_schema, 200, 0)
    assert len(sk.items_of("develops")) == 400  # both sides `many`
    assert len(sk.items_of("funds")) == 200
    # no incident all-`one` relationships anywhere in this schema
    for cls in ("employee", "product", "unit"):
        assert len(sk.items_of(cls)) == 200
    assert validate_skeleton(company_schema, sk) == []


def test_random_skeleton_all_one_bonus():
    from relcd.schema import Schema

    schema = Schema.build(
        entities=["a", "b"],
        relationships={"r": [("a", Cardinality.ONE), ("b", Cardinality.ONE)]},
        attributes={"x": "a", "y": "b"},
    )
    sk = random_skeleton(schema, 100, 3)
    assert len(sk.items_of("a")) == 120  # one qualifying relationship class
    assert len(sk.items_of("r")) == 100
    assert validate_skeleton(schema, sk) == []


def test_random_skeleton_deterministic(company_schema):
    assert random_skeleton(company_schema, 50, 9) == random_skeleton(company_schema, 50, 9)


def test_random_skeletons_validate_across_schemas():
    count = 0
    for seed in range(60):
        schema = random_schema(seed)
        sk = random_skeleton(schema, 15, seed)
        assert validate_skeleton(schema, sk) == []
        count += 1
    assert count == 60


def test_skeleton_round_trip(tmp_path, company_schema, company_skeleton):
    path = tmp_path / "skeleton.json"
    save_skeleton(company_skeleton, path)
    assert load_skeleton(company_schema, path) == company_skeleton


def test_attr_data_round_trip(tmp_path, company_data):
    path = tmp_path / "data.csv"
    save_attr_data(company_data, path)
    assert load_attr_data(path).values == company_data.values


def test_attr_data_full_precision(tmp_path):
    data = AttrData(values={("i1", "x"): 0.1 + 0.2})
    path = tmp_path / "data.csv"
    save_attr_data(data, path)
    assert load_attr_data(path).values[("i1", "x")] == 0.1 + 0.2
