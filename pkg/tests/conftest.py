"""Shared fixtures: the small company domain used across the test suite.

Three entity classes (employee, product, unit) with two relationships:
employees develop products (many-many) and units fund products (a unit funds
many products, a product is funded by at most one unit). The reference model
wires competence -> success -> revenue -> budget -> salary across them.
"""
from __future__ import annotations

import pytest

from relcd.rcm import RCM, RelationalDependency, RelationalVariable
from relcd.schema import Cardinality, Schema
from relcd.skeleton import AttrData, Skeleton

ONE = Cardinality.ONE
MANY = Cardinality.MANY


def rv(path, attr) -> RelationalVariable:
    return RelationalVariable(tuple(path), attr)


def dep(cause_path, cause_attr, effect_attr) -> RelationalDependency:
    return RelationalDependency(
        cause=rv(cause_path, cause_attr),
        effect=rv((cause_path[0],), effect_attr),
    )


@pytest.fixture(scope="session")
def company_schema() -> Schema:
    return Schema.build(
        entities=["employee", "product", "unit"],
        relationships={
            "develops": [("employee", MANY), ("product", MANY)],
            "funds": [("product", ONE), ("unit", MANY)],
        },
        attributes={
            "competence": "employee",
            "salary": "employee",
            "success": "product",
            "revenue": "unit",
            "budget": "unit",
        },
    )


DEVELOPS_PAIRS = [
    ("e1", "p1"),
    ("e2", "p1"),
    ("e2", "p2"),
    ("e2", "p3"),
    ("e3", "p3"),
    ("e4", "p3"),
    ("e4", "p4"),
    ("e5", "p4"),
    ("e5", "p5"),
]

FUNDS_PAIRS = [
    ("p1", "b1"),
    ("p2", "b1"),
    ("p3", "b2"),
    ("p4", "b2"),
    ("p5", "b2"),
]


def company_skeleton_from_pairs(schema, develops=DEVELOPS_PAIRS, funds=FUNDS_PAIRS) -> Skeleton:
    entity_items = (
        [(f"e{i}", "employee") for i in range(1, 6)]
        + [(f"p{i}", "product") for i in range(1, 6)]
        + [("b1", "unit"), ("b2", "unit")]
    )
    rel_items = [
        (f"d_{e}_{p}", "develops", (e, p)) for e, p in develops
    ] + [
        (f"f_{p}_{b}", "funds", (p, b)) for p, b in funds
    ]
    return Skeleton(schema, tuple(sorted(entity_items)), tuple(sorted(rel_items)))


@pytest.fixture(scope="session")
def company_skeleton(company_schema) -> Skeleton:
    return company_skeleton_from_pairs(company_schema)


@pytest.fixture(scope="session")
def company_model(company_schema) -> RCM:
    deps = frozenset(
        {
            dep(("employee",), "competence", "salary"),
            dep(("unit",), "revenue", "budget"),
            dep(("product", "develops", "employee"), "competence", "success"),
            dep(("unit", "funds", "product"), "success", "revenue"),
            dep(
                ("employee", "develops", "product", "funds", "unit"),
                "budget",
                "salary",
            ),
        }
    )
    return RCM(schema=company_schema, dependencies=deps)


@pytest.fixture()
def company_data(company_skeleton) -> AttrData:
    """Deterministic toy values: distinct per item so multisets are telling."""
    data = AttrData()
    for item, cls in company_skeleton.all_items():
        if cls == "employee":
            base = float(int(item[1:]))
            data.values[(item, "competence")] = base
            data.values[(item, "salary")] = 10.0 + base
        elif cls == "product":
            data.values[(item, "success")] = 20.0 + float(int(item[1:]))
        elif cls == "unit":
            base = float(int(item[1:]))
            data.values[(item, "revenue")] = 30.0 + base
            data.values[(item, "budget")] = 40.0 + base
    return data
