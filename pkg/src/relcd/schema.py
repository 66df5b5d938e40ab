"""Relational schemas: entity, relationship, and attribute classes with cardinalities.

A schema is the static vocabulary of a relational domain. Relationship classes
connect two or three distinct entity classes, each participation carrying a
cardinality (``one`` or ``many``) that bounds how many relationship items a
single entity may take part in. Attribute classes are owned by exactly one
item class (entity or relationship class).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from random import Random
from typing import Iterable, Mapping, Sequence


class Cardinality(Enum):
    ONE = "one"
    MANY = "many"


@dataclass(frozen=True)
class Participant:
    """One leg of a relationship class: which entity class, with what cardinality."""

    entity: str
    cardinality: Cardinality


@dataclass(frozen=True)
class RelationshipClass:
    name: str
    participants: tuple[Participant, ...]

    @property
    def entities(self) -> tuple[str, ...]:
        return tuple(p.entity for p in self.participants)

    def cardinality_of(self, entity: str) -> Cardinality:
        for p in self.participants:
            if p.entity == entity:
                return p.cardinality
        raise KeyError(f"{entity!r} does not participate in {self.name!r}")


@dataclass(frozen=True)
class AttributeClass:
    name: str
    owner: str


@dataclass(frozen=True)
class Schema:
    """Immutable relational schema. Use :meth:`build` for dict-style construction.

    All stored tuples are sorted by class name, so two schemas with the same
    classes compare equal regardless of construction order.
    """

    entities: tuple[str, ...]
    relationships: tuple[RelationshipClass, ...]
    attributes: tuple[AttributeClass, ...]

    @classmethod
    def build(
        cls,
        entities: Iterable[str],
        relationships: Mapping[str, Sequence[tuple[str, Cardinality]]],
        attributes: Mapping[str, str],
    ) -> "Schema":
        rels = tuple(
            RelationshipClass(name, tuple(Participant(e, c) for e, c in parts))
            for name, parts in sorted(relationships.items())
        )
        attrs = tuple(AttributeClass(a, o) for a, o in sorted(attributes.items()))
        return cls(tuple(sorted(entities)), rels, attrs)

    # -- lookups -------------------------------------------------------------

    @cached_property
    def relationship_map(self) -> dict[str, RelationshipClass]:
        return {r.name: r for r in self.relationships}

    @cached_property
    def entity_set(self) -> frozenset[str]:
        return frozenset(self.entities)

    @cached_property
    def item_classes(self) -> tuple[str, ...]:
        return tuple(sorted(self.entities + tuple(r.name for r in self.relationships)))

    @cached_property
    def attribute_owner(self) -> dict[str, str]:
        return {a.name: a.owner for a in self.attributes}

    @cached_property
    def attrs_of_class(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {c: [] for c in self.item_classes}
        for a in self.attributes:
            out.setdefault(a.owner, []).append(a.name)
        return {c: tuple(sorted(v)) for c, v in out.items()}

    @cached_property
    def relationships_of_entity(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {e: [] for e in self.entities}
        for r in self.relationships:
            for p in r.participants:
                if p.entity in out:
                    out[p.entity].append(r.name)
        return {e: tuple(sorted(v)) for e, v in out.items()}

    def is_entity(self, name: str) -> bool:
        return name in self.entity_set

    def is_relationship(self, name: str) -> bool:
        return name in self.relationship_map

    def cardinality(self, entity: str, relationship: str) -> Cardinality:
        return self.relationship_map[relationship].cardinality_of(entity)

    def adjacent_classes(self, name: str) -> tuple[str, ...]:
        """Item classes reachable in one participation hop (for path walking)."""
        if self.is_entity(name):
            return self.relationships_of_entity[name]
        return tuple(sorted(self.relationship_map[name].entities))

    def attr_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)


def validate_schema(schema: Schema) -> list[str]:
    """Return all invariant violations; an empty list means the schema is valid."""
    violations: list[str] = []
    ent = set(schema.entities)
    rel_names = [r.name for r in schema.relationships]
    if len(set(schema.entities)) != len(schema.entities):
        violations.append("duplicate entity class names")
    if len(set(rel_names)) != len(rel_names):
        violations.append("duplicate relationship class names")
    if ent & set(rel_names):
        violations.append(f"entity/relationship name clash: {sorted(ent & set(rel_names))}")
    for r in schema.relationships:
        if len(r.participants) < 2:
            violations.append(f"relationship {r.name!r} has fewer than 2 participants")
        seen = [p.entity for p in r.participants]
        if len(set(seen)) != len(seen):
            violations.append(f"relationship {r.name!r} lists a participant twice")
        for p in r.participants:
            if p.entity not in ent:
                violations.append(
                    f"relationship {r.name!r} references unknown entity {p.entity!r}"
                )
    attr_names = [a.name for a in schema.attributes]
    if len(set(attr_names)) != len(attr_names):
        violations.append("duplicate attribute class names")
    item = set(schema.item_classes)
    for a in schema.attributes:
        if a.owner not in item:
            violations.append(f"attribute {a.name!r} owned by unknown class {a.owner!r}")
    return violations


# -- random generation --------------------------------------------------------


@dataclass(frozen=True)
class SchemaGenConfig:
    """Knobs for the random-schema protocol used by the benchmark suite."""

    entity_counts: tuple[tuple[int, float], ...] = ((3, 0.50), (4, 0.25), (5, 0.25))
    min_relationships: int = 2
    max_relationships: int = 5
    ternary_probability: float = 0.25
    min_entity_attrs: int = 1
    max_entity_attrs: int = 3
    max_relationship_attrs: int = 1
    max_total_attrs: int = 8
    max_retries: int = 1000


class GenerationExhausted(RuntimeError):
    """Raised when a random generator cannot satisfy its rejection rules."""


def _connected(schema: Schema) -> bool:
    classes = list(schema.item_classes)
    if not classes:
        return False
    seen = {classes[0]}
    frontier = [classes[0]]
    while frontier:
        cur = frontier.pop()
        for nxt in schema.adjacent_classes(cur):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return len(seen) == len(classes)


def random_schema(rng_seed: int, config: SchemaGenConfig | None = None) -> Schema:
    """Generate a random schema under the benchmark protocol.

    The entity-class count is drawn once from ``config.entity_counts``; the rest
    of the schema is redrawn until the rejection rules pass (item-class graph
    connected, total attribute count bounded).
    """
    cfg = config or SchemaGenConfig()
    rng = Random(rng_seed)
    counts, weights = zip(*cfg.entity_counts)
    n_entities = rng.choices(counts, weights=weights)[0]
    entities = [f"E{i + 1}" for i in range(n_entities)]

    for _ in range(cfg.max_retries):
        n_rels = rng.randint(cfg.min_relationships, cfg.max_relationships)
        relationships: dict[str, list[tuple[str, Cardinality]]] = {}
        for r in range(n_rels):
            arity = 3 if rng.random() < cfg.ternary_probability else 2
            if arity > n_entities:
                arity = n_entities
            members = rng.sample(entities, arity)
            relationships[f"R{r + 1}"] = [
                (e, rng.choice((Cardinality.ONE, Cardinality.MANY))) for e in members
            ]
        attributes: dict[str, str] = {}
        idx = 1
        for e in entities:
            for _ in range(rng.randint(cfg.min_entity_attrs, cfg.max_entity_attrs)):
                attributes[f"X{idx}"] = e
                idx += 1
        for r in sorted(relationships):
            for _ in range(rng.randint(0, cfg.max_relationship_attrs)):
                attributes[f"X{idx}"] = r
                idx += 1
        schema = Schema.build(entities, relationships, attributes)
        if len(schema.attributes) <= cfg.max_total_attrs and _connected(schema):
            return schema
    raise GenerationExhausted(
        f"no valid schema after {cfg.max_retries} retries (seed={rng_seed})"
    )


# -- serialization -------------------------------------------------------------


def schema_to_dict(schema: Schema) -> dict:
    return {
        "entities": list(schema.entities),
        "relationships": [
            {
                "name": r.name,
                "participants": [
                    {"entity": p.entity, "cardinality": p.cardinality.value}
                    for p in r.participants
                ],
            }
            for r in schema.relationships
        ],
        "attributes": [{"id": a.name, "owner": a.owner} for a in schema.attributes],
    }


def schema_from_dict(data: Mapping) -> Schema:
    return Schema.build(
        data["entities"],
        {
            r["name"]: [
                (p["entity"], Cardinality(p["cardinality"])) for p in r["participants"]
            ]
            for r in data["relationships"]
        },
        {a["id"]: a["owner"] for a in data["attributes"]},
    )


def save_schema(schema: Schema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema_to_dict(schema), indent=2, sort_keys=True))


def load_schema(path: str | Path) -> Schema:
    return schema_from_dict(json.loads(Path(path).read_text()))
