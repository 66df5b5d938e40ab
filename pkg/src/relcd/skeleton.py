"""Concrete skeletons: items, participation edges, attribute data, reachability.

A skeleton instantiates a schema as a bipartite graph between entity items and
relationship items. ``terminal_items`` walks a relational path over the
skeleton under distinct-item (bridge-burning) semantics: a path instance never
revisits an item, so e.g. walking out of an item class and back never returns
to the starting item.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from random import Random
from typing import Iterable, Mapping, Sequence

from .schema import Cardinality, GenerationExhausted, Schema

# A multiset of attribute values drawn from one attribute class. Terminal sets
# keep item identity; joining with AttrData yields these value tuples.
ItemMultiset = tuple[float, ...]


@dataclass(frozen=True)
class Skeleton:
    """Items plus participation structure for one schema instantiation."""

    schema: Schema
    entity_items: tuple[tuple[str, str], ...]  # (item id, entity class), sorted
    relationship_items: tuple[tuple[str, str, tuple[str, ...]], ...]
    # (item id, relationship class, participant entity-item tuple), sorted

    @property
    def _lookup(self) -> "_SkeletonIndex":
        idx = self.__dict__.get("_index")
        if idx is None:
            idx = _SkeletonIndex(self)
            self.__dict__["_index"] = idx
        return idx

    def items_of(self, item_class: str) -> tuple[str, ...]:
        return self._lookup.by_class.get(item_class, ())

    def class_of(self, item: str) -> str:
        return self._lookup.item_class[item]

    def neighbors(self, item: str, item_class: str) -> tuple[str, ...]:
        """Skeleton neighbors of ``item`` that belong to ``item_class``."""
        return self._lookup.adjacency.get(item, {}).get(item_class, ())

    def participants_of(self, rel_item: str) -> tuple[str, ...]:
        return self._lookup.participants[rel_item]

    def all_items(self) -> Iterable[tuple[str, str]]:
        yield from self.entity_items
        for item, cls, _ in self.relationship_items:
            yield item, cls


class _SkeletonIndex:
    """Adjacency and class indexes, built once per skeleton."""

    def __init__(self, sk: Skeleton):
        self.item_class: dict[str, str] = {}
        self.by_class: dict[str, tuple[str, ...]] = {}
        self.participants: dict[str, tuple[str, ...]] = {}
        by_class: dict[str, list[str]] = {}
        for item, cls in sk.entity_items:
            self.item_class[item] = cls
            by_class.setdefault(cls, []).append(item)
        adjacency: dict[str, dict[str, list[str]]] = {}
        for item, cls, parts in sk.relationship_items:
            self.item_class[item] = cls
            by_class.setdefault(cls, []).append(item)
            self.participants[item] = parts
            for p in parts:
                pcls = self.item_class[p]
                adjacency.setdefault(item, {}).setdefault(pcls, []).append(p)
                adjacency.setdefault(p, {}).setdefault(cls, []).append(item)
        self.by_class = {c: tuple(sorted(v)) for c, v in by_class.items()}
        self.adjacency = {
            item: {c: tuple(sorted(v)) for c, v in nbrs.items()}
            for item, nbrs in adjacency.items()
        }


@dataclass
class AttrData:
    """Per-item attribute values for one skeleton."""

    values: dict[tuple[str, str], float] = field(default_factory=dict)

    def get(self, item: str, attr: str) -> float:
        return self.values[(item, attr)]

    def multiset(self, items: Iterable[str], attr: str) -> ItemMultiset:
        return tuple(sorted(self.values[(i, attr)] for i in items))


def validate_skeleton(schema: Schema, sk: Skeleton) -> list[str]:
    """Check bipartiteness, participant slots, tuple uniqueness, and cardinalities."""
    violations: list[str] = []
    ent_class = dict(sk.entity_items)
    for item, cls in sk.entity_items:
        if cls not in schema.entity_set:
            violations.append(f"entity item {item!r} has unknown class {cls!r}")
    degree: dict[tuple[str, str], int] = {}
    seen_tuples: set[tuple[str, tuple[str, ...]]] = set()
    for item, cls, parts in sk.relationship_items:
        rel = schema.relationship_map.get(cls)
        if rel is None:
            violations.append(f"relationship item {item!r} has unknown class {cls!r}")
            continue
        if len(parts) != len(rel.participants):
            violations.append(f"relationship item {item!r} has wrong participant count")
            continue
        for slot, p in zip(rel.participants, parts):
            if ent_class.get(p) != slot.entity:
                violations.append(
                    f"relationship item {item!r}: participant {p!r} is not of class"
                    f" {slot.entity!r}"
                )
            degree[(p, cls)] = degree.get((p, cls), 0) + 1
        if len(set(parts)) != len(parts):
            violations.append(f"relationship item {item!r} repeats a participant")
        key = (cls, parts)
        if key in seen_tuples:
            violations.append(f"duplicate participant tuple {parts} in class {cls!r}")
        seen_tuples.add(key)
    for (entity_item, rel_cls), count in sorted(degree.items()):
        ecls = ent_class.get(entity_item)
        if ecls is None:
            continue
        rel = schema.relationship_map.get(rel_cls)
        if rel is None or ecls not in rel.entities:
            violations.append(
                f"entity {entity_item!r} participates in {rel_cls!r} without a slot"
            )
            continue
        if rel.cardinality_of(ecls) is Cardinality.ONE and count > 1:
            violations.append(
                f"cardinality violation: {entity_item!r} in {count} items of {rel_cls!r}"
            )
    return violations


def terminal_items(sk: Skeleton, path: Sequence[str], item: str) -> frozenset[str]:
    """Items of the path's terminal class reachable from ``item`` along ``path``.

    A path instance is a sequence of pairwise-distinct items matching the class
    sequence, consecutive items adjacent in the skeleton. The result is a set:
    each terminal item counts once no matter how many instances reach it.
    """
    if sk.class_of(item) != path[0]:
        raise ValueError(
            f"item {item!r} has class {sk.class_of(item)!r}, path starts at {path[0]!r}"
        )
    cache = sk.__dict__.setdefault("_terminal_cache", {})
    key = (tuple(path), item)
    hit = cache.get(key)
    if hit is not None:
        return hit
    out: set[str] = set()
    last = len(path) - 1
    used = {item}

    def walk(cur: str, depth: int) -> None:
        if depth == last:
            out.add(cur)
            return
        for nxt in sk.neighbors(cur, path[depth + 1]):
            if nxt not in used:
                used.add(nxt)
                walk(nxt, depth + 1)
                used.discard(nxt)

    walk(item, 0)
    result = frozenset(out)
    cache[key] = result
    return result


def terminal_map(sk: Skeleton, path: Sequence[str]) -> dict[str, frozenset[str]]:
    """Terminal sets of ``path`` for every base item, cached on the skeleton."""
    return {i: terminal_items(sk, path, i) for i in sk.items_of(path[0])}


# -- random generation ----------------------------------------------------------


def _entity_counts(schema: Schema, n: int) -> dict[str, int]:
    counts = {}
    for e in schema.entities:
        k = sum(
            1
            for r in schema.relationships_of_entity[e]
            if all(
                p.cardinality is Cardinality.ONE
                for p in schema.relationship_map[r].participants
            )
        )
        counts[e] = int(1.2**k * n)
    return counts


def _relationship_counts(schema: Schema, n: int) -> dict[str, int]:
    return {
        r.name: 2 * n
        if all(p.cardinality is Cardinality.MANY for p in r.participants)
        else n
        for r in schema.relationships
    }


def random_skeleton(schema: Schema, n: int, rng_seed: int) -> Skeleton:
    """Random skeleton with base size ``n``.

    Relationship classes get ``2n`` items when every participation is `many`,
    else ``n``; entity classes get ``floor(1.2^k * n)`` items where ``k`` counts
    incident all-`one` relationship classes. Relationship endpoints are drawn
    uniformly among entities with remaining cardinality capacity, rejecting
    duplicate participant tuples.
    """
    if n < 1:
        raise ValueError("base size must be >= 1")
    rng = Random(rng_seed)
    ent_counts = _entity_counts(schema, n)
    width = max(5, len(str(max(max(ent_counts.values(), default=1), 2 * n))))
    entity_items = []
    pools: dict[str, list[str]] = {}
    for e in schema.entities:
        pools[e] = [f"{e}_{i:0{width}d}" for i in range(ent_counts[e])]
        entity_items.extend((item, e) for item in pools[e])

    rel_items: list[tuple[str, str, tuple[str, ...]]] = []
    for rel in schema.relationships:
        m = _relationship_counts(schema, n)[rel.name]
        # remaining capacity per participating entity item (None = unbounded)
        capacity: dict[str, list[str]] = {}
        for p in rel.participants:
            capacity[p.entity] = list(pools[p.entity])
        used_tuples: set[tuple[str, ...]] = set()
        for i in range(m):
            placed = False
            for _ in range(200):
                parts = []
                for p in rel.participants:
                    candidates = capacity[p.entity]
                    if not candidates:
                        break
                    parts.append(rng.choice(candidates))
                else:
                    tup = tuple(parts)
                    if tup in used_tuples:
                        continue
                    used_tuples.add(tup)
                    for p, chosen in zip(rel.participants, parts):
                        if p.cardinality is Cardinality.ONE:
                            capacity[p.entity].remove(chosen)
                    rel_items.append((f"{rel.name}_{i:0{width}d}", rel.name, tup))
                    placed = True
                    break
                break
            if not placed:
                raise GenerationExhausted(
                    f"cannot place item {i} of {rel.name!r} (n={n}, seed={rng_seed})"
                )
    sk = Skeleton(schema, tuple(sorted(entity_items)), tuple(sorted(rel_items)))
    problems = validate_skeleton(schema, sk)
    if problems:
        raise GenerationExhausted(f"generated skeleton invalid: {problems[:3]}")
    return sk


# -- serialization ----------------------------------------------------------------


def skeleton_to_dict(sk: Skeleton) -> dict:
    return {
        "items": [{"id": i, "class": c} for i, c in sk.entity_items],
        "relationships": [
            {"id": i, "class": c, "participants": list(parts)}
            for i, c, parts in sk.relationship_items
        ],
    }


def skeleton_from_dict(schema: Schema, data: Mapping) -> Skeleton:
    return Skeleton(
        schema,
        tuple(sorted((d["id"], d["class"]) for d in data["items"])),
        tuple(
            sorted(
                (d["id"], d["class"], tuple(d["participants"]))
                for d in data["relationships"]
            )
        ),
    )


def save_skeleton(sk: Skeleton, path: str | Path) -> None:
    import json

    Path(path).write_text(json.dumps(skeleton_to_dict(sk), indent=2, sort_keys=True))


def load_skeleton(schema: Schema, path: str | Path) -> Skeleton:
    import json

    return skeleton_from_dict(schema, json.loads(Path(path).read_text()))


def save_attr_data(data: AttrData, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_id", "attribute", "value"])
        for (item, attr), value in sorted(data.values.items()):
            writer.writerow([item, attr, repr(value)])


def load_attr_data(path: str | Path) -> AttrData:
    out = AttrData()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for item, attr, value in reader:
            out.values[(item, attr)] = float(value)
    return out
