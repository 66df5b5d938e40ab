from __future__ import annotations

import itertools
from random import Random

import pytest

from relcd.rcm import (
    RCM,
    Adjacency,
    AttributeGraph,
    CanonicalUnshieldedTriple,
    GroundGraph,
    RCIOracle,
    RelationalDependency,
    RelationalVariable,
    d_separated,
    deserialize_rcm,
    enumerate_candidate_deps,
    enumerate_cuts,
    enumerate_paths,
    ground_graph,
    meek_closure,
    paths_between,
    reverse_path,
    serialize_rcm,
    valid_path,
    validate_rcm,
)
from relcd.schema import Cardinality, Schema, random_schema
from relcd.skeleton import random_skeleton, terminal_items

from conftest import company_skeleton_from_pairs, rv, dep, DEVELOPS_PAIRS, FUNDS_PAIRS


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


def independent_path_check(schema: Schema, classes) -> bool:
    """Literal restatement of the walk rules, kept separate from the library."""
    if not classes:
        return False
    kinds = []
    for c in classes:
        if c in schema.entity_set:
            kinds.append("e")
        elif c in schema.relationship_map:
            kinds.append("r")
        else:
            return False
    for idx in range(len(classes) - 1):
        if kinds[idx] == kinds[idx + 1]:
            return False
        ent = classes[idx] if kinds[idx] == "e" else classes[idx + 1]
        rel = classes[idx + 1] if kinds[idx] == "e" else classes[idx]
        if ent not in schema.relationship_map[rel].entities:
            return False
    for idx in range(len(classes) - 2):
        if classes[idx] != classes[idx + 2]:
            continue
        mid = classes[idx + 1]
        if kinds[idx + 1] == "r":
            return False  # one relationship item never links two same-class items
        if schema.cardinality(mid, classes[idx]) is not Cardinality.MANY:
            return False
    return True


def test_valid_path_examples(company_schema):
    s = company_schema
    assert valid_path(s, ("employee", "develops", "product", "funds", "unit"))
    assert valid_path(s, ("employee",))
    assert valid_path(s, ("employee", "develops", "product", "develops", "employee"))
    # a product is funded by at most one unit, so returning through funds is out
    assert not valid_path(s, ("unit", "funds", "product", "funds", "unit"))
    assert not valid_path(s, ("employee", "product"))
    assert not valid_path(s, ("employee", "funds", "product"))


def test_reverse_path(company_schema):
    path = ("employee", "develops", "product", "funds", "unit")
    assert reverse_path(path) == ("unit", "funds", "product", "develops", "employee")
    assert reverse_path(("employee",)) == ("employee",)
    for base in company_schema.item_classes:
        for p in enumerate_paths(company_schema, base, 4):
            assert reverse_path(reverse_path(p)) == p
            assert valid_path(company_schema, reverse_path(p))


def test_enumerate_paths_matches_exhaustive(company_schema):
    h = 4
    classes = company_schema.item_classes
    expected = set()
    for length in range(1, h + 2):
        for combo in itertools.product(classes, repeat=length):
            if independent_path_check(company_schema, combo):
                expected.add(combo)
    got = {
        p
        for base in classes
        for p in enumerate_paths(company_schema, base, h)
    }
    assert got == expected


# ---------------------------------------------------------------------------
# Candidate dependencies
# ---------------------------------------------------------------------------


def test_candidate_deps_contain_model_adjacencies(company_schema, company_model):
    candidates = enumerate_candidate_deps(company_schema, 4)
    for d in company_model.dependencies:
        assert Adjacency.of(d) in candidates


def test_candidate_deps_hop_bound(company_schema):
    for adj in enumerate_candidate_deps(company_schema, 1):
        assert adj.rep.cause.hops <= 1


def test_candidate_count_matches_bruteforce(company_schema):
    h = 4
    keys = set()
    for length in range(1, h + 2):
        for combo in itertools.product(company_schema.item_classes, repeat=length):
            if not independent_path_check(company_schema, combo):
                continue
            for x in company_schema.attrs_of_class.get(combo[-1], ()):
                for y in company_schema.attrs_of_class.get(combo[0], ()):
                    if x == y:
                        continue
                    fwd = (combo, x, y)
                    rev = (tuple(reversed(combo)), y, x)
                    keys.add(min(fwd, rev))
    assert len(enumerate_candidate_deps(company_schema, h)) == len(keys)


def test_candidates_in_both_perspectives(company_schema):
    for adj in enumerate_candidate_deps(company_schema, 3):
        a, b = adj.forms()
        assert Adjacency.of(a) == Adjacency.of(b) == adj


# ---------------------------------------------------------------------------
# Ground graph
# ---------------------------------------------------------------------------


def expected_ground_edges():
    edges = set()
    for e, p in DEVELOPS_PAIRS:
        edges.add(((e, "competence"), (p, "success")))
    for p, b in FUNDS_PAIRS:
        edges.add(((p, "success"), (b, "revenue")))
    for b in ("b1", "b2"):
        edges.add(((b, "revenue"), (b, "budget")))
    for e in ("e1", "e2", "e3", "e4", "e5"):
        edges.add(((e, "competence"), (e, "salary")))
    reach = {
        "e1": ["b1"],
        "e2": ["b1", "b2"],
        "e3": ["b2"],
        "e4": ["b2"],
        "e5": ["b2"],
    }
    for e, units in reach.items():
        for b in units:
            edges.add(((b, "budget"), (e, "salary")))
    return edges


def test_ground_graph_worked_example(company_model, company_skeleton):
    gg = ground_graph(company_model, company_skeleton)
    assert ((("b2", "budget")), ("e2", "salary")) in gg.edge_list()
    assert set(gg.edge_list()) == expected_ground_edges()
    assert len(gg.edge_list()) == 9 + 5 + 2 + 5 + 6


def test_empty_model_gives_edgeless_graph(company_schema, company_skeleton):
    gg = ground_graph(RCM(company_schema, frozenset()), company_skeleton)
    assert gg.edge_list() == []
    assert len(gg.nodes) == 5 * 2 + 5 * 1 + 2 * 2


def test_ground_graph_acyclic_for_random_models():
    from relcd.datagen import random_rcm

    built = 0
    seed = 0
    while built < 15:
        seed += 1
        schema = random_schema(seed)
        try:
            model, _ = random_rcm(schema, seed)
        except Exception:
            continue
        sk = random_skeleton(schema, 10, seed)
        gg = ground_graph(model, sk)  # raises AssertionError if cyclic
        assert len(gg.topo_order) == len(gg.nodes)
        built += 1


# ---------------------------------------------------------------------------
# d-separation
# ---------------------------------------------------------------------------


def dsep_bruteforce(gg: GroundGraph, x, y, z) -> bool:
    """Enumerate all simple undirected paths and apply the blocking rules."""
    zi = {gg.index[n] for n in z}
    xi, yi = gg.index[x], gg.index[y]
    n = len(gg.nodes)
    undirected = [set(gg.parents[i]) | set(gg.children[i]) for i in range(n)]

    def descendants(i):
        out, frontier = {i}, [i]
        while frontier:
            cur = frontier.pop()
            for c in gg.children[cur]:
                if c not in out:
                    out.add(c)
                    frontier.append(c)
        return out

    def path_active(path):
        for idx in range(1, len(path) - 1):
            prev, node, nxt = path[idx - 1], path[idx], path[idx + 1]
            is_collider = prev in gg.parents[node] and nxt in gg.parents[node]
            if is_collider:
                if not (descendants(node) & zi):
                    return False
            else:
                if node in zi:
                    return False
        return True

    stack = [[xi]]
    while stack:
        path = stack.pop()
        if path[-1] == yi:
            if path_active(path):
                return False
            continue
        for nxt in undirected[path[-1]]:
            if nxt not in path:
                stack.append(path + [nxt])
    return True


def test_dsep_worked_example(company_model, company_skeleton):
    gg = ground_graph(company_model, company_skeleton)
    # opening the collider at p1's success connects e1's competence to b1's budget
    assert not d_separated(
        gg, ("e1", "competence"), ("b1", "budget"), {("p1", "success")}
    )
    # blocking both of b1's funded products' success does separate
    z = {("p1", "success"), ("p2", "success")}
    assert d_separated(gg, ("e1", "competence"), ("b1", "budget"), z)
    assert dsep_bruteforce(gg, ("e1", "competence"), ("b1", "budget"), z)


def test_adjacent_nodes_never_separated(company_model, company_skeleton):
    gg = ground_graph(company_model, company_skeleton)
    others = [n for n in gg.nodes if n not in (("e1", "competence"), ("p1", "success"))]
    for z in [set(), {others[0]}, set(others[:3])]:
        assert not d_separated(gg, ("e1", "competence"), ("p1", "success"), z)


def test_dsep_symmetry(company_model, company_skeleton):
    gg = ground_graph(company_model, company_skeleton)
    rng = Random(0)
    nodes = list(gg.nodes)
    for _ in range(50):
        x, y = rng.sample(nodes, 2)
        z = set(rng.sample([n for n in nodes if n not in (x, y)], rng.randint(0, 3)))
        assert d_separated(gg, x, y, z) == d_separated(gg, y, x, z)


def random_dag(rng: Random, n_nodes: int, p_edge: float) -> GroundGraph:
    nodes = [(f"n{i}", "x") for i in range(n_nodes)]
    edges = [
        (i, j)
        for i in range(n_nodes)
        for j in range(i + 1, n_nodes)
        if rng.random() < p_edge
    ]
    return GroundGraph(nodes, edges)


def test_dsep_matches_bruteforce_on_random_dags():
    rng = Random(7)
    for case in range(500):
        n = rng.randint(4, 12)
        gg = random_dag(rng, n, rng.uniform(0.1, 0.5))
        names = list(gg.nodes)
        x, y = rng.sample(names, 2)
        z = set(rng.sample([m for m in names if m not in (x, y)], rng.randint(0, n - 2)))
        assert d_separated(gg, x, y, z) == dsep_bruteforce(gg, x, y, z), (
            case, gg.edge_list(), x, y, sorted(z),
        )


def test_dsep_unknown_node(company_model, company_skeleton):
    gg = ground_graph(company_model, company_skeleton)
    with pytest.raises(KeyError):
        d_separated(gg, ("ghost", "competence"), ("b1", "budget"), set())


# ---------------------------------------------------------------------------
# RCI oracle
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def company_oracle(company_model, company_skeleton):
    return RCIOracle(company_model, [company_skeleton])


def test_oracle_dependence_example(company_oracle):
    u = rv(("employee", "develops", "product", "funds", "unit"), "budget")
    v = rv(("employee",), "competence")
    w = {rv(("employee", "develops", "product"), "success")}
    assert not company_oracle.independent(u, v, w)


def test_oracle_independence_example(company_oracle):
    # conditioning on the funded products' success separates budget from the
    # unit's employees' competence (base: unit)
    u = rv(("unit", "funds", "product", "develops", "employee"), "competence")
    v = rv(("unit",), "budget")
    w = {rv(("unit", "funds", "product"), "success")}
    assert company_oracle.independent(u, v, w)


def test_oracle_direct_edge_dependent(company_oracle):
    u = rv(("product", "develops", "employee"), "competence")
    v = rv(("product",), "success")
    assert not company_oracle.independent(u, v, set())


def test_oracle_vacuous_is_independent(company_schema, company_model):
    bare = company_skeleton_from_pairs(company_schema, develops=[])
    oracle = RCIOracle(company_model, [bare])
    u = rv(("employee", "develops", "product"), "success")
    v = rv(("employee",), "competence")
    assert oracle.independent(u, v, set())


def test_oracle_base_mismatch(company_oracle):
    with pytest.raises(ValueError):
        company_oracle.independent(
            rv(("product", "develops", "employee"), "competence"),
            rv(("employee",), "salary"),
        )


def test_oracle_memo_batches(company_oracle):
    u = rv(("product", "develops", "employee"), "competence")
    v = rv(("product",), "success")
    before = company_oracle.query_count
    company_oracle.independent(u, v, set())
    mid = company_oracle.query_count
    company_oracle.independent(u, v, set())
    assert company_oracle.query_count == mid >= before


# ---------------------------------------------------------------------------
# CUT enumeration
# ---------------------------------------------------------------------------


def cuts_bruteforce(adjacencies, sk, max_hop):
    """Node-level re-derivation: walk the undirected instantiated graph."""
    schema = sk.schema
    links = set()
    for adj in adjacencies:
        d = adj.rep
        for i in sk.items_of(d.effect.base):
            for j in terminal_items(sk, d.cause.path, i):
                a = (i, d.effect.attr)
                b = (j, d.cause.attr)
                links.add((a, b))
                links.add((b, a))
    neighbors = {}
    for a, b in links:
        neighbors.setdefault(a, set()).add(b)
    out = set()
    for a in neighbors:
        for b in neighbors[a]:
            for c in neighbors[b]:
                if c == a or c in neighbors[a]:
                    continue
                (i, x_attr), (j, y_attr), (k, z_attr) = a, b, c
                pys = tuple(
                    sorted(
                        RelationalVariable(t, y_attr)
                        for t in paths_between(
                            schema, sk.class_of(i), sk.class_of(j), max_hop
                        )
                        if j in terminal_items(sk, t, i)
                    )
                )
                if not pys:
                    continue
                for r in paths_between(schema, sk.class_of(i), sk.class_of(k), max_hop):
                    if k in terminal_items(sk, r, i):
                        out.add(
                            CanonicalUnshieldedTriple(
                                vx=RelationalVariable((sk.class_of(i),), x_attr),
                                pys=pys,
                                rz=RelationalVariable(r, z_attr),
                            )
                        )
    return out


def test_cut_worked_example(company_model, company_skeleton):
    adjacencies = frozenset(Adjacency.of(d) for d in company_model.dependencies)
    cuts = enumerate_cuts(adjacencies, company_skeleton, 8)
    expected = CanonicalUnshieldedTriple(
        vx=rv(("employee",), "competence"),
        pys=(rv(("employee", "develops", "product"), "success"),),
        rz=rv(
            ("employee", "develops", "product", "develops", "employee"), "competence"
        ),
    )
    assert expected in cuts


def test_cut_enumeration_matches_bruteforce(company_model, company_skeleton):
    adjacencies = frozenset(Adjacency.of(d) for d in company_model.dependencies)
    got = set(enumerate_cuts(adjacencies, company_skeleton, 6))
    expected = cuts_bruteforce(adjacencies, company_skeleton, 6)
    assert got == expected


def test_cut_cap_limits_per_triple(company_model, company_skeleton):
    adjacencies = frozenset(Adjacency.of(d) for d in company_model.dependencies)
    capped = enumerate_cuts(adjacencies, company_skeleton, 6, per_triple_cap=1)
    full = enumerate_cuts(adjacencies, company_skeleton, 6)
    assert set(capped) <= set(full)
    by_triple = {}
    for cut in capped:
        a, y, b = cut.attr_triple
        key = (min(a, b), y, max(a, b))
        by_triple[key] = by_triple.get(key, 0) + 1
    assert all(v <= 1 for v in by_triple.values())


def test_no_cuts_without_shared_neighbors(company_schema):
    # single adjacency, each base item with at most one neighbor
    sk = company_skeleton_from_pairs(
        company_schema,
        develops=[("e1", "p1"), ("e2", "p2"), ("e3", "p3")],
        funds=[],
    )
    adjacencies = frozenset(
        {Adjacency.of(dep(("product", "develops", "employee"), "competence", "success"))}
    )
    assert enumerate_cuts(adjacencies, sk, 6) == []


# ---------------------------------------------------------------------------
# Models, serialization, attribute graph
# ---------------------------------------------------------------------------


def test_validate_rcm(company_model):
    assert validate_rcm(company_model) == []


def test_cyclic_attr_graph_reported(company_schema):
    deps = frozenset(
        {
            dep(("employee",), "competence", "salary"),
            dep(("employee",), "salary", "competence"),
        }
    )
    assert any("cyclic" in v for v in validate_rcm(RCM(company_schema, deps)))


def test_rcm_round_trip(company_schema, company_model):
    payload = serialize_rcm(company_model)
    assert deserialize_rcm(company_schema, payload) == company_model


def test_meek_rule1():
    g = AttributeGraph(["a", "b", "c"], [("b", "c")])
    g.directed.add(("a", "b"))
    meek_closure(g, set())
    assert ("b", "c") in g.directed


def test_meek_rule1_respects_shielding():
    g = AttributeGraph(["a", "b", "c"], [("b", "c"), ("a", "c")])
    g.directed.add(("a", "b"))
    meek_closure(g, set())
    assert ("b", "c") not in g.directed  # shielded, no non-collider recorded


def test_meek_rule1_with_non_collider():
    g = AttributeGraph(["a", "b", "c"], [("b", "c"), ("a", "c")])
    g.directed.add(("a", "b"))
    meek_closure(g, {("a", "b", "c")})
    assert ("b", "c") in g.directed


def test_meek_rule2():
    g = AttributeGraph(["a", "b", "c"], [("a", "c")])
    g.directed.update({("a", "b"), ("b", "c")})
    meek_closure(g, set())
    assert ("a", "c") in g.directed


def test_meek_never_creates_cycle():
    rng = Random(3)
    for _ in range(200):
        nodes = [f"v{i}" for i in range(rng.randint(3, 6))]
        undirected = set()
        directed = set()
        for a, b in itertools.combinations(nodes, 2):
            roll = rng.random()
            if roll < 0.3:
                undirected.add((a, b))
            elif roll < 0.4:
                directed.add((a, b) if rng.random() < 0.5 else (b, a))
        g = AttributeGraph(nodes, undirected)
        acyclic_seed = True
        for a, b in sorted(directed):
            if not g.creates_cycle(a, b):
                g.directed.add((a, b))
            else:
                acyclic_seed = False
        meek_closure(g, set())
        if acyclic_seed:
            assert not g.has_cycle()
