"""Relational causal models: paths, dependencies, ground graphs, d-separation.

The model side of the package. A relational path is a class walk on the
schema; a relational variable pairs a path with an attribute of its terminal
class; a dependency points a relational variable at a canonical (single-class)
variable. Instantiating a model's dependencies on a skeleton yields the ground
graph, a DAG over item attributes that carries d-separation and hence the
exact conditional-independence oracle used for validation and ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .schema import Cardinality, Schema
from .skeleton import Skeleton, terminal_items


# ---------------------------------------------------------------------------
# Relational paths, variables, dependencies
# ---------------------------------------------------------------------------

RelationalPath = tuple[str, ...]


def valid_path(schema: Schema, classes: Sequence[str]) -> bool:
    """Class-walk validity: alternation, participation, and the repeat rule.

    For a consecutive triple ``(A, B, A)``: if ``B`` is an entity class, it
    must participate in the shared relationship class with `many`; if ``B`` is
    a relationship class the triple is invalid outright, since without
    self-relationships one relationship item never links two items of the
    same entity class and every instance would be empty.
    """
    if len(classes) == 0:
        return False
    for cls in classes:
        if not (schema.is_entity(cls) or schema.is_relationship(cls)):
            return False
    for a, b in zip(classes, classes[1:]):
        if schema.is_entity(a) == schema.is_entity(b):
            return False
        ent, rel = (a, b) if schema.is_entity(a) else (b, a)
        if ent not in schema.relationship_map[rel].entities:
            return False
    for a, b, c in zip(classes, classes[1:], classes[2:]):
        if a == c:
            if schema.is_relationship(b):
                return False
            if schema.cardinality(b, a) is not Cardinality.MANY:
                return False
    return True


def reverse_path(path: RelationalPath) -> RelationalPath:
    return tuple(reversed(path))


def path_cardinality(schema: Schema, path: RelationalPath) -> Cardinality:
    """`many` iff some entity-to-relationship hop can fan out."""
    for a, b in zip(path, path[1:]):
        if schema.is_entity(a) and schema.cardinality(a, b) is Cardinality.MANY:
            return Cardinality.MANY
    return Cardinality.ONE


@lru_cache(maxsize=256)
def enumerate_paths(schema: Schema, base: str, max_hops: int) -> tuple[RelationalPath, ...]:
    """All valid paths from ``base`` with at most ``max_hops`` hops, sorted."""
    out: list[RelationalPath] = []

    def extend(path: tuple[str, ...]) -> None:
        out.append(path)
        if len(path) - 1 >= max_hops:
            return
        for nxt in schema.adjacent_classes(path[-1]):
            cand = path + (nxt,)
            if len(cand) >= 3 and cand[-3] == cand[-1]:
                mid = cand[-2]
                if schema.is_relationship(mid):
                    continue
                if schema.cardinality(mid, cand[-1]) is not Cardinality.MANY:
                    continue
            extend(cand)

    extend((base,))
    return tuple(sorted(out))


def paths_between(
    schema: Schema, base: str, terminal: str, max_hops: int
) -> tuple[RelationalPath, ...]:
    return tuple(p for p in enumerate_paths(schema, base, max_hops) if p[-1] == terminal)


@dataclass(frozen=True, order=True)
class RelationalVariable:
    """An attribute of the items reached by a relational path."""

    path: RelationalPath
    attr: str

    @property
    def base(self) -> str:
        return self.path[0]

    @property
    def terminal(self) -> str:
        return self.path[-1]

    @property
    def is_canonical(self) -> bool:
        return len(self.path) == 1

    @property
    def hops(self) -> int:
        return len(self.path) - 1

    def __str__(self) -> str:
        return f"[{'.'.join(self.path)}].{self.attr}"


def canonical_variable(schema: Schema, attr: str) -> RelationalVariable:
    return RelationalVariable((schema.attribute_owner[attr],), attr)


@dataclass(frozen=True, order=True)
class RelationalDependency:
    """Directed dependency: ``cause`` influences the canonical ``effect``.

    The cause's path starts at the effect's item class and ends at the class
    owning the cause attribute.
    """

    cause: RelationalVariable
    effect: RelationalVariable

    def __post_init__(self) -> None:
        if not self.effect.is_canonical:
            raise ValueError(f"effect must be canonical, got {self.effect}")
        if self.cause.base != self.effect.base:
            raise ValueError(f"cause base {self.cause.base!r} != effect class")
        if self.cause == self.effect:
            raise ValueError("dependency cause equals effect")

    def __str__(self) -> str:
        return f"{self.cause} -> {self.effect}"


def perspective_flip(dep: RelationalDependency) -> RelationalDependency:
    """The same adjacency written from the other end's perspective."""
    return RelationalDependency(
        cause=RelationalVariable(reverse_path(dep.cause.path), dep.effect.attr),
        effect=RelationalVariable((dep.cause.terminal,), dep.cause.attr),
    )


@dataclass(frozen=True, order=True)
class Adjacency:
    """An undirected dependency, stored in its canonical perspective."""

    rep: RelationalDependency

    @classmethod
    def of(cls, dep: RelationalDependency) -> "Adjacency":
        return cls(min(dep, perspective_flip(dep)))

    @property
    def attrs(self) -> frozenset[str]:
        return frozenset((self.rep.cause.attr, self.rep.effect.attr))

    def forms(self) -> tuple[RelationalDependency, RelationalDependency]:
        return (self.rep, perspective_flip(self.rep))

    def form_with_effect(self, attr: str) -> RelationalDependency:
        for f in self.forms():
            if f.effect.attr == attr:
                return f
        raise KeyError(f"{attr!r} is not an endpoint of {self}")

    def directed_toward(self, effect_attr: str) -> RelationalDependency:
        return self.form_with_effect(effect_attr)

    def __str__(self) -> str:
        return f"{self.rep.cause} -- {self.rep.effect}"


def enumerate_candidate_deps(schema: Schema, h: int) -> frozenset[Adjacency]:
    """All candidate adjacencies with paths of at most ``h`` hops.

    Same-attribute pairs are excluded: a dependency between an attribute class
    and itself would be a self-loop at the attribute level, which acyclicity
    rules out.
    """
    if h < 1:
        raise ValueError("hop threshold must be >= 1")
    out: set[Adjacency] = set()
    for base in schema.item_classes:
        base_attrs = schema.attrs_of_class.get(base, ())
        if not base_attrs:
            continue
        for path in enumerate_paths(schema, base, h):
            for cause_attr in schema.attrs_of_class.get(path[-1], ()):
                for effect_attr in base_attrs:
                    if cause_attr == effect_attr:
                        continue
                    dep = RelationalDependency(
                        cause=RelationalVariable(path, cause_attr),
                        effect=RelationalVariable((base,), effect_attr),
                    )
                    out.add(Adjacency.of(dep))
    return frozenset(out)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RCM:
    """A fully directed relational causal model (functions live in datagen)."""

    schema: Schema
    dependencies: frozenset[RelationalDependency]

    @property
    def attr_edges(self) -> frozenset[tuple[str, str]]:
        return frozenset((d.cause.attr, d.effect.attr) for d in self.dependencies)

    def parents_of(self, attr: str) -> tuple[RelationalDependency, ...]:
        return tuple(sorted(d for d in self.dependencies if d.effect.attr == attr))


def validate_rcm(model: RCM) -> list[str]:
    violations = []
    for dep in model.dependencies:
        if not valid_path(model.schema, dep.cause.path):
            violations.append(f"invalid path in {dep}")
        owner = model.schema.attribute_owner.get(dep.cause.attr)
        if owner != dep.cause.terminal:
            violations.append(f"{dep}: cause attr not owned by terminal class")
        owner = model.schema.attribute_owner.get(dep.effect.attr)
        if owner != dep.effect.base:
            violations.append(f"{dep}: effect attr not owned by base class")
    if _attr_graph_has_cycle(model.attr_edges):
        violations.append("attribute-level dependency graph is cyclic")
    return violations


def _attr_graph_has_cycle(edges: Iterable[tuple[str, str]]) -> bool:
    children: dict[str, set[str]] = {}
    indeg: dict[str, int] = {}
    for a, b in edges:
        kids = children.setdefault(a, set())
        if b not in kids:
            kids.add(b)
            indeg[b] = indeg.get(b, 0) + 1
        indeg.setdefault(a, indeg.get(a, 0))
    queue = [n for n, d in indeg.items() if d == 0]
    seen = 0
    while queue:
        n = queue.pop()
        seen += 1
        for c in children.get(n, ()):
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    return seen != len(indeg)


@dataclass(frozen=True)
class PRCM:
    """Partially directed model: directed deps, undirected adjacencies, and the
    attribute-level graph plus recorded non-collider triples."""

    schema: Schema
    directed: frozenset[RelationalDependency]
    undirected: frozenset[Adjacency]
    attr_directed: frozenset[tuple[str, str]]
    attr_undirected: frozenset[tuple[str, str]]
    non_colliders: frozenset[tuple[str, str, str]]

    @property
    def adjacencies(self) -> frozenset[Adjacency]:
        return self.undirected | frozenset(Adjacency.of(d) for d in self.directed)

    def degenerate(self) -> bool:
        return not self.directed


def undirected_prcm(schema: Schema, adjacencies: Iterable[Adjacency]) -> PRCM:
    adjs = frozenset(adjacencies)
    edges = frozenset(tuple(sorted(a.attrs)) for a in adjs)
    return PRCM(
        schema=schema,
        directed=frozenset(),
        undirected=adjs,
        attr_directed=frozenset(),
        attr_undirected=edges,
        non_colliders=frozenset(),
    )


# ---------------------------------------------------------------------------
# Attribute-level graph (the orientation workspace)
# ---------------------------------------------------------------------------


class AttributeGraph:
    """Mutable partially directed graph over attribute classes."""

    def __init__(self, nodes: Iterable[str], undirected: Iterable[tuple[str, str]]):
        self.nodes = tuple(sorted(nodes))
        self.undirected: set[tuple[str, str]] = {tuple(sorted(e)) for e in undirected}
        self.directed: set[tuple[str, str]] = set()

    @classmethod
    def from_adjacencies(cls, schema: Schema, adjs: Iterable[Adjacency]) -> "AttributeGraph":
        edges = {tuple(sorted(a.attrs)) for a in adjs}
        return cls(schema.attr_names(), edges)

    def copy(self) -> "AttributeGraph":
        g = AttributeGraph(self.nodes, set())
        g.undirected = set(self.undirected)
        g.directed = set(self.directed)
        return g

    def adjacent(self, x: str, y: str) -> bool:
        return (
            tuple(sorted((x, y))) in self.undirected
            or (x, y) in self.directed
            or (y, x) in self.directed
        )

    def has_undirected(self, x: str, y: str) -> bool:
        return tuple(sorted((x, y))) in self.undirected

    def neighbors(self, x: str) -> tuple[str, ...]:
        out = set()
        for a, b in self.undirected:
            if a == x:
                out.add(b)
            elif b == x:
                out.add(a)
        for a, b in self.directed:
            if a == x:
                out.add(b)
            elif b == x:
                out.add(a)
        return tuple(sorted(out))

    def children(self, x: str) -> tuple[str, ...]:
        return tuple(sorted(b for a, b in self.directed if a == x))

    def parents(self, x: str) -> tuple[str, ...]:
        return tuple(sorted(a for a, b in self.directed if b == x))

    def orient(self, x: str, y: str) -> bool:
        """Direct x -> y. Returns False on conflict (reverse edge present)."""
        if (y, x) in self.directed:
            return False
        key = tuple(sorted((x, y)))
        if key in self.undirected:
            self.undirected.discard(key)
            self.directed.add((x, y))
            return True
        return (x, y) in self.directed

    def creates_cycle(self, x: str, y: str) -> bool:
        """Would x -> y close a directed cycle?"""
        frontier = [y]
        seen = {y}
        while frontier:
            cur = frontier.pop()
            if cur == x:
                return True
            for nxt in self.children(cur):
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return False

    def has_cycle(self) -> bool:
        return _attr_graph_has_cycle(self.directed)

    def key(self) -> tuple:
        return (tuple(sorted(self.directed)), tuple(sorted(self.undirected)))


def _nc_key(x: str, y: str, z: str) -> tuple[str, str, str]:
    a, b = sorted((x, z))
    return (a, y, b)


def meek_closure(
    graph: AttributeGraph,
    non_colliders: set[tuple[str, str, str]],
    completed: bool = True,
) -> bool:
    """Propagate orientations with sound rules.

    With ``completed`` (all collider decisions are in): (R1) a->b - c with a,c
    nonadjacent orients b->c; (R2) a->b->c with a-c orients a->c; (R3) a-b
    with two nonadjacent parents of b both undirected-adjacent to a orients
    a->b; (R4) a-b with a-d, d->c, c->b and a,c adjacent orients a->b. The R1
    variant for recorded non-collider triples applies even when shielded.

    With ``completed`` false (mid-run propagation), only the rules that never
    presume finished collider detection run: the non-collider R1 variant and
    R2. Orientations that would close a directed cycle are skipped. Returns
    False if a hard conflict was detected.
    """
    ok = True

    def try_orient(x: str, y: str) -> bool:
        if not graph.has_undirected(x, y):
            return False
        if graph.creates_cycle(x, y):
            return False
        return graph.orient(x, y)

    changed = True
    while changed:
        changed = False
        for a, b in sorted(graph.directed):
            # R1 and its non-collider variant
            for c in graph.neighbors(b):
                if c == a or not graph.has_undirected(b, c):
                    continue
                fires = _nc_key(a, b, c) in non_colliders or (
                    completed and not graph.adjacent(a, c)
                )
                if fires and try_orient(b, c):
                    changed = True
            # R2: a->b->c, a-c  =>  a->c
            for c in graph.children(b):
                if graph.has_undirected(a, c):
                    if try_orient(a, c):
                        changed = True
        if not completed:
            if graph.has_cycle():
                ok = False
            if not changed:
                break
            continue
        for a in graph.nodes:
            for b in graph.neighbors(a):
                if not graph.has_undirected(a, b):
                    continue
                parents = [
                    p
                    for p in graph.parents(b)
                    if graph.has_undirected(a, p)
                ]
                # R3
                for i in range(len(parents)):
                    for j in range(i + 1, len(parents)):
                        if not graph.adjacent(parents[i], parents[j]):
                            if try_orient(a, b):
                                changed = True
                            break
                # R4: d -> c -> b, a - d, a adjacent to c
                for c in graph.parents(b):
                    if not graph.adjacent(a, c):
                        continue
                    for d in graph.parents(c):
                        if graph.has_undirected(a, d):
                            if try_orient(a, b):
                                changed = True
                            break
    if graph.has_cycle():
        ok = False
    return ok


# ---------------------------------------------------------------------------
# Ground graphs and d-separation
# ---------------------------------------------------------------------------

GroundNode = tuple[str, str]  # (item id, attribute)


class GroundGraph:
    """DAG over item attributes instantiated from an RCM on a skeleton."""

    def __init__(self, nodes: Sequence[GroundNode], edges: Iterable[tuple[int, int]]):
        self.nodes: tuple[GroundNode, ...] = tuple(nodes)
        self.index: dict[GroundNode, int] = {n: i for i, n in enumerate(self.nodes)}
        n = len(self.nodes)
        parent_lists: list[list[int]] = [[] for _ in range(n)]
        child_lists: list[list[int]] = [[] for _ in range(n)]
        for src, dst in edges:
            child_lists[src].append(dst)
            parent_lists[dst].append(src)
        self.parents = tuple(tuple(sorted(set(p))) for p in parent_lists)
        self.children = tuple(tuple(sorted(set(c))) for c in child_lists)
        self._child_csr: sparse.csr_matrix | None = None
        self._parent_csr: sparse.csr_matrix | None = None
        order = self._topological_order()
        if order is None:
            raise AssertionError("ground graph is cyclic")
        self.topo_order: tuple[int, ...] = order

    def _topological_order(self) -> tuple[int, ...] | None:
        n = len(self.nodes)
        indeg = [len(p) for p in self.parents]
        queue = [i for i in range(n) if indeg[i] == 0]
        order = []
        while queue:
            cur = queue.pop()
            order.append(cur)
            for c in self.children[cur]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        return tuple(order) if len(order) == n else None

    def edge_list(self) -> list[tuple[GroundNode, GroundNode]]:
        out = []
        for i, kids in enumerate(self.children):
            for j in kids:
                out.append((self.nodes[i], self.nodes[j]))
        return sorted(out)

    @property
    def child_matrix(self) -> sparse.csr_matrix:
        if self._child_csr is None:
            n = len(self.nodes)
            rows, cols = [], []
            for i, kids in enumerate(self.children):
                rows.extend([i] * len(kids))
                cols.extend(kids)
            data = np.ones(len(rows), dtype=np.float32)
            self._child_csr = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
        return self._child_csr

    @property
    def parent_matrix(self) -> sparse.csr_matrix:
        if self._parent_csr is None:
            self._parent_csr = self.child_matrix.T.tocsr()
        return self._parent_csr


def ground_graph(model: RCM, sk: Skeleton) -> GroundGraph:
    if model.schema != sk.schema:
        raise ValueError("model and skeleton use different schemas")
    nodes: list[GroundNode] = []
    for item, cls in sk.all_items():
        for attr in model.schema.attrs_of_class.get(cls, ()):
            nodes.append((item, attr))
    nodes.sort()
    index = {n: i for i, n in enumerate(nodes)}
    edges: list[tuple[int, int]] = []
    for dep in sorted(model.dependencies):
        base = dep.effect.base
        for i in sk.items_of(base):
            dst = index[(i, dep.effect.attr)]
            for j in terminal_items(sk, dep.cause.path, i):
                edges.append((index[(j, dep.cause.attr)], dst))
    return GroundGraph(nodes, edges)


def d_separated(
    gg: GroundGraph, x: GroundNode, y: GroundNode, z: Iterable[GroundNode]
) -> bool:
    """Standard d-separation between two nodes given a conditioning set."""
    for node in (x, y, *z):
        if node not in gg.index:
            raise KeyError(f"unknown ground-graph node {node!r}")
    zi = {gg.index[n] for n in z}
    xi, yi = gg.index[x], gg.index[y]
    if xi == yi:
        raise ValueError("x and y must differ")
    if xi in zi or yi in zi:
        raise ValueError("x and y must not be conditioned on")
    reached = _reachable(gg, yi, zi)
    return xi not in reached


def _ancestors(gg: GroundGraph, seed: set[int]) -> set[int]:
    out = set(seed)
    frontier = list(seed)
    while frontier:
        cur = frontier.pop()
        for p in gg.parents[cur]:
            if p not in out:
                out.add(p)
                frontier.append(p)
    return out


def _reachable(gg: GroundGraph, start: int, z: set[int]) -> set[int]:
    """Nodes d-connected to ``start`` given ``z`` (Bayes-ball trail walk)."""
    anc_z = _ancestors(gg, z)
    visited_up: set[int] = set()
    visited_down: set[int] = set()
    stack = [(start, True)]  # True = arrived from a child ("up" visit)
    while stack:
        node, up = stack.pop()
        if up:
            if node in visited_up:
                continue
            visited_up.add(node)
            if node in z:
                continue
            for p in gg.parents[node]:
                stack.append((p, True))
            for c in gg.children[node]:
                stack.append((c, False))
        else:
            if node in visited_down:
                continue
            visited_down.add(node)
            if node not in z:
                for c in gg.children[node]:
                    stack.append((c, False))
            if node in anc_z:
                for p in gg.parents[node]:
                    stack.append((p, True))
    return (visited_up | visited_down) - z


def batched_d_connected(
    gg: GroundGraph,
    starts: Sequence[int],
    targets: Sequence[Sequence[int]],
    conditioning: Sequence[Sequence[int]],
    stop_on_any: bool = False,
) -> np.ndarray:
    """Column-wise d-connection queries evaluated together.

    Column ``r`` asks whether ``starts[r]`` is d-connected to any node in
    ``targets[r]`` given ``conditioning[r]``. Propagation runs as sparse
    adjacency products over all columns at once; with ``stop_on_any`` the walk
    stops as soon as one column hits a target (columns hit so far reported).
    """
    m = len(starts)
    n = len(gg.nodes)
    if m == 0:
        return np.zeros(0, dtype=bool)
    # parents-of-state = child_matrix @ state; children-of-state = its transpose
    C = gg.child_matrix
    P = gg.parent_matrix
    Z = np.zeros((n, m), dtype=bool)
    U = np.zeros((n, m), dtype=bool)
    for r in range(m):
        Z[conditioning[r], r] = True
        U[targets[r], r] = True
    U &= ~Z  # conditioned targets are fixed, never a source of dependence
    anc = Z.astype(np.float32)
    while True:
        grown = C.dot(anc)
        new = (grown > 0) & (anc == 0)
        if not new.any():
            break
        anc[new] = 1.0
    anc_b = anc > 0
    up = np.zeros((n, m), dtype=bool)
    up[starts, np.arange(m)] = True
    down = np.zeros((n, m), dtype=bool)
    notZ = ~Z
    while True:
        hit = (((up | down) & notZ) & U).any(axis=0)
        if stop_on_any and hit.any():
            return hit
        up_src = up & notZ
        par_src = (up_src | (down & anc_b)).astype(np.float32)
        chi_src = (up_src | (down & notZ)).astype(np.float32)
        new_up = (C.dot(par_src) > 0) & ~up
        new_down = (P.dot(chi_src) > 0) & ~down
        if not new_up.any() and not new_down.any():
            break
        up |= new_up
        down |= new_down
    return (((up | down) & notZ) & U).any(axis=0)


# ---------------------------------------------------------------------------
# The exact RCI oracle
# ---------------------------------------------------------------------------


class _OracleContext:
    """Per-skeleton machinery: ground graph plus variable terminal-node maps."""

    def __init__(self, model: RCM, sk: Skeleton):
        self.sk = sk
        self.gg = ground_graph(model, sk)
        self._var_nodes: dict[RelationalVariable, dict[str, np.ndarray]] = {}

    def nodes_of(self, var: RelationalVariable) -> dict[str, np.ndarray]:
        hit = self._var_nodes.get(var)
        if hit is None:
            index = self.gg.index
            hit = {}
            for item in self.sk.items_of(var.base):
                terms = terminal_items(self.sk, var.path, item)
                hit[item] = np.array(
                    sorted(index[(t, var.attr)] for t in terms), dtype=np.int64
                )
            self._var_nodes[var] = hit
        return hit


class RCIOracle:
    """Exact relational CI answers by d-separation over a set of skeletons.

    The universal quantification over all skeletons is approximated by the
    supplied list: `dependent` means some skeleton exhibits a d-connection at
    some base item; `independent` means none does.
    """

    def __init__(self, model: RCM, skeletons: Sequence[Skeleton]):
        if not skeletons:
            raise ValueError("need at least one skeleton")
        self.model = model
        self.contexts = [_OracleContext(model, sk) for sk in skeletons]
        self._memo: dict[tuple, bool] = {}
        self.query_count = 0

    def independent(
        self,
        u: RelationalVariable,
        v: RelationalVariable,
        w: Iterable[RelationalVariable] = (),
    ) -> bool:
        wset = frozenset(w)
        if not v.is_canonical:
            raise ValueError("second variable must be canonical")
        base = v.base
        if u.base != base or any(x.base != base for x in wset):
            raise ValueError("all variables in a query must share the base class")
        key = (u, v, wset)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        self.query_count += 1
        result = True
        for ctx in self.contexts:
            if self._dependent_on(ctx, u, v, wset):
                result = False
                break
        self._memo[key] = result
        return result

    def _dependent_on(self, ctx, u, v, wset) -> bool:
        u_nodes = ctx.nodes_of(u)
        w_nodes = [ctx.nodes_of(x) for x in sorted(wset)]
        index = ctx.gg.index
        starts, targets, conds = [], [], []
        empty = np.array([], dtype=np.int64)
        for item in ctx.sk.items_of(v.base):
            uset = u_nodes[item]
            if len(uset) == 0:
                continue
            vi = index[(item, v.attr)]
            if w_nodes:
                zset = np.concatenate([wn[item] for wn in w_nodes])
                if (zset == vi).any():
                    continue  # conditioning on the target: degenerate row
            else:
                zset = empty
            starts.append(vi)
            targets.append(uset)
            conds.append(zset)
        if not starts:
            return False
        hits = batched_d_connected(ctx.gg, starts, targets, conds, stop_on_any=True)
        return bool(hits.any())


# ---------------------------------------------------------------------------
# Canonical unshielded triples
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class CanonicalUnshieldedTriple:
    """Anchor variable, the Y-side path set, and one far-side variable."""

    vx: RelationalVariable
    pys: tuple[RelationalVariable, ...]  # sorted
    rz: RelationalVariable

    @property
    def attr_triple(self) -> tuple[str, str, str]:
        return (self.vx.attr, self.pys[0].attr, self.rz.attr)


CUT = CanonicalUnshieldedTriple


def _item_adjacency_nodes(
    adjs: Iterable[Adjacency], sk: Skeleton
) -> set[frozenset[GroundNode]]:
    pairs: set[frozenset[GroundNode]] = set()
    for adj in adjs:
        dep = adj.rep
        for i in sk.items_of(dep.effect.base):
            for j in terminal_items(sk, dep.cause.path, i):
                pairs.add(frozenset(((i, dep.effect.attr), (j, dep.cause.attr))))
    return pairs


def enumerate_cuts(
    adjacencies: Iterable[Adjacency],
    sk: Skeleton,
    max_hop: int,
    per_triple_cap: int | None = None,
) -> list[CUT]:
    """Skeleton-grounded CUT enumeration.

    For every pair of adjacencies meeting at an attribute Y and every item
    triple realizable on the skeleton whose ends are not item-adjacent, emit
    the CUTs whose Y-side paths and far-side path reach the witnessing items.
    ``per_triple_cap`` bounds how many distinct CUTs are kept per unordered
    attribute triple (None = exhaustive).
    """
    adjs = sorted(adjacencies)
    schema = sk.schema
    shield = _item_adjacency_nodes(adjs, sk)
    by_effect: dict[str, list[RelationalDependency]] = {}
    for adj in adjs:
        for form in adj.forms():
            by_effect.setdefault(form.effect.attr, []).append(form)
    for forms in by_effect.values():
        forms.sort()

    out: set[CUT] = set()
    triple_counts: dict[tuple[str, str, str], int] = {}

    def triple_key(x: str, y: str, z: str) -> tuple[str, str, str]:
        a, b = sorted((x, z))
        return (a, y, b)

    for x_attr in sorted(by_effect):
        for d1 in by_effect[x_attr]:  # d1: P.Y - [X].X
            y_attr = d1.cause.attr
            for d2 in by_effect.get(y_attr, ()):  # d2: Q.Z - [Y].Y
                z_attr = d2.cause.attr
                key = triple_key(x_attr, y_attr, z_attr)
                if (
                    per_triple_cap is not None
                    and triple_counts.get(key, 0) >= per_triple_cap
                ):
                    continue
                px_paths = paths_between(schema, d1.effect.base, d1.cause.terminal, max_hop)
                rz_paths = paths_between(schema, d1.effect.base, d2.cause.terminal, max_hop)
                def capped() -> bool:
                    return (
                        per_triple_cap is not None
                        and triple_counts.get(key, 0) >= per_triple_cap
                    )

                for i in sk.items_of(d1.effect.base):
                    if capped():
                        break
                    for j in sorted(terminal_items(sk, d1.cause.path, i)):
                        if capped():
                            break
                        for k in sorted(terminal_items(sk, d2.cause.path, j)):
                            if capped():
                                break
                            if (k, z_attr) == (i, x_attr):
                                continue
                            if frozenset(((i, x_attr), (k, z_attr))) in shield:
                                continue
                            pys = tuple(
                                sorted(
                                    RelationalVariable(t, y_attr)
                                    for t in px_paths
                                    if j in terminal_items(sk, t, i)
                                )
                            )
                            if not pys:
                                continue
                            rzs = [
                                RelationalVariable(r, z_attr)
                                for r in rz_paths
                                if k in terminal_items(sk, r, i)
                            ]
                            for rz in rzs:
                                if capped():
                                    break
                                cut = CUT(
                                    vx=RelationalVariable((d1.effect.base,), x_attr),
                                    pys=pys,
                                    rz=rz,
                                )
                                if cut not in out:
                                    out.add(cut)
                                    triple_counts[key] = triple_counts.get(key, 0) + 1
    return sorted(out)


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------


def default_oracle_skeletons(
    schema: Schema, count: int = 3, base_size: int = 50, seed: int = 7700
) -> list[Skeleton]:
    """Skeletons backing the d-separation oracle. Fixed seeds keep ground truth
    reproducible across runs."""
    from .skeleton import random_skeleton

    return [random_skeleton(schema, base_size, seed + i) for i in range(count)]


ORACLE_SEPSET_BUDGET = 200_000  # oracle queries are cheap; search exhaustively


def true_cprcm(
    model: RCM,
    skeletons: Sequence[Skeleton] | None = None,
    h: int | None = None,
    max_cond_size: int = 3,
    oracle: "RCIOracle | None" = None,
) -> PRCM:
    """Maximally oriented model per the oracle-driven learner.

    Runs the full two-phase learner with the exact d-separation oracle in
    place of statistical tests; the output serves as evaluation ground truth.
    Passing ``oracle`` reuses its memoized answers (results are unchanged).
    """
    from .rpcd import LearnerConfig, rpcd_run_oracle

    if skeletons is None:
        skeletons = default_oracle_skeletons(model.schema)
    if h is None:
        h = max((d.cause.hops for d in model.dependencies), default=1)
        h = max(h, 1)
    cfg = LearnerConfig(
        h=h, mode="oracle", max_cond_size=max_cond_size,
        sepset_budget=ORACLE_SEPSET_BUDGET,
    )
    result = rpcd_run_oracle(model, skeletons, cfg, oracle=oracle)
    return result.prcm


def serialize_prcm(prcm: PRCM) -> dict:
    def dep_dict(dep: RelationalDependency, directed: bool) -> dict:
        return {
            "cause_path": list(dep.cause.path),
            "cause_attr": dep.cause.attr,
            "effect_attr": dep.effect.attr,
            "directed": directed,
        }

    return {
        "dependencies": [dep_dict(d, True) for d in sorted(prcm.directed)]
        + [dep_dict(a.rep, False) for a in sorted(prcm.undirected)],
        "attr_graph": {
            "directed": sorted(list(e) for e in prcm.attr_directed),
            "undirected": sorted(list(e) for e in prcm.attr_undirected),
        },
        "non_colliders": sorted(list(t) for t in prcm.non_colliders),
    }


def deserialize_prcm(schema: Schema, data: Mapping) -> PRCM:
    directed = set()
    undirected = set()
    for d in data["dependencies"]:
        dep = RelationalDependency(
            cause=RelationalVariable(tuple(d["cause_path"]), d["cause_attr"]),
            effect=RelationalVariable((d["cause_path"][0],), d["effect_attr"]),
        )
        if d["directed"]:
            directed.add(dep)
        else:
            undirected.add(Adjacency.of(dep))
    return PRCM(
        schema=schema,
        directed=frozenset(directed),
        undirected=frozenset(undirected),
        attr_directed=frozenset(tuple(e) for e in data["attr_graph"]["directed"]),
        attr_undirected=frozenset(tuple(e) for e in data["attr_graph"]["undirected"]),
        non_colliders=frozenset(tuple(t) for t in data["non_colliders"]),
    )


def serialize_rcm(model: RCM) -> dict:
    return {
        "dependencies": [
            {
                "cause_path": list(d.cause.path),
                "cause_attr": d.cause.attr,
                "effect_attr": d.effect.attr,
                "directed": True,
            }
            for d in sorted(model.dependencies)
        ]
    }


def deserialize_rcm(schema: Schema, data: Mapping) -> RCM:
    deps = frozenset(
        RelationalDependency(
            cause=RelationalVariable(tuple(d["cause_path"]), d["cause_attr"]),
            effect=RelationalVariable((d["cause_path"][0],), d["effect_attr"]),
        )
        for d in data["dependencies"]
    )
    return RCM(schema=schema, dependencies=deps)
