"""Two-phase relational structure learner with robustified orientation tests.

Phase I prunes a candidate adjacency set by conditional-independence search,
optionally order-independently (removals deferred to sweep boundaries) and
with aggregation-backed retries that guard against weak-dependence false
negatives. Phase II orients: bivariate orientation tests first (split form
for `many` paths, pair form for two `one` paths), then three-attribute tests,
with an optional weak-dependence detection step; verdicts are combined by
per-triple majority vote and a maximal non-conflicting global orientation.
A literal unshielded-triple procedure serves as both the statistical baseline
and, with the exact oracle plugged in, the ground-truth learner.
"""
from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .citest import Cell, aggregate_column, multiset_gram
from .rcm import (
    RCM,
    PRCM,
    Adjacency,
    AttributeGraph,
    CanonicalUnshieldedTriple,
    RCIOracle,
    RelationalDependency,
    RelationalVariable,
    _nc_key,
    enumerate_candidate_deps,
    enumerate_cuts,
    meek_closure,
    path_cardinality,
    serialize_prcm,
)
from .schema import Cardinality, Schema
from .skeleton import AttrData, Skeleton, terminal_items
from .testers import KernelRCITester, OracleRCITester, QueryOutcome, strided_rows


@dataclass
class LearnerConfig:
    h: int = 4
    alpha: float = 0.05
    order_independent: bool = True
    aggregation: bool = True
    detection: bool = True
    mode: str = "robust"  # robust | baseline_cut | oracle
    max_cond_size: int = 3
    sepset_budget: int = 64
    cut_cap: int = 5
    n_perm: int = 500
    rng_seed: int = 0
    row_cap: int | None = 500
    ridge: float = 1e-3
    block_size: int = 3
    early_stop: bool = True
    aggregator: str = "average"
    median_cap: int = 1000
    vote_minimal_sepsets: bool = True

    def __post_init__(self) -> None:
        if self.h < 1:
            raise ValueError("hop threshold must be >= 1")
        if self.max_cond_size < 0:
            raise ValueError("max_cond_size must be >= 0")
        if self.mode not in ("robust", "baseline_cut", "oracle"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class SeparatingSetRecord:
    u: RelationalVariable
    v: RelationalVariable
    sepset: tuple[RelationalVariable, ...]
    size: int
    phase: str


@dataclass
class Verdict:
    triple: tuple[str, str, str]
    kind: str  # collider | non_collider | weak
    provenance: str  # split-rbo | pair-rbo | non-rbo | cut
    sepset: tuple[RelationalVariable, ...]


@dataclass
class OrientationEvidence:
    triple: tuple[str, str, str]
    verdicts: list[Verdict] = field(default_factory=list)


@dataclass
class Phase1Result:
    adjacencies: frozenset[Adjacency]
    records: list[SeparatingSetRecord]


@dataclass
class RunResult:
    prcm: PRCM
    phase1: Phase1Result
    evidence: dict[tuple[str, str, str], OrientationEvidence]
    queries: list[dict]
    timings: dict[str, float]
    config: LearnerConfig


# ---------------------------------------------------------------------------
# Phase I
# ---------------------------------------------------------------------------


def _build_ne(
    adjacencies: Iterable[Adjacency],
) -> dict[str, dict[RelationalVariable, Adjacency]]:
    ne: dict[str, dict[RelationalVariable, Adjacency]] = {}
    for adj in adjacencies:
        for form in adj.forms():
            ne.setdefault(form.effect.attr, {})[form.cause] = adj
    return ne


def _aggregatable(schema: Schema, var: RelationalVariable) -> bool:
    return var.hops >= 1 and path_cardinality(schema, var.path) is Cardinality.MANY


def _combined_rci(
    tester,
    schema: Schema,
    u: RelationalVariable,
    v: RelationalVariable,
    w: frozenset[RelationalVariable],
    cfg: LearnerConfig,
) -> tuple[QueryOutcome, bool]:
    """Outcome with the aggregation retry folded in.

    A failed query counts as dependent (false negatives dominate, so plumbing
    errors must not delete structure). With aggregation on, an independence
    finding must survive a retest with the non-canonical column aggregated.
    """
    out = tester.rci(u, v, w)
    if out.error is not None:
        return QueryOutcome(independent=False, error=out.error), False
    use_agg = (
        cfg.aggregation
        and cfg.mode != "oracle"
        and out.independent
        and not out.vacuous
        and _aggregatable(schema, u)
    )
    if use_agg:
        retry = tester.rci(u, v, w, aggregated=True)
        if retry.error is None and retry.independent:
            return out, True
        return QueryOutcome(independent=False, p_value=retry.p_value), True
    return out, False


def _sepset_candidates(
    neighbors: Sequence[RelationalVariable], size: int, budget: int
) -> Iterable[tuple[RelationalVariable, ...]]:
    return itertools.islice(itertools.combinations(sorted(neighbors), size), budget)


def phase1(
    schema: Schema,
    tester,
    cfg: LearnerConfig,
    candidates: Sequence[Adjacency] | None = None,
) -> Phase1Result:
    """Adjacency discovery: prune candidates by growing conditioning sets.

    ``candidates`` overrides the iteration order (used by order-independence
    checks); content must match the hop-bounded enumeration.
    """
    if candidates is None:
        candidates = sorted(enumerate_candidate_deps(schema, cfg.h))
    alive: dict[Adjacency, None] = dict.fromkeys(candidates)
    records: list[SeparatingSetRecord] = []
    ell = 0
    while True:
        ne = _build_ne(alive)
        maxdeg = max((len(v) for v in ne.values()), default=0)
        if ell > maxdeg - 1 or ell > cfg.max_cond_size:
            break
        jobs = []
        for adj in alive:
            for form in adj.forms():
                size_now = len(ne[form.effect.attr]) - 1
                jobs.append((adj, form, size_now))
        # Queries whose conditioning set is the full candidate-parent set match
        # the relational Markov condition; issue those first at each level.
        jobs.sort(key=lambda j: 0 if j[2] == ell else 1)
        pending: set[Adjacency] = set()
        for adj, form, _ in jobs:
            if adj in pending or adj not in alive:
                continue
            current_ne = ne if cfg.order_independent else _build_ne(alive)
            nbrs = sorted(
                uvar
                for uvar in current_ne.get(form.effect.attr, {})
                if uvar != form.cause
            )
            if len(nbrs) < ell:
                continue
            for sepset in _sepset_candidates(nbrs, ell, cfg.sepset_budget):
                out, _ = _combined_rci(
                    tester, schema, form.cause, form.effect, frozenset(sepset), cfg
                )
                if out.independent:
                    records.append(
                        SeparatingSetRecord(
                            u=form.cause,
                            v=form.effect,
                            sepset=sepset,
                            size=ell,
                            phase="I",
                        )
                    )
                    if cfg.order_independent:
                        pending.add(adj)
                    else:
                        alive.pop(adj, None)
                    break
        for adj in pending:
            alive.pop(adj, None)
        ell += 1
    return Phase1Result(adjacencies=frozenset(alive), records=records)


# ---------------------------------------------------------------------------
# Phase II table construction
# ---------------------------------------------------------------------------


@dataclass
class TableRows:
    """One orientation-test table: row anchors plus pre-extracted columns.

    ``pivot_items`` carry the items whose perspective supplies separating-set
    columns; ``mid_items`` carry the middle-attribute item used by the
    detection column.
    """

    base_class: str
    pivot_class: str
    pivot_items: list[str]
    mid_items: list[str]
    u_cells: list[Cell]
    v_cells: list[Cell]
    u_items: list[tuple[str, ...]]
    v_items: list[tuple[str, ...]]
    u_attr: str
    v_attr: str
    mid_attr: str


def build_split_rbo_rows(
    sk: Skeleton,
    data: AttrData,
    path: tuple[str, ...],
    x_attr: str,
    y_attr: str,
    dedup: bool = True,
) -> TableRows | None:
    """Rows for the one-vs-rest orientation test of a `many` adjacency.

    Base items with at least two reachable far-side items each produce one row
    per far-side item, pairing it against the remainder; with ``dedup`` the
    far-side column is refined to unique items (first row kept).
    """
    base = path[0]
    rows_i: list[str] = []
    rows_j: list[str] = []
    rests: list[tuple[str, ...]] = []
    seen: set[str] = set()
    for i in sk.items_of(base):
        terms = sorted(terminal_items(sk, path, i))
        if len(terms) < 2:
            continue
        for j in terms:
            if dedup and j in seen:
                continue
            seen.add(j)
            rows_i.append(i)
            rows_j.append(j)
            rests.append(tuple(t for t in terms if t != j))
    if not rows_j:
        return None
    return TableRows(
        base_class=base,
        pivot_class=path[-1],
        pivot_items=rows_j,
        mid_items=rows_i,
        u_cells=[(data.get(j, x_attr),) for j in rows_j],
        v_cells=[data.multiset(rest, x_attr) for rest in rests],
        u_items=[(j,) for j in rows_j],
        v_items=[rest for rest in rests],
        u_attr=x_attr,
        v_attr=x_attr,
        mid_attr=y_attr,
    )


def build_pair_rbo_rows(
    sk: Skeleton,
    data: AttrData,
    path_p: tuple[str, ...],
    path_q: tuple[str, ...],
    x_attr: str,
    y_attr: str,
) -> TableRows | None:
    """Rows pairing the two singleton far-side items of two `one` paths."""
    if path_p == path_q:
        raise ValueError("pair test needs two distinct paths")
    base = path_p[0]
    rows_i, rows_p, rows_q = [], [], []
    for i in sk.items_of(base):
        tp = terminal_items(sk, path_p, i)
        tq = terminal_items(sk, path_q, i)
        if len(tp) != 1 or len(tq) != 1:
            continue
        (p,) = tp
        (q,) = tq
        if p == q:
            continue
        rows_i.append(i)
        rows_p.append(p)
        rows_q.append(q)
    if not rows_i:
        return None
    return TableRows(
        base_class=base,
        pivot_class=path_p[-1],
        pivot_items=rows_p,
        mid_items=rows_i,
        u_cells=[(data.get(p, x_attr),) for p in rows_p],
        v_cells=[(data.get(q, x_attr),) for q in rows_q],
        u_items=[(p,) for p in rows_p],
        v_items=[(q,) for q in rows_q],
        u_attr=x_attr,
        v_attr=x_attr,
        mid_attr=y_attr,
    )


def build_non_rbo_rows(
    sk: Skeleton,
    data: AttrData,
    path_many: tuple[str, ...],
    x_attr: str,
    path_one: tuple[str, ...],
    z_attr: str,
    y_attr: str,
    perspective: str,
) -> TableRows | None:
    """Rows for the three-attribute test of X -> Y - Z with a singleton Z side.

    ``perspective`` selects where separating sets are evaluated: ``"far"``
    anchors them at the Z item; ``"cause"`` picks one X item per row and
    anchors them there.
    """
    base = path_many[0]
    rows_mid, pivots, u_cells, v_cells, u_items, v_items = [], [], [], [], [], []
    for j in sk.items_of(base):
        tq = terminal_items(sk, path_one, j)
        if len(tq) != 1:
            continue
        (k,) = tq
        tp = sorted(terminal_items(sk, path_many, j))
        if not tp:
            continue
        rows_mid.append(j)
        if perspective == "far":
            pivots.append(k)
            u_cells.append((data.get(k, z_attr),))
            u_items.append((k,))
            v_cells.append(data.multiset(tp, x_attr))
            v_items.append(tuple(tp))
        else:
            one = tp[0]
            pivots.append(one)
            u_cells.append((data.get(one, x_attr),))
            u_items.append((one,))
            v_cells.append((data.get(k, z_attr),))
            v_items.append((k,))
    if not rows_mid:
        return None
    return TableRows(
        base_class=base,
        pivot_class=path_one[-1] if perspective == "far" else path_many[-1],
        pivot_items=pivots,
        mid_items=rows_mid,
        u_cells=u_cells,
        v_cells=v_cells,
        u_items=u_items,
        v_items=v_items,
        u_attr=z_attr if perspective == "far" else x_attr,
        v_attr=x_attr if perspective == "far" else z_attr,
        mid_attr=y_attr,
    )


# ---------------------------------------------------------------------------
# Phase II verdict collection
# ---------------------------------------------------------------------------


class _TableTester:
    """Evaluates one table's sepset queries against either backend."""

    def __init__(
        self,
        schema: Schema,
        sk: Skeleton,
        data: AttrData,
        tester,
        cfg: LearnerConfig,
        rows: TableRows,
        context_id: str,
    ):
        self.schema = schema
        self.sk = sk
        self.data = data
        self.tester = tester
        self.cfg = cfg
        self.context_id = context_id
        self.oracle_mode = isinstance(tester, OracleRCITester)
        keep = strided_rows(np.arange(len(rows.pivot_items)), cfg.row_cap)
        self.rows = rows
        self.keep = keep
        self.pivot_kept = [rows.pivot_items[i] for i in keep]
        self.mid_kept = [rows.mid_items[i] for i in keep]
        if not self.oracle_mode:
            self._k_u = multiset_gram(
                [rows.u_cells[i] for i in keep], median_cap=cfg.median_cap,
                allow_empty=True,
            ).matrix
            self._k_v = multiset_gram(
                [rows.v_cells[i] for i in keep], median_cap=cfg.median_cap,
                allow_empty=True,
            ).matrix
            self._k_v_agg = None
            det_cells = [(data.get(i, rows.mid_attr),) for i in self.mid_kept]
            self._k_det = multiset_gram(
                det_cells, median_cap=cfg.median_cap, allow_empty=True
            ).matrix
            self._pivot_pos = tester.item_positions(rows.pivot_class, self.pivot_kept)
            self._svar_grams: dict[RelationalVariable, np.ndarray] = {}
        else:
            gg = tester.eval_ground_graph
            self._u_nodes = [
                [gg.index[(t, rows.u_attr)] for t in rows.u_items[i]] for i in keep
            ]
            self._v_nodes = [
                [gg.index[(t, rows.v_attr)] for t in rows.v_items[i]] for i in keep
            ]
            self._det_nodes = [
                [gg.index[(i, rows.mid_attr)]] for i in self.mid_kept
            ]
            self._svar_nodes: dict[RelationalVariable, list[list[int]]] = {}

    def _svar_gram(self, var: RelationalVariable) -> np.ndarray:
        hit = self._svar_grams.get(var)
        if hit is None:
            full = self.tester.var_gram(var)
            hit = full[np.ix_(self._pivot_pos, self._pivot_pos)]
            self._svar_grams[var] = hit
        return hit

    def _svar_node_rows(self, var: RelationalVariable) -> list[list[int]]:
        hit = self._svar_nodes.get(var)
        if hit is None:
            gg = self.tester.eval_ground_graph
            hit = []
            for item in self.pivot_kept:
                terms = terminal_items(self.sk, var.path, item)
                hit.append([gg.index[(t, var.attr)] for t in terms])
            self._svar_nodes[var] = hit
        return hit

    def v_is_multiset(self) -> bool:
        return any(len(c) > 1 for c in (self.rows.v_cells[i] for i in self.keep))

    def query(
        self, sepset: tuple[RelationalVariable, ...], augment_mid: bool
    ) -> QueryOutcome:
        if self.oracle_mode:
            z_rows = []
            svars = [self._svar_node_rows(v) for v in sepset]
            for r in range(len(self.keep)):
                z = set()
                for sv in svars:
                    z.update(sv[r])
                if augment_mid:
                    z.update(self._det_nodes[r])
                z_rows.append(sorted(z))
            rows = []
            for r in range(len(self.keep)):
                start = self._u_nodes[r][0]
                targets = [t for t in self._v_nodes[r] if t not in z_rows[r]]
                if start in z_rows[r] or not targets:
                    continue
                rows.append((start, targets, z_rows[r]))
            if not rows:
                return QueryOutcome(independent=True, vacuous=True)
            return QueryOutcome(independent=self.tester.node_rows_independent(rows))
        k_ws = [self._svar_gram(v) for v in sepset]
        if augment_mid:
            k_ws = k_ws + [self._k_det]
        out = self.tester.gram_test(
            self._k_u,
            self._k_v,
            k_ws,
            (self.context_id, tuple(str(s) for s in sepset), augment_mid),
        )
        if (
            out.error is None
            and out.independent
            and self.cfg.aggregation
            and self.v_is_multiset()
        ):
            if self._k_v_agg is None:
                cells = [
                    (aggregate_column([self.rows.v_cells[i]], self.cfg.aggregator)[0],)
                    for i in self.keep
                ]
                self._k_v_agg = multiset_gram(
                    cells, median_cap=self.cfg.median_cap, allow_empty=True
                ).matrix
            retry = self.tester.gram_test(
                self._k_u,
                self._k_v_agg,
                k_ws,
                (self.context_id, tuple(str(s) for s in sepset), augment_mid, "agg"),
            )
            if retry.error is None and not retry.independent:
                return QueryOutcome(independent=False, p_value=retry.p_value)
        return out


def _bounded_sepsets(
    lower: tuple[RelationalVariable, ...],
    candidates: Sequence[RelationalVariable],
    max_size: int,
    budget: int,
) -> list[tuple[RelationalVariable, ...]]:
    """Sets S with lower ⊆ S ⊆ candidates, ascending size, lexicographic."""
    extra = sorted(set(candidates) - set(lower))
    out: list[tuple[RelationalVariable, ...]] = []
    limit = max(max_size, len(lower))
    for k in range(0, max(0, limit - len(lower)) + 1):
        for combo in itertools.combinations(extra, k):
            out.append(tuple(sorted(set(lower) | set(combo))))
            if len(out) >= budget:
                return out
    return out


def collect_verdicts(
    table: _TableTester,
    triple: tuple[str, str, str],
    y_attr: str,
    sepsets: Sequence[tuple[RelationalVariable, ...]],
    provenance: str,
    cfg: LearnerConfig,
    first_only: bool = False,
) -> list[Verdict]:
    """Run the sepset search, mapping separations to orientation verdicts.

    Separation without any middle-attribute variable in the set indicates a
    collider; with one, a non-collider. With detection enabled a collider
    verdict must survive conditioning additionally on the row's own middle
    item value, otherwise the verdict is `weak`. Search stops at the smallest
    separating size; all sets of that size vote unless ``first_only``.
    """
    verdicts: list[Verdict] = []
    hit_size: int | None = None
    for sepset in sepsets:
        if hit_size is not None and len(sepset) > hit_size:
            break
        out = table.query(sepset, augment_mid=False)
        if out.error is not None or not out.independent or out.vacuous:
            continue
        hit_size = len(sepset)
        has_mid = any(v.attr == y_attr for v in sepset)
        if has_mid:
            verdicts.append(Verdict(triple, "non_collider", provenance, sepset))
        elif cfg.detection:
            aug = table.query(sepset, augment_mid=True)
            if aug.error is None and aug.independent and not aug.vacuous:
                verdicts.append(Verdict(triple, "weak", provenance, sepset))
            else:
                verdicts.append(Verdict(triple, "collider", provenance, sepset))
        else:
            verdicts.append(Verdict(triple, "collider", provenance, sepset))
        if first_only or not cfg.vote_minimal_sepsets:
            break
    return verdicts


# ---------------------------------------------------------------------------
# Phase II drivers
# ---------------------------------------------------------------------------


def _majority(verdicts: Iterable[Verdict]) -> str | None:
    c = sum(1 for v in verdicts if v.kind == "collider")
    nc = sum(1 for v in verdicts if v.kind == "non_collider")
    if c > nc:
        return "collider"
    if nc > c:
        return "non_collider"
    return None


@dataclass
class Phase2Result:
    prcm: PRCM
    evidence: dict[tuple[str, str, str], OrientationEvidence]
    weak_pairs: set[tuple[str, str]]


def _rbo_stage(
    schema: Schema,
    sk: Skeleton,
    data: AttrData,
    tester,
    adjacencies: frozenset[Adjacency],
    cfg: LearnerConfig,
    evidence: dict[tuple[str, str, str], OrientationEvidence],
    first_only: bool = False,
) -> tuple[dict[tuple[str, str], str], set[tuple[str, str]]]:
    """Run split and pair orientation tests for every adjacency direction.

    Returns per-attribute-pair edge orientations decided by majority, plus the
    pairs flagged as weakly dependent (tests ran, nothing decided).
    """
    ne = _build_ne(adjacencies)
    tested_pairs: set[tuple[str, str]] = set()
    for adj in sorted(adjacencies):
        for form in adj.forms():
            x_attr = form.cause.attr
            y_attr = form.effect.attr
            if path_cardinality(schema, form.cause.path) is not Cardinality.MANY:
                continue
            rows = build_split_rbo_rows(sk, data, form.cause.path, x_attr, y_attr)
            if rows is None:
                continue
            tested_pairs.add(tuple(sorted((x_attr, y_attr))))
            triple = (x_attr, y_attr, x_attr)
            table = _TableTester(
                schema, sk, data, tester, cfg, rows, f"split|{form}"
            )
            candidates = sorted(ne.get(x_attr, {}))
            sepsets = _bounded_sepsets((), candidates, cfg.max_cond_size, cfg.sepset_budget)
            got = collect_verdicts(
                table, triple, y_attr, sepsets, "split-rbo", cfg, first_only
            )
            evidence.setdefault(triple, OrientationEvidence(triple)).verdicts.extend(got)
    # pair tests: two distinct `one` paths into the same endpoint attribute
    by_pair: dict[tuple[str, str], list[RelationalDependency]] = {}
    for adj in sorted(adjacencies):
        for form in adj.forms():
            if path_cardinality(schema, form.cause.path) is Cardinality.ONE:
                by_pair.setdefault((form.cause.attr, form.effect.attr), []).append(form)
    for (x_attr, y_attr), forms in sorted(by_pair.items()):
        paths = sorted({f.cause.path for f in forms})
        for pa, pb in itertools.combinations(paths, 2):
            rows = build_pair_rbo_rows(sk, data, pa, pb, x_attr, y_attr)
            if rows is None:
                continue
            tested_pairs.add(tuple(sorted((x_attr, y_attr))))
            triple = (x_attr, y_attr, x_attr)
            table = _TableTester(
                schema, sk, data, tester, cfg, rows,
                f"pair|{'.'.join(pa)}|{'.'.join(pb)}|{x_attr}|{y_attr}",
            )
            candidates = sorted(ne.get(x_attr, {}))
            sepsets = _bounded_sepsets((), candidates, cfg.max_cond_size, cfg.sepset_budget)
            got = collect_verdicts(
                table, triple, y_attr, sepsets, "pair-rbo", cfg, first_only
            )
            evidence.setdefault(triple, OrientationEvidence(triple)).verdicts.extend(got)

    edge_decision: dict[tuple[str, str], str] = {}
    weak_pairs: set[tuple[str, str]] = set()
    for pair in sorted(tested_pairs):
        a, b = pair
        votes: dict[str, int] = {}
        for x_attr, y_attr in ((a, b), (b, a)):
            ev = evidence.get((x_attr, y_attr, x_attr))
            if ev is None:
                continue
            decision = _majority(ev.verdicts)
            if decision == "collider":
                votes[f"{x_attr}->{y_attr}"] = votes.get(f"{x_attr}->{y_attr}", 0) + 1
            elif decision == "non_collider":
                votes[f"{y_attr}->{x_attr}"] = votes.get(f"{y_attr}->{x_attr}", 0) + 1
        if not votes:
            weak_pairs.add(pair)
            continue
        ranked = sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))
        if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
            weak_pairs.add(pair)
            continue
        src, dst = ranked[0][0].split("->")
        edge_decision[pair] = f"{src}->{dst}"
    return edge_decision, weak_pairs


def _non_rbo_stage(
    schema: Schema,
    sk: Skeleton,
    data: AttrData,
    tester,
    adjacencies: frozenset[Adjacency],
    cfg: LearnerConfig,
    edge_decision: dict[tuple[str, str], str],
    weak_pairs: set[tuple[str, str]],
    evidence: dict[tuple[str, str, str], OrientationEvidence],
    first_only: bool = False,
) -> None:
    """Three-attribute orientation tests gated by the bivariate results."""
    ne = _build_ne(adjacencies)
    oriented: dict[tuple[str, str], str] = dict(edge_decision)

    def direction(x: str, y: str) -> str | None:
        d = oriented.get(tuple(sorted((x, y))))
        if d is None:
            return None
        src, dst = d.split("->")
        return "toward_y" if dst == y else "toward_x"

    def parent_vars(attr: str) -> tuple[RelationalVariable, ...]:
        out = []
        for var in ne.get(attr, {}):
            d = oriented.get(tuple(sorted((var.attr, attr))))
            if d is not None and d.endswith(f"->{attr}"):
                out.append(var)
        return tuple(sorted(out))

    triple_budget: dict[tuple[str, str, str], int] = {}
    for y_attr in sorted(ne):
        forms = sorted(ne[y_attr])
        for va, vb in itertools.combinations(forms, 2):
            if va.attr == vb.attr or va.attr == y_attr or vb.attr == y_attr:
                continue
            key = _nc_key(va.attr, y_attr, vb.attr)
            if triple_budget.get(key, 0) >= cfg.cut_cap:
                continue
            if (
                tuple(sorted((va.attr, y_attr))) in weak_pairs
                or tuple(sorted((vb.attr, y_attr))) in weak_pairs
            ):
                continue
            ca = path_cardinality(schema, va.path)
            cb = path_cardinality(schema, vb.path)
            if ca is Cardinality.MANY and cb is Cardinality.MANY:
                continue
            if ca is Cardinality.MANY:
                many, one = va, vb
            elif cb is Cardinality.MANY:
                many, one = vb, va
            else:
                many, one = va, vb  # both singleton; treated symmetrically
            x_attr, z_attr = many.attr, one.attr
            if path_cardinality(schema, many.path) is Cardinality.MANY:
                d = direction(x_attr, y_attr)
                if d != "toward_y":
                    continue  # unresolved or already a non-collider shape
            triple = _nc_key(x_attr, y_attr, z_attr)
            ran = False
            for perspective in ("far", "cause"):
                rows = build_non_rbo_rows(
                    sk, data, many.path, x_attr, one.path, z_attr, y_attr, perspective
                )
                if rows is None:
                    continue
                s_attr = z_attr if perspective == "far" else x_attr
                candidates = sorted(ne.get(s_attr, {}))
                lower = parent_vars(s_attr)
                sepsets = _bounded_sepsets(
                    lower, candidates, cfg.max_cond_size, cfg.sepset_budget
                )
                table = _TableTester(
                    schema, sk, data, tester, cfg, rows,
                    f"nonrbo|{many}|{one}|{perspective}",
                )
                got = collect_verdicts(
                    table, triple, y_attr, sepsets, "non-rbo", cfg, first_only
                )
                if got:
                    ran = True
                evidence.setdefault(triple, OrientationEvidence(triple)).verdicts.extend(got)
            if ran:
                triple_budget[key] = triple_budget.get(key, 0) + 1


# ---------------------------------------------------------------------------
# Global orientation
# ---------------------------------------------------------------------------


def _lift(
    schema: Schema, adjacencies: frozenset[Adjacency], graph: AttributeGraph,
    non_colliders: set[tuple[str, str, str]],
) -> PRCM:
    directed: set[RelationalDependency] = set()
    undirected: set[Adjacency] = set()
    for adj in adjacencies:
        a, b = sorted(adj.attrs) if len(adj.attrs) == 2 else (None, None)
        if a is None:
            undirected.add(adj)
            continue
        if (a, b) in graph.directed:
            directed.add(adj.directed_toward(b))
        elif (b, a) in graph.directed:
            directed.add(adj.directed_toward(a))
        else:
            undirected.add(adj)
    realized_colliders = {
        key
        for key in non_colliders
        if (key[0], key[1]) in graph.directed and (key[2], key[1]) in graph.directed
    }
    return PRCM(
        schema=schema,
        directed=frozenset(directed),
        undirected=frozenset(undirected),
        attr_directed=frozenset(graph.directed),
        attr_undirected=frozenset(graph.undirected),
        non_colliders=frozenset(non_colliders - realized_colliders),
    )


def orient(
    schema: Schema,
    adjacencies: frozenset[Adjacency],
    edge_decisions: dict[tuple[str, str], str],
    collider_decisions: set[tuple[str, str, str]],
    non_collider_decisions: set[tuple[str, str, str]],
    max_search: int = 200_000,
) -> PRCM:
    """Maximal non-conflicting global orientation plus propagation.

    Positive decisions (edge orientations and colliders) are searched by
    decreasing subset size for a choice that applies without two-way edges or
    directed cycles; non-collider decisions act as soft constraints scored
    after closure. Co-maximal solutions are tie-broken toward the one sharing
    the most orientations with its competitors, then lexicographically.
    """
    base = AttributeGraph.from_adjacencies(schema, adjacencies)
    positives: list[tuple[str, tuple]] = []
    for pair in sorted(edge_decisions):
        src, dst = edge_decisions[pair].split("->")
        positives.append(("edge", (src, dst)))
    for key in sorted(collider_decisions):
        positives.append(("collider", key))

    def attempt(chosen: Sequence[tuple[str, tuple]]):
        g = base.copy()
        for kind, payload in chosen:
            if kind == "edge":
                src, dst = payload
                if g.creates_cycle(src, dst) or not g.orient(src, dst):
                    return None
            else:
                a, y, b = payload
                for src in (a, b):
                    if g.creates_cycle(src, y) or not g.orient(src, y):
                        return None
        nc = {
            key
            for key in non_collider_decisions
            if not ((key[0], key[1]) in g.directed and (key[2], key[1]) in g.directed)
        }
        if not meek_closure(g, nc):
            return None
        satisfied_nc = sum(
            1
            for key in non_collider_decisions
            if not ((key[0], key[1]) in g.directed and (key[2], key[1]) in g.directed)
        )
        return g, len(chosen) + satisfied_nc

    best_score = -1
    best: list[AttributeGraph] = []
    checked = 0
    for size in range(len(positives), -1, -1):
        if best_score >= size + len(non_collider_decisions):
            break
        for combo in itertools.combinations(positives, size):
            checked += 1
            if checked > max_search:
                break
            result = attempt(combo)
            if result is None:
                continue
            g, score = result
            if score > best_score:
                best_score = score
                best = [g]
            elif score == best_score:
                best.append(g)
        if checked > max_search:
            break
    if not best:
        g = base.copy()
        meek_closure(g, set(non_collider_decisions))
        best = [g]
    if len(best) > 1:
        keys = [g.key() for g in best]
        uniq: dict[tuple, AttributeGraph] = {}
        for k, g in zip(keys, best):
            uniq.setdefault(k, g)
        if len(uniq) > 1:
            def agreement(k1: tuple, k2: tuple) -> int:
                d1, u1 = set(k1[0]), set(k1[1])
                d2, u2 = set(k2[0]), set(k2[1])
                return len(d1 & d2) + len(u1 & u2)

            scored = sorted(
                uniq.items(),
                key=lambda kv: (
                    -sum(agreement(kv[0], other) for other in uniq if other != kv[0]),
                    kv[0],
                ),
            )
            chosen = scored[0][1]
        else:
            chosen = next(iter(uniq.values()))
    else:
        chosen = best[0]
    return _lift(schema, adjacencies, chosen, set(non_collider_decisions))


def phase2_robust(
    schema: Schema,
    sk: Skeleton,
    data: AttrData,
    tester,
    adjacencies: frozenset[Adjacency],
    cfg: LearnerConfig,
    first_only: bool = False,
) -> Phase2Result:
    evidence: dict[tuple[str, str, str], OrientationEvidence] = {}
    edge_decision, weak_pairs = _rbo_stage(
        schema, sk, data, tester, adjacencies, cfg, evidence, first_only
    )
    _non_rbo_stage(
        schema, sk, data, tester, adjacencies, cfg, edge_decision, weak_pairs,
        evidence, first_only,
    )
    colliders: set[tuple[str, str, str]] = set()
    non_colliders: set[tuple[str, str, str]] = set()
    for triple, ev in sorted(evidence.items()):
        x, y, z = triple
        if x == z:
            continue  # bivariate: folded into edge decisions
        decision = _majority(ev.verdicts)
        if decision == "collider":
            colliders.add(triple)
        elif decision == "non_collider":
            non_colliders.add(triple)
    prcm = orient(schema, adjacencies, edge_decision, colliders, non_colliders)
    return Phase2Result(prcm=prcm, evidence=evidence, weak_pairs=weak_pairs)


# ---------------------------------------------------------------------------
# CUT-based phase II (baseline and oracle)
# ---------------------------------------------------------------------------


def _cut_verdict(
    tester,
    schema: Schema,
    cut: CanonicalUnshieldedTriple,
    ne: dict[str, dict[RelationalVariable, Adjacency]],
    cfg: LearnerConfig,
) -> tuple[str, tuple[RelationalVariable, ...]] | None:
    """First-separating-set decision for one CUT: collider, bivariate
    non-collider (`rbo_nc`), or recorded non-collider."""
    x_attr = cut.vx.attr
    candidates = sorted(v for v in ne.get(x_attr, {}) if v != cut.rz)
    pys = set(cut.pys)
    for sepset in _bounded_sepsets((), candidates, cfg.max_cond_size, cfg.sepset_budget):
        out, _ = _combined_rci(tester, schema, cut.rz, cut.vx, frozenset(sepset), cfg)
        if not out.independent or out.vacuous:
            continue
        if not (set(sepset) & pys):
            return ("collider", sepset)
        if cut.vx.attr == cut.rz.attr:
            return ("rbo_nc", sepset)
        return ("non_collider", sepset)
    return None


def phase2_cut_oracle(
    schema: Schema,
    enum_sk: Skeleton,
    tester,
    adjacencies: frozenset[Adjacency],
    cfg: LearnerConfig,
) -> Phase2Result:
    """Literal two-phase orientation over CUTs with in-loop propagation."""
    ne = _build_ne(adjacencies)
    graph = AttributeGraph.from_adjacencies(schema, adjacencies)
    non_colliders: set[tuple[str, str, str]] = set()
    evidence: dict[tuple[str, str, str], OrientationEvidence] = {}
    cuts = enumerate_cuts(adjacencies, enum_sk, 2 * cfg.h, per_triple_cap=cfg.cut_cap)
    for cut in cuts:
        x, y, z = cut.attr_triple
        key = _nc_key(x, y, z)
        if key in non_colliders:
            continue
        nbrs = set(graph.neighbors(y))
        if not ({x, z} & nbrs):
            continue
        if {x, z} & set(graph.children(y)):
            continue
        got = _cut_verdict(tester, schema, cut, ne, cfg)
        if got is None:
            continue
        kind, sepset = got
        evidence.setdefault(key, OrientationEvidence(key)).verdicts.append(
            Verdict(key, "non_collider" if kind != "collider" else "collider", "cut", sepset)
        )
        if kind == "collider":
            for src in (x, z):
                if not graph.creates_cycle(src, y):
                    graph.orient(src, y)
        elif kind == "rbo_nc":
            if not graph.creates_cycle(y, x):
                graph.orient(y, x)
        else:
            non_colliders.add(key)
        meek_closure(graph, non_colliders, completed=False)
    meek_closure(graph, non_colliders)
    prcm = _lift(schema, adjacencies, graph, non_colliders)
    return Phase2Result(prcm=prcm, evidence=evidence, weak_pairs=set())


def phase2_cut_baseline(
    schema: Schema,
    enum_sk: Skeleton,
    tester,
    adjacencies: frozenset[Adjacency],
    cfg: LearnerConfig,
) -> Phase2Result:
    """CUT verdicts with majority vote per triple and sequential acceptance."""
    ne = _build_ne(adjacencies)
    evidence: dict[tuple[str, str, str], OrientationEvidence] = {}
    votes: dict[tuple[str, str, str], list[str]] = {}
    cuts = enumerate_cuts(adjacencies, enum_sk, 2 * cfg.h, per_triple_cap=cfg.cut_cap)
    for cut in cuts:
        x, y, z = cut.attr_triple
        key = _nc_key(x, y, z)
        got = _cut_verdict(tester, schema, cut, ne, cfg)
        if got is None:
            continue
        kind, sepset = got
        label = "collider" if kind == "collider" else "non_collider"
        evidence.setdefault(key, OrientationEvidence(key)).verdicts.append(
            Verdict(key, label, "cut", sepset)
        )
        votes.setdefault(key, []).append(kind if kind != "rbo_nc" else f"rbo_nc|{y}->{x}")
    graph = AttributeGraph.from_adjacencies(schema, adjacencies)
    non_colliders: set[tuple[str, str, str]] = set()
    for key in sorted(votes):
        counts: dict[str, int] = {}
        for k in votes[key]:
            counts[k] = counts.get(k, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
            continue
        decision = ranked[0][0]
        a, y, b = key
        if decision == "collider":
            if a != b:
                if not (
                    graph.creates_cycle(a, y)
                    or graph.creates_cycle(b, y)
                    or (y, a) in graph.directed
                    or (y, b) in graph.directed
                ):
                    graph.orient(a, y)
                    graph.orient(b, y)
            else:
                if not graph.creates_cycle(a, y) and (y, a) not in graph.directed:
                    graph.orient(a, y)
        elif decision.startswith("rbo_nc|"):
            src, dst = decision.split("|")[1].split("->")
            if not graph.creates_cycle(src, dst) and (dst, src) not in graph.directed:
                graph.orient(src, dst)
        else:
            non_colliders.add(key)
    meek_closure(graph, non_colliders)
    prcm = _lift(schema, adjacencies, graph, non_colliders)
    return Phase2Result(prcm=prcm, evidence=evidence, weak_pairs=set())


# ---------------------------------------------------------------------------
# End-to-end runs
# ---------------------------------------------------------------------------


def _make_tester(sk: Skeleton, data: AttrData, cfg: LearnerConfig) -> KernelRCITester:
    return KernelRCITester(
        sk,
        data,
        alpha=cfg.alpha,
        n_perm=cfg.n_perm,
        rng_seed=cfg.rng_seed,
        median_cap=cfg.median_cap,
        ridge=cfg.ridge,
        block_size=cfg.block_size,
        row_cap=cfg.row_cap,
        early_stop=cfg.early_stop,
        aggregator=cfg.aggregator,
    )


def rpcd_run(
    schema: Schema,
    sk: Skeleton,
    data: AttrData,
    cfg: LearnerConfig,
    candidates: Sequence[Adjacency] | None = None,
    tester: KernelRCITester | None = None,
    adjacencies: frozenset[Adjacency] | None = None,
) -> RunResult:
    """Full statistical run. ``adjacencies`` skips phase I (used for
    orientation-only experiments on known structure)."""
    if cfg.mode == "oracle":
        raise ValueError("oracle mode requires rpcd_run_oracle (needs the true model)")
    t0 = time.time()
    tester = tester or _make_tester(sk, data, cfg)
    timings: dict[str, float] = {}
    if adjacencies is None:
        p1 = phase1(schema, tester, cfg, candidates)
    else:
        p1 = Phase1Result(adjacencies=frozenset(adjacencies), records=[])
    timings["phase1"] = time.time() - t0
    t1 = time.time()
    if cfg.mode == "robust":
        p2 = phase2_robust(schema, sk, data, tester, p1.adjacencies, cfg)
    else:
        p2 = phase2_cut_baseline(schema, sk, tester, p1.adjacencies, cfg)
    timings["phase2"] = time.time() - t1
    return RunResult(
        prcm=p2.prcm,
        phase1=p1,
        evidence=p2.evidence,
        queries=list(tester.query_log),
        timings=timings,
        config=cfg,
    )


def rpcd_run_oracle(
    model: RCM,
    skeletons: Sequence[Skeleton],
    cfg: LearnerConfig,
    candidates: Sequence[Adjacency] | None = None,
    oracle: RCIOracle | None = None,
) -> RunResult:
    """Oracle-backed run over the model's exact independence structure."""
    t0 = time.time()
    oracle = oracle or RCIOracle(model, list(skeletons))
    tester = OracleRCITester(oracle)
    timings: dict[str, float] = {}
    p1 = phase1(model.schema, tester, cfg, candidates)
    timings["phase1"] = time.time() - t0
    t1 = time.time()
    p2 = phase2_cut_oracle(
        model.schema, skeletons[0], tester, p1.adjacencies, cfg
    )
    timings["phase2"] = time.time() - t1
    return RunResult(
        prcm=p2.prcm,
        phase1=p1,
        evidence=p2.evidence,
        queries=list(tester.query_log),
        timings=timings,
        config=cfg,
    )


def write_report(result: RunResult, path: str | Path) -> None:
    payload = {
        "config": {
            "h": result.config.h,
            "alpha": result.config.alpha,
            "mode": result.config.mode,
            "order_independent": result.config.order_independent,
            "aggregation": result.config.aggregation,
            "detection": result.config.detection,
            "rng_seed": result.config.rng_seed,
        },
        "queries": result.queries,
        "separating_sets": [
            {
                "u": str(r.u),
                "v": str(r.v),
                "sepset": [str(s) for s in r.sepset],
                "size": r.size,
                "phase": r.phase,
            }
            for r in result.phase1.records
        ],
        "verdicts": [
            {
                "triple": list(ev.triple),
                "verdicts": [
                    {
                        "kind": v.kind,
                        "provenance": v.provenance,
                        "sepset": [str(s) for s in v.sepset],
                    }
                    for v in ev.verdicts
                ],
            }
            for ev in result.evidence.values()
        ],
        "timings": result.timings,
        "model": serialize_prcm(result.prcm),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))
