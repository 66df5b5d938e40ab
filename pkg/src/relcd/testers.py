"""Query evaluation backends for the learner.

The kernel tester answers relational CI queries against one skeleton's data,
caching per-variable flattened columns and gram matrices so that the sepset
search pays the quadratic kernel cost once per variable instead of once per
query. The oracle tester answers the same queries exactly by d-separation.
Both memoize on the canonical query form, which also makes results
independent of the order in which the learner issues queries.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .citest import (
    Cell,
    aggregate_column,
    conditional_from_grams,
    hsic_from_grams,
    multiset_gram,
)
from .rcm import RCIOracle, RelationalVariable, batched_d_connected, ground_graph
from .skeleton import AttrData, Skeleton, terminal_items

MIN_ROWS_MARGINAL = 10
MIN_ROWS_CONDITIONAL = 20


@dataclass
class QueryOutcome:
    independent: bool
    p_value: float | None = None
    vacuous: bool = False
    error: str | None = None
    fallback_marginal: bool = False
    n_rows: int = 0


def stable_seed(run_seed: int, *parts) -> int:
    text = f"{run_seed}|" + "|".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") % (2**63)


def strided_rows(indices: np.ndarray, cap: int | None) -> np.ndarray:
    if cap is None or len(indices) <= cap:
        return indices
    pick = np.linspace(0, len(indices) - 1, cap).round().astype(np.int64)
    return indices[np.unique(pick)]


class KernelRCITester:
    """Kernel CI tests over one (skeleton, data) pair with shared caches."""

    def __init__(
        self,
        sk: Skeleton,
        data: AttrData,
        alpha: float = 0.05,
        n_perm: int = 500,
        rng_seed: int = 0,
        median_cap: int = 1000,
        ridge: float = 1e-3,
        block_size: int = 3,
        row_cap: int | None = 500,
        early_stop: bool = True,
        aggregator: str = "average",
    ):
        self.sk = sk
        self.data = data
        self.alpha = alpha
        self.n_perm = n_perm
        self.rng_seed = rng_seed
        self.median_cap = median_cap
        self.ridge = ridge
        self.block_size = block_size
        self.row_cap = row_cap
        self.early_stop = early_stop
        self.aggregator = aggregator
        self._columns: dict[RelationalVariable, tuple[tuple[Cell, ...], np.ndarray]] = {}
        self._grams: dict[tuple[RelationalVariable, bool], np.ndarray] = {}
        self._memo: dict[tuple, QueryOutcome] = {}
        self.query_log: list[dict] = []

    # -- column / gram caches -------------------------------------------------

    def column(self, var: RelationalVariable) -> tuple[tuple[Cell, ...], np.ndarray]:
        hit = self._columns.get(var)
        if hit is None:
            items = self.sk.items_of(var.base)
            cells = []
            for item in items:
                terms = terminal_items(self.sk, var.path, item)
                cells.append(self.data.multiset(terms, var.attr))
            nonempty = np.array([len(c) > 0 for c in cells], dtype=bool)
            hit = (tuple(cells), nonempty)
            self._columns[var] = hit
        return hit

    def var_gram(self, var: RelationalVariable, aggregated: bool = False) -> np.ndarray:
        key = (var, aggregated)
        hit = self._grams.get(key)
        if hit is None:
            cells, nonempty = self.column(var)
            if aggregated:
                cells = tuple(
                    (aggregate_column([c], self.aggregator)[0],) if c else ()
                    for c in cells
                )
            hit = multiset_gram(cells, median_cap=self.median_cap, allow_empty=True).matrix
            self._grams[key] = hit
        return hit

    def item_positions(self, base: str, items: Sequence[str]) -> np.ndarray:
        all_items = self.sk.items_of(base)
        index = {item: i for i, item in enumerate(all_items)}
        return np.array([index[i] for i in items], dtype=np.int64)

    # -- gram-level tests -------------------------------------------------------

    def gram_test(
        self,
        K_u: np.ndarray,
        K_v: np.ndarray,
        K_ws: Sequence[np.ndarray],
        seed_parts: tuple,
    ) -> QueryOutcome:
        n = K_u.shape[0]
        min_rows = MIN_ROWS_CONDITIONAL if K_ws else MIN_ROWS_MARGINAL
        if n < min_rows:
            return QueryOutcome(
                independent=False, error=f"too few rows ({n} < {min_rows})", n_rows=n
            )
        seed = stable_seed(self.rng_seed, *seed_parts)
        if not K_ws:
            res = hsic_from_grams(
                K_u, K_v, self.alpha, self.n_perm, seed, early_stop=self.early_stop
            )
        else:
            K_w = K_ws[0].copy()
            for extra in K_ws[1:]:
                K_w *= extra
            res = conditional_from_grams(
                K_u,
                K_v,
                K_w,
                self.alpha,
                self.n_perm,
                seed,
                ridge=self.ridge,
                block_size=self.block_size,
                early_stop=self.early_stop,
            )
        return QueryOutcome(
            independent=res.independent,
            p_value=res.p_value,
            fallback_marginal=res.fallback_marginal,
            n_rows=n,
        )

    # -- relational queries -----------------------------------------------------

    def rci(
        self,
        u: RelationalVariable,
        v: RelationalVariable,
        w: Iterable[RelationalVariable] = (),
        aggregated: bool = False,
    ) -> QueryOutcome:
        wset = frozenset(w)
        key = (u, v, wset, aggregated)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        _, u_mask = self.column(u)
        _, v_mask = self.column(v)
        rows = np.flatnonzero(u_mask & v_mask)
        if len(rows) == 0:
            out = QueryOutcome(independent=True, vacuous=True, n_rows=0)
        else:
            rows = strided_rows(rows, self.row_cap)
            ix = np.ix_(rows, rows)
            K_u = self.var_gram(u, aggregated)[ix]
            K_v = self.var_gram(v)[ix]
            K_ws = [self.var_gram(x)[ix] for x in sorted(wset)]
            out = self.gram_test(
                K_u, K_v, K_ws, ("rci", u, v, tuple(sorted(wset)), aggregated)
            )
        self._memo[key] = out
        self.query_log.append(
            {
                "kind": "rci",
                "u": str(u),
                "v": str(v),
                "w": sorted(str(x) for x in wset),
                "aggregated": aggregated,
                "independent": out.independent,
                "p_value": out.p_value,
                "vacuous": out.vacuous,
                "error": out.error,
            }
        )
        return out


class OracleRCITester:
    """Adapter giving the exact oracle the same query surface as the kernel
    tester. Table-style queries are answered by node-set d-separation."""

    def __init__(self, oracle: RCIOracle, eval_skeleton: Skeleton | None = None):
        self.oracle = oracle
        self.query_log: list[dict] = []
        self._eval_sk = eval_skeleton
        self._eval_gg = None

    def rci(
        self,
        u: RelationalVariable,
        v: RelationalVariable,
        w: Iterable[RelationalVariable] = (),
        aggregated: bool = False,
    ) -> QueryOutcome:
        independent = self.oracle.independent(u, v, w)
        out = QueryOutcome(independent=independent)
        self.query_log.append(
            {
                "kind": "rci",
                "u": str(u),
                "v": str(v),
                "w": sorted(str(x) for x in w),
                "aggregated": aggregated,
                "independent": independent,
                "p_value": None,
            }
        )
        return out

    def node_rows_independent(
        self,
        rows: Sequence[tuple[int, Sequence[int], Sequence[int]]],
    ) -> bool:
        """Rows of (start node, target nodes, conditioning nodes) over the
        evaluation skeleton's ground graph; dependent iff any row connects."""
        if self._eval_gg is None:
            sk = self._eval_sk or self.oracle.contexts[0].sk
            self._eval_gg = ground_graph(self.oracle.model, sk)
        starts = [r[0] for r in rows]
        targets = [r[1] for r in rows]
        conds = [r[2] for r in rows]
        hits = batched_d_connected(self._eval_gg, starts, targets, conds)
        return not bool(hits.any())

    @property
    def eval_ground_graph(self):
        if self._eval_gg is None:
            sk = self._eval_sk or self.oracle.contexts[0].sk
            self._eval_gg = ground_graph(self.oracle.model, sk)
        return self._eval_gg
