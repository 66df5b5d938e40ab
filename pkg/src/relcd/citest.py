"""Kernel conditional-independence testing over flattened relational data.

Queries are answered on a per-base-item table whose cells are multisets of
attribute values. Multisets are compared with an R-convolution sum kernel over
a scalar RBF base kernel, bandwidths come from the median heuristic, and gram
matrices are normalized to unit diagonal. Marginal queries use an HSIC
permutation test; conditional queries use a permutation test whose null
reshuffles the first column only among rows with similar conditioning values,
on a statistic computed from kernel-regression residuals.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .rcm import RelationalVariable
from .skeleton import AttrData, ItemMultiset, Skeleton, terminal_items

Cell = tuple[float, ...]


# ---------------------------------------------------------------------------
# Flattening
# ---------------------------------------------------------------------------


@dataclass
class FlatTable:
    """One row per base item; one multiset cell per relational variable."""

    base_class: str
    rows: tuple[str, ...]
    columns: dict[RelationalVariable, tuple[Cell, ...]]

    def column(self, var: RelationalVariable) -> tuple[Cell, ...]:
        return self.columns[var]

    def __len__(self) -> int:
        return len(self.rows)


def flatten(
    sk: Skeleton,
    data: AttrData,
    u: RelationalVariable,
    v: RelationalVariable,
    w: Iterable[RelationalVariable] = (),
) -> FlatTable:
    """Build the query-specific table for testing ``u`` against ``v`` given ``w``.

    Rows whose ``u`` or ``v`` cell is empty are dropped; empty conditioning
    cells are kept as empty multisets.
    """
    wvars = tuple(sorted(set(w)))
    base = v.base
    if u.base != base or any(x.base != base for x in wvars):
        raise ValueError("all variables in a query must share one base class")
    rows: list[str] = []
    cols: dict[RelationalVariable, list[Cell]] = {var: [] for var in (u, v, *wvars)}
    for item in sk.items_of(base):
        u_terms = terminal_items(sk, u.path, item)
        v_terms = terminal_items(sk, v.path, item)
        if not u_terms or not v_terms:
            continue
        rows.append(item)
        cols[u].append(data.multiset(u_terms, u.attr))
        cols[v].append(data.multiset(v_terms, v.attr))
        for var in wvars:
            cols[var].append(data.multiset(terminal_items(sk, var.path, item), var.attr))
    return FlatTable(
        base_class=base,
        rows=tuple(rows),
        columns={var: tuple(cells) for var, cells in cols.items()},
    )


def save_flat_table(table: FlatTable, path: str | Path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        ordered = sorted(table.columns)
        writer.writerow(["item"] + [str(v) for v in ordered])
        for r, item in enumerate(table.rows):
            writer.writerow(
                [item] + ["|".join(repr(x) for x in table.columns[v][r]) for v in ordered]
            )


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


@dataclass
class KernelMatrix:
    matrix: np.ndarray
    theta: float


def median_bandwidth(values: np.ndarray, cap: int = 1000) -> float:
    """Median of pairwise distances over a deterministic subsample.

    Falls back to 1.0 when every pairwise distance is zero (all-identical
    input), which would otherwise leave the kernel width undefined.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if len(vals) > cap:
        stride = int(math.ceil(len(vals) / cap))
        vals = vals[::stride]
    if len(vals) < 2:
        return 1.0
    diffs = np.abs(vals[:, None] - vals[None, :])
    upper = diffs[np.triu_indices(len(vals), k=1)]
    positive = upper[upper > 0]
    if len(positive) == 0:
        return 1.0
    return float(np.median(positive))


def _rbf(dist_sq: np.ndarray, theta: float) -> np.ndarray:
    return np.exp(-dist_sq / (2.0 * theta * theta))


def _as_cells(values: Sequence) -> list[Cell]:
    cells = []
    for v in values:
        if isinstance(v, (int, float, np.floating, np.integer)):
            cells.append((float(v),))
        else:
            cells.append(tuple(float(x) for x in v))
    return cells


def multiset_gram(
    cells: Sequence[Cell],
    theta: float | None = None,
    median_cap: int = 1000,
    allow_empty: bool = False,
) -> KernelMatrix:
    """Normalized R-convolution sum-kernel gram over multiset cells.

    The raw kernel sums the scalar RBF kernel over all element pairs and is
    then normalized to unit diagonal. Empty cells, when allowed, act as a
    dedicated symbol: kernel 0 against any element, 1 against another empty.
    """
    n = len(cells)
    lengths = np.array([len(c) for c in cells], dtype=np.int64)
    if not allow_empty and (lengths == 0).any():
        raise ValueError("empty multiset cell")
    nonempty = np.flatnonzero(lengths > 0)
    flat = np.concatenate([cells[i] for i in nonempty]) if len(nonempty) else np.array([])
    if theta is None:
        theta = median_bandwidth(flat, cap=median_cap)
    K = np.zeros((n, n), dtype=np.float64)
    if len(nonempty):
        d = flat[:, None] - flat[None, :]
        E = _rbf(d * d, theta)
        offsets = np.zeros(len(nonempty) + 1, dtype=np.int64)
        np.cumsum(lengths[nonempty], out=offsets[1:])
        B = np.add.reduceat(np.add.reduceat(E, offsets[:-1], axis=0), offsets[:-1], axis=1)
        K[np.ix_(nonempty, nonempty)] = B
    empty = np.flatnonzero(lengths == 0)
    if len(empty):
        K[np.ix_(empty, empty)] = 1.0
    diag = np.sqrt(np.diag(K))
    K = K / np.outer(diag, diag)
    np.fill_diagonal(K, 1.0)
    return KernelMatrix(matrix=K, theta=float(theta))


def rbf_gram(values: Sequence, median_cap: int = 1000) -> KernelMatrix:
    """Normalized RBF gram for scalars, R-convolution gram for multisets."""
    if len(values) < 2:
        raise ValueError("need at least 2 values")
    cells = _as_cells(values)
    return multiset_gram(cells, median_cap=median_cap, allow_empty=False)


# ---------------------------------------------------------------------------
# Test results and permutation machinery
# ---------------------------------------------------------------------------


@dataclass
class TestResult:
    p_value: float
    statistic: float
    alpha: float
    n_permutations: int
    decision_dependent: bool
    fallback_marginal: bool = False

    @property
    def independent(self) -> bool:
        return not self.decision_dependent


def _center(K: np.ndarray) -> np.ndarray:
    n = K.shape[0]
    row = K.mean(axis=0, keepdims=True)
    col = K.mean(axis=1, keepdims=True)
    return K - row - col + K.mean()


def _early_stop_threshold(alpha: float, n_perm: int) -> int:
    # Sequential permutation stopping: once this many permuted statistics have
    # reached the observed one, p > alpha is guaranteed and we can stop.
    return int(math.ceil(alpha * (n_perm + 1))) + 1


def _perm_pvalue(
    K_first: np.ndarray,
    weight: np.ndarray,
    n_perm: int,
    rng: np.random.Generator,
    perm_draw: Callable[[np.random.Generator], np.ndarray],
    early_stop_h: int | None = None,
    denom: np.ndarray | None = None,
) -> tuple[float, int, float]:
    """Permutation p-value for T = sum(K_first * weight) under row permutation.

    With ``denom`` the statistic becomes a ratio sum(K*weight)/sum(K*denom),
    which keeps the null distribution comparable when permutation changes the
    column's own scale (the conditional test's residual energy). ``perm_draw``
    supplies index permutations (global or block-restricted). With
    ``early_stop_h``, stops once that many exceedances occur and returns the
    sequential p-value h / L, which is valid and saves work whenever the null
    is clearly not rejected.
    """
    Kf = K_first.astype(np.float32)
    Wt = weight.astype(np.float32)
    Df = denom.astype(np.float32) if denom is not None else None

    def stat(K: np.ndarray) -> float:
        num = float(np.vdot(K, Wt))
        if Df is None:
            return num
        return num / max(float(np.vdot(K, Df)), 1e-12)

    t_obs = stat(Kf)
    exceed = 0
    for t in range(1, n_perm + 1):
        pi = perm_draw(rng)
        if stat(Kf[np.ix_(pi, pi)]) >= t_obs:
            exceed += 1
            if early_stop_h is not None and exceed >= early_stop_h:
                return exceed / t, t, t_obs
    return (exceed + 1) / (n_perm + 1), n_perm, t_obs


def hsic_from_grams(
    K_u: np.ndarray,
    K_v: np.ndarray,
    alpha: float,
    n_perm: int,
    rng_seed: int,
    early_stop: bool = False,
) -> TestResult:
    n = K_u.shape[0]
    M = _center(K_v)
    statistic = float(np.vdot(K_u, M)) / (n * n)
    rng = np.random.default_rng(rng_seed)
    draw = lambda r: r.permutation(n)
    h = _early_stop_threshold(alpha, n_perm) if early_stop else None
    p, used, _ = _perm_pvalue(K_u, M, n_perm, rng, draw, early_stop_h=h)
    return TestResult(
        p_value=p,
        statistic=statistic,
        alpha=alpha,
        n_permutations=used,
        decision_dependent=p <= alpha,
    )


def marginal_test(
    u_col: Sequence,
    v_col: Sequence,
    alpha: float = 0.05,
    n_perm: int = 500,
    rng_seed: int = 0,
    median_cap: int = 1000,
    early_stop: bool = False,
) -> TestResult:
    """HSIC permutation test of u against v; the u column is permuted."""
    if len(u_col) != len(v_col):
        raise ValueError("columns must be aligned")
    if len(u_col) < 10:
        raise ValueError(f"need at least 10 rows, got {len(u_col)}")
    K_u = rbf_gram(u_col, median_cap=median_cap).matrix
    K_v = rbf_gram(v_col, median_cap=median_cap).matrix
    return hsic_from_grams(K_u, K_v, alpha, n_perm, rng_seed, early_stop=early_stop)


def _greedy_similarity_order(K: np.ndarray) -> np.ndarray:
    """Chain rows so neighbours in the order are similar under K."""
    n = K.shape[0]
    sim = K.copy()
    np.fill_diagonal(sim, -np.inf)
    order = np.empty(n, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)
    cur = 0
    for i in range(n):
        order[i] = cur
        visited[cur] = True
        if i == n - 1:
            break
        row = sim[cur].copy()
        row[visited] = -np.inf
        cur = int(np.argmax(row))
    return order


def _block_indices(order: np.ndarray, block_size: int) -> list[np.ndarray]:
    return [order[i : i + block_size] for i in range(0, len(order), block_size)]


def _block_perm_draw(blocks: list[np.ndarray]) -> Callable[[np.random.Generator], np.ndarray]:
    n = sum(len(b) for b in blocks)

    def draw(rng: np.random.Generator) -> np.ndarray:
        out = np.empty(n, dtype=np.int64)
        for b in blocks:
            out[b] = b[rng.permutation(len(b))]
        return out

    return draw


def conditional_from_grams(
    K_u: np.ndarray,
    K_v: np.ndarray,
    K_w: np.ndarray,
    alpha: float,
    n_perm: int,
    rng_seed: int,
    ridge: float = 1e-3,
    block_size: int = 3,
    early_stop: bool = False,
) -> TestResult:
    """Conditional test: residualized HSIC with W-restricted permutations.

    Both grams are residualized on W by kernel ridge smoothing; the statistic
    is the alignment of the residual grams normalized by the first column's
    own residual energy, so permuted copies that decouple from W do not
    inflate the null. The null permutes the first column only within blocks of
    rows with similar W, where exchangeability approximately holds.
    """
    n = K_u.shape[0]
    if float(K_w.min()) > 1.0 - 1e-12:
        res = hsic_from_grams(K_u, K_v, alpha, n_perm, rng_seed, early_stop=early_stop)
        res.fallback_marginal = True
        return res
    lam = ridge * n
    R = lam * np.linalg.inv(K_w + lam * np.eye(n))
    H = np.eye(n) - 1.0 / n
    S = R @ H @ R
    M = S @ K_v @ S
    D = S @ H @ S
    order = _greedy_similarity_order(K_w)
    blocks = _block_indices(order, block_size)
    draw = _block_perm_draw(blocks)
    rng = np.random.default_rng(rng_seed)
    h = _early_stop_threshold(alpha, n_perm) if early_stop else None
    p, used, statistic = _perm_pvalue(
        K_u, M, n_perm, rng, draw, early_stop_h=h, denom=D
    )
    return TestResult(
        p_value=p,
        statistic=statistic,
        alpha=alpha,
        n_permutations=used,
        decision_dependent=p <= alpha,
    )


def conditional_test(
    u_col: Sequence,
    v_col: Sequence,
    w_cols: Sequence[Sequence],
    alpha: float = 0.05,
    n_perm: int = 500,
    rng_seed: int = 0,
    median_cap: int = 1000,
    ridge: float = 1e-3,
    block_size: int = 3,
    early_stop: bool = False,
) -> TestResult:
    """Kernel conditional-independence permutation test.

    With no conditioning columns this is exactly the marginal test. A
    degenerate conditioning set (all rows identical) falls back to the
    marginal test and flags the result.
    """
    if not w_cols:
        return marginal_test(
            u_col, v_col, alpha=alpha, n_perm=n_perm, rng_seed=rng_seed,
            median_cap=median_cap, early_stop=early_stop,
        )
    if len(u_col) < 20:
        raise ValueError(f"need at least 20 rows, got {len(u_col)}")
    K_u = rbf_gram(u_col, median_cap=median_cap).matrix
    K_v = rbf_gram(v_col, median_cap=median_cap).matrix
    K_w = np.ones((len(u_col), len(u_col)), dtype=np.float64)
    for col in w_cols:
        cells = _as_cells(col)
        K_w *= multiset_gram(cells, median_cap=median_cap, allow_empty=True).matrix
    return conditional_from_grams(
        K_u, K_v, K_w, alpha, n_perm, rng_seed,
        ridge=ridge, block_size=block_size, early_stop=early_stop,
    )


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def _mode(values: Cell) -> float:
    counts = Counter(values)
    best = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))
    return best[0]


AGGREGATORS: dict[str, Callable[[Cell], float]] = {
    "average": lambda c: sum(c) / len(c),
    "median": lambda c: float(np.median(c)),
    "mode": _mode,
}


def aggregate_column(col: Sequence[Cell], f: str | Callable[[Cell], float] = "average") -> list[float]:
    """Replace each multiset cell by a scalar summary. Never used on
    conditioning columns by callers."""
    fn = AGGREGATORS[f] if isinstance(f, str) else f
    out = []
    for cell in col:
        if len(cell) == 0:
            raise ValueError("cannot aggregate an empty cell")
        out.append(float(fn(cell)))
    return out


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@dataclass
class CITestConfig:
    alpha: float = 0.05
    n_perm: int = 500
    aggregator: str = "average"
    median_cap: int = 1000

    def save(self, path: str | Path) -> None:
        lines = [
            f"alpha = {self.alpha}",
            f"n_perm = {self.n_perm}",
            f"aggregator = {self.aggregator}",
            f"median_cap = {self.median_cap}",
        ]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CITestConfig":
        cfg = cls()
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "alpha":
                cfg.alpha = float(value)
            elif key == "n_perm":
                cfg.n_perm = int(value)
            elif key == "aggregator":
                cfg.aggregator = value
            elif key == "median_cap":
                cfg.median_cap = int(value)
        return cfg
