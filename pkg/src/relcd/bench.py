"""Experiment harness: model suites, learner runs, metrics, result tables.

Generates (schema, model, skeleton, data) batches under the synthetic
protocol, runs learner variants against them, and scores structure recovery:
adjacency precision/recall against the generating model (direction-blind) and
orientation precision/recall against the maximally oriented ground truth.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .datagen import RCMGenConfig, generate_data, parametrize, random_rcm
from .rcm import (
    RCM,
    PRCM,
    Adjacency,
    default_oracle_skeletons,
    true_cprcm,
)
from .rpcd import (
    LearnerConfig,
    _cut_verdict,
    _build_ne,
    _nc_key,
    _rbo_stage,
    _non_rbo_stage,
    phase1,
    phase2_cut_baseline,
    phase2_robust,
    rpcd_run,
)
from .rcm import enumerate_cuts
from .schema import Schema, random_schema
from .skeleton import Skeleton, random_skeleton
from .testers import KernelRCITester, stable_seed


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class Metrics:
    precision: float
    recall: float
    f_measure: float
    averaging: str  # micro | macro
    target: str  # undirected_deps | directed_vs_cprcm
    degenerate: bool = False  # a denominator was 0-over-0


def _f_measure(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if (p + r) > 0 else 0.0


@dataclass
class EvalCounts:
    """Raw per-model counts feeding micro and macro averages."""

    adj_tp: int
    adj_fp: int
    adj_fn: int
    dir_correct: int
    dir_claimed: int
    dir_possible: int

    def phase1_pr(self) -> tuple[float, float]:
        p = self.adj_tp / (self.adj_tp + self.adj_fp) if (self.adj_tp + self.adj_fp) else 0.0
        r = self.adj_tp / (self.adj_tp + self.adj_fn) if (self.adj_tp + self.adj_fn) else 0.0
        return p, r

    def phase2_pr(self) -> tuple[float, float]:
        p = self.dir_correct / self.dir_claimed if self.dir_claimed else 0.0
        r = self.dir_correct / self.dir_possible if self.dir_possible else 0.0
        return p, r


def eval_counts(learned: PRCM, truth: RCM, truth_cprcm: PRCM) -> EvalCounts:
    if learned.schema != truth.schema:
        raise ValueError("schema mismatch between learned model and truth")
    learned_adj = learned.adjacencies
    truth_adj = frozenset(Adjacency.of(d) for d in truth.dependencies)
    tp = len(learned_adj & truth_adj)
    correct = len(learned.directed & truth.dependencies)
    return EvalCounts(
        adj_tp=tp,
        adj_fp=len(learned_adj - truth_adj),
        adj_fn=len(truth_adj - learned_adj),
        dir_correct=correct,
        dir_claimed=len(learned.directed),
        dir_possible=len(truth_cprcm.directed),
    )


def evaluate(learned: PRCM, truth: RCM, truth_cprcm: PRCM) -> dict[str, Metrics]:
    """Single-model metrics pair (micro and macro coincide for one model)."""
    c = eval_counts(learned, truth, truth_cprcm)
    p1, r1 = c.phase1_pr()
    p2, r2 = c.phase2_pr()
    return {
        "phase1": Metrics(p1, r1, _f_measure(p1, r1), "macro", "undirected_deps"),
        "phase2": Metrics(
            p2,
            r2,
            _f_measure(p2, r2),
            "macro",
            "directed_vs_cprcm",
            degenerate=(c.dir_claimed == 0 or c.dir_possible == 0),
        ),
    }


def aggregate_metrics(counts: Sequence[EvalCounts], target: str) -> dict[str, Metrics]:
    """Micro (pooled counts) and macro (averaged per-model scores) metrics."""
    if target == "undirected_deps":
        pooled_tp = sum(c.adj_tp for c in counts)
        pooled_fp = sum(c.adj_fp for c in counts)
        pooled_fn = sum(c.adj_fn for c in counts)
        micro_p = pooled_tp / (pooled_tp + pooled_fp) if pooled_tp + pooled_fp else 0.0
        micro_r = pooled_tp / (pooled_tp + pooled_fn) if pooled_tp + pooled_fn else 0.0
        per_model = [c.phase1_pr() for c in counts]
    else:
        pooled_c = sum(c.dir_correct for c in counts)
        pooled_cl = sum(c.dir_claimed for c in counts)
        pooled_po = sum(c.dir_possible for c in counts)
        micro_p = pooled_c / pooled_cl if pooled_cl else 0.0
        micro_r = pooled_c / pooled_po if pooled_po else 0.0
        per_model = [c.phase2_pr() for c in counts]
    macro_p = sum(p for p, _ in per_model) / len(per_model) if per_model else 0.0
    macro_r = sum(r for _, r in per_model) / len(per_model) if per_model else 0.0
    return {
        "micro": Metrics(micro_p, micro_r, _f_measure(micro_p, micro_r), "micro", target),
        "macro": Metrics(macro_p, macro_r, _f_measure(macro_p, macro_r), "macro", target),
    }


# ---------------------------------------------------------------------------
# Model suites
# ---------------------------------------------------------------------------


@dataclass
class BenchModel:
    index: int
    schema: Schema
    model: RCM
    h: int
    cprcm: PRCM
    oracle_skeletons: list[Skeleton]


def make_bench_model(
    index: int,
    master_seed: int,
    oracle_count: int = 2,
    oracle_base: int = 40,
    max_cond_size: int = 3,
) -> BenchModel:
    """One synthetic model: random schema, random RCM (rejecting unorientable
    equivalence classes via the oracle), and its ground-truth orientation."""
    seed = stable_seed(master_seed, "bench-model", index)
    schema = random_schema(seed)
    skels = default_oracle_skeletons(
        schema, count=oracle_count, base_size=oracle_base,
        seed=stable_seed(seed, "oracle-skel"),
    )
    cache: dict[frozenset, PRCM] = {}

    def orientable(model: RCM) -> bool:
        cpr = true_cprcm(model, skeletons=skels, max_cond_size=max_cond_size)
        cache[model.dependencies] = cpr
        return not cpr.degenerate()

    model, h = random_rcm(schema, seed, orientable_check=orientable)
    return BenchModel(
        index=index,
        schema=schema,
        model=model,
        h=h,
        cprcm=cache[model.dependencies],
        oracle_skeletons=skels,
    )


def model_data(
    bundle: BenchModel, size: int, master_seed: int
) -> tuple[Skeleton, "AttrData"]:
    sk = random_skeleton(
        bundle.schema, size, stable_seed(master_seed, "skel", bundle.index, size)
    )
    params = parametrize(
        bundle.model, stable_seed(master_seed, "params", bundle.index)
    )
    data = generate_data(
        bundle.model, params, sk, stable_seed(master_seed, "data", bundle.index, size)
    )
    return sk, data


# ---------------------------------------------------------------------------
# Variant runs
# ---------------------------------------------------------------------------


@dataclass
class Variant:
    name: str
    mode: str = "robust"  # robust | baseline_cut
    aggregation: bool = True
    order_independent: bool = True
    detection: bool = True


DEFAULT_VARIANTS = (
    Variant("robust"),
    Variant("baseline_cut", mode="baseline_cut", aggregation=False,
            order_independent=False, detection=False),
)


def learner_config(bundle: BenchModel, variant: Variant, base: LearnerConfig) -> LearnerConfig:
    return replace(
        base,
        h=bundle.h,
        mode=variant.mode,
        aggregation=variant.aggregation,
        order_independent=variant.order_independent,
        detection=variant.detection,
    )


def run_variant(
    bundle: BenchModel,
    size: int,
    variant: Variant,
    base_cfg: LearnerConfig,
    master_seed: int,
    tester: KernelRCITester | None = None,
) -> tuple[EvalCounts, "RunResult"]:
    sk, data = model_data(bundle, size, master_seed)
    cfg = learner_config(bundle, variant, base_cfg)
    cfg = replace(cfg, rng_seed=stable_seed(master_seed, "run", bundle.index, size))
    result = rpcd_run(bundle.schema, sk, data, cfg, tester=tester)
    counts = eval_counts(result.prcm, bundle.model, bundle.cprcm)
    return counts, result


# ---------------------------------------------------------------------------
# Orientation-test accuracy (verdict level, on the true structure)
# ---------------------------------------------------------------------------


def _truth_collider(model: RCM, triple: tuple[str, str, str]) -> bool:
    edges = model.attr_edges
    x, y, z = triple
    if x == z:
        return (x, y) in edges
    return (x, y) in edges and (z, y) in edges


@dataclass
class VerdictRow:
    triple: tuple[str, str, str]
    family: str
    verdict: str  # collider | non_collider | weak
    truth_collider: bool


def phase2_verdict_rows(
    bundle: BenchModel,
    size: int,
    master_seed: int,
    base_cfg: LearnerConfig,
    family: str,
    detection: bool = False,
    tester: KernelRCITester | None = None,
    sk_data: tuple | None = None,
) -> list[VerdictRow]:
    """Verdict-level orientation accuracy rows, on the true adjacency set.

    ``family``: ``cut_rbo`` and ``cut_all`` run the unshielded-triple tests
    (restricted to same-attribute ends or not); ``rbo`` runs split+pair tests;
    ``rbo_nonrbo`` adds the three-attribute tests. One verdict per context,
    from the first smallest separating set.
    """
    if sk_data is None:
        sk, data = model_data(bundle, size, master_seed)
    else:
        sk, data = sk_data
    cfg = learner_config(bundle, Variant("x", detection=detection), base_cfg)
    cfg = replace(
        cfg,
        detection=detection,
        rng_seed=stable_seed(master_seed, "p2acc", bundle.index, size, family),
    )
    tester = tester or KernelRCITester(
        sk, data, alpha=cfg.alpha, n_perm=cfg.n_perm, rng_seed=cfg.rng_seed,
        median_cap=cfg.median_cap, ridge=cfg.ridge, block_size=cfg.block_size,
        row_cap=cfg.row_cap, early_stop=cfg.early_stop, aggregator=cfg.aggregator,
    )
    adjacencies = frozenset(Adjacency.of(d) for d in bundle.model.dependencies)
    rows: list[VerdictRow] = []
    if family in ("cut_rbo", "cut_all"):
        ne = _build_ne(adjacencies)
        cuts = enumerate_cuts(adjacencies, sk, 2 * cfg.h, per_triple_cap=cfg.cut_cap)
        for cut in cuts:
            x, y, z = cut.attr_triple
            if family == "cut_rbo" and x != z:
                continue
            got = _cut_verdict(tester, bundle.schema, cut, ne, cfg)
            if got is None:
                continue
            kind, _ = got
            verdict = "collider" if kind == "collider" else "non_collider"
            rows.append(
                VerdictRow(_nc_key(x, y, z), family, verdict,
                           _truth_collider(bundle.model, (x, y, z)))
            )
    else:
        evidence: dict = {}
        edge_decision, weak_pairs = _rbo_stage(
            bundle.schema, sk, data, tester, adjacencies, cfg, evidence,
            first_only=True,
        )
        if family == "rbo_nonrbo":
            _non_rbo_stage(
                bundle.schema, sk, data, tester, adjacencies, cfg,
                edge_decision, weak_pairs, evidence, first_only=True,
            )
        for triple, ev in sorted(evidence.items()):
            for v in ev.verdicts:
                rows.append(
                    VerdictRow(triple, v.provenance, v.kind,
                               _truth_collider(bundle.model, triple))
                )
    return rows


def verdict_accuracy(rows: Iterable[VerdictRow]) -> dict[str, float]:
    decided = [r for r in rows if r.verdict in ("collider", "non_collider")]
    if not decided:
        return {"overall": 0.0, "collider": 0.0, "non_collider": 0.0, "n": 0}
    correct = [r for r in decided if (r.verdict == "collider") == r.truth_collider]
    col = [r for r in decided if r.truth_collider]
    ncol = [r for r in decided if not r.truth_collider]
    col_ok = sum(1 for r in col if r.verdict == "collider")
    ncol_ok = sum(1 for r in ncol if r.verdict == "non_collider")
    return {
        "overall": len(correct) / len(decided),
        "collider": col_ok / len(col) if col else 0.0,
        "non_collider": ncol_ok / len(ncol) if ncol else 0.0,
        "n": len(decided),
    }


# ---------------------------------------------------------------------------
# Batch runner
# ---------------------------------------------------------------------------


@dataclass
class BenchConfig:
    n_models: int = 20
    sizes: tuple[int, ...] = (200, 500)
    variants: tuple[Variant, ...] = DEFAULT_VARIANTS
    master_seed: int = 0
    jobs: int = 1
    n_perm: int = 200
    alpha: float = 0.05
    max_cond_size: int = 3
    out_dir: str = "bench_out"

    def save(self, path: str | Path) -> None:
        lines = [
            f"n_models = {self.n_models}",
            f"sizes = {','.join(str(s) for s in self.sizes)}",
            f"variants = {','.join(v.name for v in self.variants)}",
            f"master_seed = {self.master_seed}",
            f"jobs = {self.jobs}",
            f"n_perm = {self.n_perm}",
            f"alpha = {self.alpha}",
            f"max_cond_size = {self.max_cond_size}",
        ]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "BenchConfig":
        cfg = cls()
        names: list[str] | None = None
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key == "n_models":
                cfg.n_models = int(value)
            elif key == "sizes":
                cfg.sizes = tuple(int(x) for x in value.split(","))
            elif key == "variants":
                names = [x.strip() for x in value.split(",")]
            elif key == "master_seed":
                cfg.master_seed = int(value)
            elif key == "jobs":
                cfg.jobs = int(value)
            elif key == "n_perm":
                cfg.n_perm = int(value)
            elif key == "alpha":
                cfg.alpha = float(value)
            elif key == "max_cond_size":
                cfg.max_cond_size = int(value)
        if names is not None:
            known = {v.name: v for v in DEFAULT_VARIANTS}
            cfg.variants = tuple(known[n] for n in names if n in known)
        return cfg


def _bench_cell(args: tuple) -> dict:
    bench_cfg, index, size, variant = args
    bundle = make_bench_model(index, bench_cfg.master_seed,
                              max_cond_size=bench_cfg.max_cond_size)
    base = LearnerConfig(
        h=bundle.h,
        alpha=bench_cfg.alpha,
        n_perm=bench_cfg.n_perm,
        max_cond_size=bench_cfg.max_cond_size,
    )
    counts, _ = run_variant(bundle, size, variant, base, bench_cfg.master_seed)
    return {
        "variant": variant.name,
        "size": size,
        "seed": index,
        "adj_tp": counts.adj_tp,
        "adj_fp": counts.adj_fp,
        "adj_fn": counts.adj_fn,
        "dir_correct": counts.dir_correct,
        "dir_claimed": counts.dir_claimed,
        "dir_possible": counts.dir_possible,
    }


RAW_FIELDS = [
    "variant", "size", "seed", "adj_tp", "adj_fp", "adj_fn",
    "dir_correct", "dir_claimed", "dir_possible",
]


def run_benchmark(cfg: BenchConfig, log: Callable[[str], None] = print) -> Path:
    """Run the batch, persist raw per-model rows, and emit aggregate tables.

    Raw rows are keyed by (variant, size, seed); rerunning with the same
    config resumes from whatever rows already exist on disk.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raw_path = out / "results_raw.csv"
    done: dict[tuple, dict] = {}
    if raw_path.exists():
        with open(raw_path, newline="") as fh:
            for row in csv.DictReader(fh):
                done[(row["variant"], int(row["size"]), int(row["seed"]))] = row
    jobs = []
    for index in range(cfg.n_models):
        for size in cfg.sizes:
            for variant in cfg.variants:
                if (variant.name, size, index) not in done:
                    jobs.append((cfg, index, size, variant))
    if jobs:
        if cfg.jobs > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                rows = list(pool.map(_bench_cell, jobs))
        else:
            rows = []
            for job in jobs:
                row = _bench_cell(job)
                log(f"done: {row['variant']} size={row['size']} model={row['seed']}")
                rows.append(row)
        for row in rows:
            done[(row["variant"], int(row["size"]), int(row["seed"]))] = {
                k: str(v) for k, v in row.items()
            }
    tmp = raw_path.with_suffix(".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RAW_FIELDS)
        writer.writeheader()
        for key in sorted(done):
            writer.writerow(done[key])
    os.replace(tmp, raw_path)

    results_path = out / "results.csv"
    lines: list[dict] = []
    for variant in cfg.variants:
        for size in cfg.sizes:
            counts = [
                EvalCounts(
                    adj_tp=int(r["adj_tp"]), adj_fp=int(r["adj_fp"]),
                    adj_fn=int(r["adj_fn"]), dir_correct=int(r["dir_correct"]),
                    dir_claimed=int(r["dir_claimed"]),
                    dir_possible=int(r["dir_possible"]),
                )
                for (v, s, _), r in sorted(done.items())
                if v == variant.name and s == size
            ]
            if not counts:
                continue
            for target in ("undirected_deps", "directed_vs_cprcm"):
                for avg, m in aggregate_metrics(counts, target).items():
                    lines.append(
                        {
                            "variant": variant.name,
                            "size": size,
                            "seed": cfg.master_seed,
                            "target": target,
                            "averaging": avg,
                            "precision": f"{m.precision:.6f}",
                            "recall": f"{m.recall:.6f}",
                            "f": f"{m.f_measure:.6f}",
                        }
                    )
    with open(results_path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["variant", "size", "seed", "target", "averaging",
                        "precision", "recall", "f"],
        )
        writer.writeheader()
        writer.writerows(lines)
    table = render_table(lines)
    (out / "results.txt").write_text(table)
    log(table)
    return results_path


def render_table(lines: Sequence[dict]) -> str:
    if not lines:
        return "(no results)\n"
    header = f"{'variant':<14} {'size':>5} {'target':<20} {'avg':<6} {'prec':>7} {'recall':>7} {'f':>7}"
    rows = [header, "-" * len(header)]
    for row in lines:
        rows.append(
            f"{row['variant']:<14} {row['size']:>5} {row['target']:<20} "
            f"{row['averaging']:<6} {float(row['precision']):>7.3f} "
            f"{float(row['recall']):>7.3f} {float(row['f']):>7.3f}"
        )
    return "\n".join(rows) + "\n"
