"""Link-prediction evaluation: raw and filtered entity ranking, MRR / MR /
Hits@{1,3,10} aggregated over head- and tail-replacement queries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lsekg import ConsistencyError
from lsekg.data import FilterIndex, Triple, TripleSet
from lsekg.models import Parameters, all_head_energies, all_tail_energies

TIE_POLICIES = ("optimistic", "pessimistic", "mean")


def rank_of_truth(energies: np.ndarray, truth: int,
                  mask=None, tie_policy: str = "mean") -> float:
    """Rank of `truth` in an ascending-energy ordering of the candidates.

    Candidates in `mask` (other known-true entities, filtered setting) are
    excluded. Ties with the truth contribute 0 (optimistic), all
    (pessimistic), or half (mean, the default) to the rank.
    """
    if tie_policy not in TIE_POLICIES:
        raise ValueError(f"unknown tie policy {tie_policy!r}")
    energies = np.asarray(energies)
    if not 0 <= truth < energies.shape[0]:
        raise ConsistencyError(f"truth id {truth} out of range")
    keep = np.ones(energies.shape[0], dtype=bool)
    if mask is not None:
        keep[list(mask)] = False
        if not keep[truth]:
            raise ConsistencyError("truth must not be masked")
    keep[truth] = False
    e_truth = energies[truth]
    others = energies[keep]
    better = int((others < e_truth).sum())
    equal = int((others == e_truth).sum())
    if tie_policy == "optimistic":
        return 1.0 + better
    if tie_policy == "pessimistic":
        return 1.0 + better + equal
    return 1.0 + better + equal / 2.0


@dataclass(frozen=True)
class RankRecord:
    triple: Triple
    side: str  # "head" | "tail"
    raw_rank: float
    filtered_rank: float


@dataclass(frozen=True)
class MetricBlock:
    n: int
    mrr: float
    mr: float
    hits1: float
    hits3: float
    hits10: float

    @staticmethod
    def from_ranks(ranks: np.ndarray) -> "MetricBlock":
        return MetricBlock(
            n=len(ranks),
            mrr=float((1.0 / ranks).mean()),
            mr=float(ranks.mean()),
            hits1=float((ranks <= 1).mean()),
            hits3=float((ranks <= 3).mean()),
            hits10=float((ranks <= 10).mean()),
        )


@dataclass(frozen=True)
class Metrics:
    n_queries: int
    tie_policy: str
    raw: MetricBlock | None = None
    filtered: MetricBlock | None = None
    raw_by_side: dict = field(default_factory=dict)
    filtered_by_side: dict = field(default_factory=dict)


def aggregate(records: list[RankRecord], tie_policy: str = "mean") -> Metrics:
    """Aggregate rank records into overall and per-side metric blocks."""
    if not records:
        return Metrics(n_queries=0, tie_policy=tie_policy)
    raw = np.array([r.raw_rank for r in records])
    filt = np.array([r.filtered_rank for r in records])
    sides = np.array([r.side for r in records])
    raw_by_side = {}
    filtered_by_side = {}
    for side in ("head", "tail"):
        pick = sides == side
        if pick.any():
            raw_by_side[side] = MetricBlock.from_ranks(raw[pick])
            filtered_by_side[side] = MetricBlock.from_ranks(filt[pick])
    return Metrics(
        n_queries=len(records), tie_policy=tie_policy,
        raw=MetricBlock.from_ranks(raw),
        filtered=MetricBlock.from_ranks(filt),
        raw_by_side=raw_by_side, filtered_by_side=filtered_by_side,
    )


def evaluate(params: Parameters, eval_set: TripleSet,
             filter_index: FilterIndex, p: int = 1,
             tie_policy: str = "mean") -> tuple[Metrics, list[RankRecord]]:
    """Rank the true entity of every triple under head and tail replacement.

    Raw ranks consider all entities; filtered ranks exclude the other
    known-true entities recorded in `filter_index`.
    """
    records: list[RankRecord] = []
    n_e = params.n_e
    for triple in eval_set:
        h, r, t = triple
        if h >= n_e or t >= n_e:
            raise ConsistencyError(
                f"triple {triple} outside the model vocabulary (n_e={n_e})")
        tail_e = all_tail_energies(params, h, r, p)
        mask = filter_index.true_tails(h, r) - {t}
        records.append(RankRecord(
            triple=triple, side="tail",
            raw_rank=rank_of_truth(tail_e, t, None, tie_policy),
            filtered_rank=rank_of_truth(tail_e, t, mask, tie_policy)))
        head_e = all_head_energies(params, r, t, p)
        mask = filter_index.true_heads(r, t) - {h}
        records.append(RankRecord(
            triple=triple, side="head",
            raw_rank=rank_of_truth(head_e, h, None, tie_policy),
            filtered_rank=rank_of_truth(head_e, h, mask, tie_policy)))
    return aggregate(records, tie_policy), records


def _block_lines(prefix: str, block: MetricBlock) -> list[str]:
    return [
        f"{prefix}.mrr={block.mrr:.6f}",
        f"{prefix}.mr={block.mr:.4f}",
        f"{prefix}.hits1={block.hits1:.6f}",
        f"{prefix}.hits3={block.hits3:.6f}",
        f"{prefix}.hits10={block.hits10:.6f}",
        f"{prefix}.n={block.n}",
    ]


def report(metrics: Metrics, format: str = "text") -> str:
    """Render metrics as a human-readable table or as key=value records."""
    if format == "structured":
        lines = [f"n={metrics.n_queries}",
                 f"tie_policy={metrics.tie_policy}"]
        for setting, block, by_side in (
                ("raw", metrics.raw, metrics.raw_by_side),
                ("filtered", metrics.filtered, metrics.filtered_by_side)):
            if block is None:
                continue
            lines += _block_lines(setting, block)
            for side, sblock in sorted(by_side.items()):
                lines += _block_lines(f"{setting}.{side}", sblock)
        return "\n".join(lines) + "\n"

    if metrics.n_queries == 0:
        return ("link prediction: no queries (empty evaluation set)\n"
                f"tie policy: {metrics.tie_policy}\n")
    lines = [f"link prediction over {metrics.n_queries} queries "
             f"(tie policy: {metrics.tie_policy})",
             f"{'':>16} {'MRR':>8} {'MR':>9} {'Hits@1':>8} "
             f"{'Hits@3':>8} {'Hits@10':>8}"]
    for setting, block, by_side in (
            ("raw", metrics.raw, metrics.raw_by_side),
            ("filtered", metrics.filtered, metrics.filtered_by_side)):
        lines.append(f"{setting:>16} {block.mrr:8.3f} {block.mr:9.2f} "
                     f"{block.hits1:8.3f} {block.hits3:8.3f} "
                     f"{block.hits10:8.3f}")
        for side, sblock in sorted(by_side.items()):
            lines.append(f"{setting + '/' + side:>16} {sblock.mrr:8.3f} "
                         f"{sblock.mr:9.2f} {sblock.hits1:8.3f} "
                         f"{sblock.hits3:8.3f} {sblock.hits10:8.3f}")
    return "\n".join(lines) + "\n"


def parse_structured(text: str) -> dict[str, float | int | str]:
    """Parse a structured report back into a flat key -> value mapping."""
    out: dict[str, float | int | str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        if key in ("tie_policy",):
            out[key] = value
        elif key == "n" or key.endswith(".n"):
            out[key] = int(value)
        else:
            out[key] = float(value)
    return out
