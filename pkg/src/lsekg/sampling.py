"""Negative sampling by head/tail corruption.

Exactly one side of a positive triple is replaced with a uniformly drawn
entity. In Bernoulli mode the corrupted side is chosen with
P(head) = tph / (tph + hpt) so that many-to-one relations are corrupted on
the side less likely to produce a false negative. Optional screening against
the training filter index redraws candidates that are known-true, capped at
100 redraws per negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lsekg import ConsistencyError
from lsekg.data import FilterIndex, RelationStats, Triple
from lsekg.seeding import substream

REDRAW_CAP = 100


@dataclass
class SamplerConfig:
    mode: str = "bernoulli"  # "bernoulli" | "uniform"
    negatives_per_positive: int = 1
    filter_false_negatives: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("bernoulli", "uniform"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")


def corruption_side_probability(stats: RelationStats | None,
                                mode: str) -> float:
    """Probability of replacing the head entity of a triple."""
    if mode == "uniform":
        return 0.5
    if stats is None:
        raise ConsistencyError(
            "bernoulli sampling needs tph/hpt stats for the relation")
    return stats.tph / (stats.tph + stats.hpt)


class NegativeSampler:
    """Stateful corruption sampler; one instance per worker, not thread-safe.

    `redraw_cap_hits` counts negatives accepted after exhausting the
    false-negative redraw budget.
    """

    def __init__(self, n_e: int, config: SamplerConfig,
                 stats: dict[int, RelationStats] | None = None,
                 filter_index: FilterIndex | None = None,
                 worker: int = 0):
        self.n_e = n_e
        self.config = config
        self.filter_index = filter_index if config.filter_false_negatives else None
        self.rng = substream(config.seed, "sampling", worker)
        self.redraw_cap_hits = 0

        if config.mode == "bernoulli":
            if stats is None:
                raise ConsistencyError(
                    "bernoulli sampling requires relation stats")
            self._p_head = {}
            for r, rs in stats.items():
                self._p_head[r] = corruption_side_probability(rs, "bernoulli")
        else:
            self._p_head = None

    def _head_probs(self, relations: np.ndarray) -> np.ndarray:
        if self._p_head is None:
            return np.full(relations.shape, 0.5)
        try:
            return np.array([self._p_head[int(r)] for r in relations.ravel()]
                            ).reshape(relations.shape)
        except KeyError as exc:
            raise ConsistencyError(
                f"no tph/hpt stats for relation {exc.args[0]}") from exc

    def corrupt_batch(self, positives: np.ndarray) -> np.ndarray:
        """Corrupt a (B, 3) array of positives into (B, k, 3) negatives.

        The corruption side is drawn independently per negative; draws for
        distinct positives are independent.
        """
        pos = np.asarray(positives)
        b = pos.shape[0]
        k = self.config.negatives_per_positive
        neg = np.repeat(pos[:, None, :], k, axis=1).copy()

        p_head = self._head_probs(np.repeat(pos[:, 1][:, None], k, axis=1))
        replace_head = self.rng.random((b, k)) < p_head
        candidates = self.rng.integers(0, self.n_e, size=(b, k))
        neg[:, :, 0] = np.where(replace_head, candidates, neg[:, :, 0])
        neg[:, :, 2] = np.where(~replace_head, candidates, neg[:, :, 2])

        if self.filter_index is not None:
            self._screen_false_negatives(neg, replace_head)
        return neg

    def _screen_false_negatives(self, neg: np.ndarray,
                                replace_head: np.ndarray) -> None:
        index = self.filter_index
        for i in range(neg.shape[0]):
            for j in range(neg.shape[1]):
                h, r, t = (int(x) for x in neg[i, j])
                on_head = bool(replace_head[i, j])
                truths = (index.true_heads(r, t) if on_head
                          else index.true_tails(h, r))
                redraws = 0
                value = h if on_head else t
                while value in truths:
                    if redraws >= REDRAW_CAP:
                        self.redraw_cap_hits += 1
                        break
                    value = int(self.rng.integers(0, self.n_e))
                    redraws += 1
                neg[i, j, 0 if on_head else 2] = value

    def corrupt(self, positive: Triple) -> Triple:
        """Single corrupted negative for one positive triple."""
        saved_k = self.config.negatives_per_positive
        self.config.negatives_per_positive = 1
        try:
            out = self.corrupt_batch(np.array([positive]))[0, 0]
        finally:
            self.config.negatives_per_positive = saved_k
        return Triple(*(int(x) for x in out))

    def generate_batch(self, positives: list[Triple]
                       ) -> list[tuple[Triple, list[Triple]]]:
        """Per-positive negatives as (positive, [k negatives]) pairs."""
        if not positives:
            return []
        neg = self.corrupt_batch(np.array(positives))
        return [
            (pos, [Triple(*(int(x) for x in neg[i, j]))
                   for j in range(neg.shape[1])])
            for i, pos in enumerate(positives)
        ]
