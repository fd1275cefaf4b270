"""Sparse-SGD training with margin-ranking or smoothed cross-entropy loss,
validation-based early stopping, and binary checkpoints.

Only the entity rows and relation parameters touched by a batch are updated;
every other row is left bitwise unchanged. Training is single-threaded and
fully deterministic given the config seed.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from lsekg import ConsistencyError, InputError, LsekgError
from lsekg.data import (Dataset, Vocabulary, build_filter_index,
                        compute_bernoulli_stats)
from lsekg.evaluation import evaluate
from lsekg.models import ModelKind, Parameters, init_params
from lsekg.sampling import NegativeSampler, SamplerConfig
from lsekg.seeding import substream

PROB_CLAMP = 1e-7
CHECKPOINT_MAGIC = b"LSEKGE1\n"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    loss: str = "margin"  # "margin" | "ce"
    margin: float = 6.0
    p: int = 1
    learning_rate: float = 5e-4
    batch_size: int = 512
    dim: int = 200
    max_steps: int = 100_000
    eval_every: int = 1000
    patience: int = 5
    seed: int = 0
    # per-step unit-norm projection of touched entity rows (TransE only);
    # off by default since norm constraints are dropped here
    normalize_entities: bool = False
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.loss not in ("margin", "ce"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.p not in (1, 2):
            raise ValueError("norm p must be 1 or 2")
        if self.margin <= 0 or self.learning_rate <= 0:
            raise ValueError("margin and learning rate must be positive")

    @property
    def negatives_per_positive(self) -> int:
        return self.sampler.negatives_per_positive

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        d["sampler"] = SamplerConfig(**d.get("sampler", {}))
        return TrainConfig(**d)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def margin_loss(e_pos, e_neg, gamma: float):
    """Hinge on the positive/negative energy gap: max(0, gamma + e+ - e-)."""
    return np.maximum(0.0, gamma + np.asarray(e_pos) - np.asarray(e_neg))


def triple_probability(e, gamma: float):
    """sigma(gamma - e): probability that a triple with energy e holds."""
    x = gamma - np.asarray(e, dtype=float)
    # evaluate the saturating branch to keep exp() from overflowing
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def _clamped_log(p):
    return np.log(np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP))


def ce_loss(e_pos, e_negs, gamma: float, k: int | None = None) -> float:
    """Cross entropy with the negative log-terms down-weighted by 1/k."""
    e_negs = np.asarray(e_negs, dtype=float)
    if k is None:
        k = len(e_negs)
    pos_term = -_clamped_log(triple_probability(e_pos, gamma))
    neg_term = -_clamped_log(1.0 - triple_probability(e_negs, gamma)).sum() / k
    return float(pos_term + neg_term)


# ---------------------------------------------------------------------------
# batched energies and gradient scatter
# ---------------------------------------------------------------------------

def _batch_energies(params: Parameters, triples: np.ndarray, p: int):
    """Energies for an (N, 3) id array, plus a cache for the backward pass."""
    heads, rels, tails = triples[:, 0], triples[:, 1], triples[:, 2]
    h_rows = params.entities[heads]
    t_rows = params.entities[tails]
    kind = params.kind

    if kind is ModelKind.DISTMULT:
        r_rows = params.relation_vectors[rels]
        energies = -(h_rows * r_rows * t_rows).sum(axis=1)
        return energies, (h_rows, t_rows, r_rows, None)

    if kind is ModelKind.LSE:
        mapped = np.empty_like(h_rows)
        for r in np.unique(rels):
            sel = rels == r
            mapped[sel] = h_rows[sel] @ params.relation_matrices[r]
    elif kind is ModelKind.LSE_D:
        r_rows = params.relation_vectors[rels]
        mapped = h_rows * r_rows
    else:  # TransE
        r_rows = params.relation_vectors[rels]
        mapped = h_rows + r_rows
    residual = mapped - t_rows
    if p == 1:
        energies = np.abs(residual).sum(axis=1)
    else:
        energies = np.sqrt((residual * residual).sum(axis=1))
    r_cache = None if kind is ModelKind.LSE else r_rows
    return energies, (h_rows, t_rows, r_cache, residual)


def _batch_gradients(params: Parameters, triples: np.ndarray,
                     coeffs: np.ndarray, cache, p: int, energies: np.ndarray,
                     ) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray]]:
    """Accumulate d(loss)/d(row) for every touched entity row and relation,
    given per-triple coefficients d(loss)/d(energy)."""
    heads, rels, tails = triples[:, 0], triples[:, 1], triples[:, 2]
    h_rows, t_rows, r_rows, residual = cache
    kind = params.kind

    if kind is ModelKind.DISTMULT:
        g_head = -(r_rows * t_rows)
        g_tail = -(h_rows * r_rows)
        g_rel = -(h_rows * t_rows)
    else:
        if p == 1:
            s = np.sign(residual)
        else:
            norm = energies[:, None]
            s = np.divide(residual, norm, out=np.zeros_like(residual),
                          where=norm > 0)
        g_tail = -s
        if kind is ModelKind.LSE:
            g_head = np.empty_like(s)
            for r in np.unique(rels):
                sel = rels == r
                g_head[sel] = s[sel] @ params.relation_matrices[r].T
            g_rel = None  # handled per relation below
        elif kind is ModelKind.LSE_D:
            g_head = s * r_rows
            g_rel = s * h_rows
        else:  # TransE
            g_head = s
            g_rel = s

    c = coeffs[:, None]
    ent_ids = np.concatenate([heads, tails])
    ent_contrib = np.concatenate([c * g_head, c * g_tail])
    uniq_e, inv = np.unique(ent_ids, return_inverse=True)
    acc_e = np.zeros((len(uniq_e), params.d))
    np.add.at(acc_e, inv, ent_contrib)
    entity_grads = {int(e): acc_e[i] for i, e in enumerate(uniq_e)}

    relation_grads: dict[int, np.ndarray] = {}
    if kind is ModelKind.LSE:
        for r in np.unique(rels):
            sel = rels == r
            relation_grads[int(r)] = h_rows[sel].T @ (coeffs[sel, None]
                                                      * s[sel])
    else:
        uniq_r, inv_r = np.unique(rels, return_inverse=True)
        acc_r = np.zeros((len(uniq_r), params.d))
        np.add.at(acc_r, inv_r, c * g_rel)
        relation_grads = {int(r): acc_r[i] for i, r in enumerate(uniq_r)}
    return entity_grads, relation_grads


def sgd_step(params: Parameters, entity_grads: dict[int, np.ndarray],
             relation_grads: dict[int, np.ndarray],
             learning_rate: float) -> None:
    """Apply theta <- theta - lr * grad to exactly the listed rows."""
    for grads in (entity_grads, relation_grads):
        for g in grads.values():
            if not np.all(np.isfinite(g)):
                raise LsekgError("non-finite gradient; step aborted")
    for e, g in entity_grads.items():
        params.entities[e] -= learning_rate * g
    rel = (params.relation_matrices if params.kind.uses_matrix
           else params.relation_vectors)
    for r, g in relation_grads.items():
        rel[r] -= learning_rate * g


def _loss_coefficients(e_pos: np.ndarray, e_neg: np.ndarray,
                       config: TrainConfig
                       ) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean batch loss and d(loss)/d(energy) for positives (B,) and
    negatives (B, k); the batch loss is averaged per positive."""
    b, k = e_neg.shape
    gamma = config.margin
    if config.loss == "margin":
        hinge = margin_loss(e_pos[:, None], e_neg, gamma)
        active = hinge > 0
        loss = float(hinge.mean())
        c_pos = active.sum(axis=1) / (b * k)
        c_neg = -active.astype(float) / (b * k)
    else:
        p_pos = triple_probability(e_pos, gamma)
        p_neg = triple_probability(e_neg, gamma)
        loss = float((-_clamped_log(p_pos)
                      - _clamped_log(1.0 - p_neg).sum(axis=1) / k).mean())
        c_pos = (1.0 - p_pos) / b
        c_neg = -p_neg / (b * k)
    return loss, c_pos, c_neg


@dataclass
class Checkpoint:
    kind: ModelKind
    d: int
    n_e: int
    n_r: int
    vocabulary: Vocabulary
    params: Parameters
    config: TrainConfig
    step: int = 0
    best_valid_mrr: float | None = None
    version: int = CHECKPOINT_VERSION


def train(dataset: Dataset, kind: ModelKind, config: TrainConfig,
          log: Callable[[dict], None] | None = None) -> Checkpoint:
    """Optimize a fresh model on `dataset.train`, selecting the best
    checkpoint by filtered validation MRR.

    Runs up to `config.max_steps` minibatch steps with reshuffled epochs,
    evaluating every `eval_every` steps and stopping after `patience`
    non-improving evaluations. On divergence (non-finite loss) the last good
    parameters are returned.
    """
    kind = ModelKind(kind)
    vocab = dataset.vocabulary
    params = init_params(kind, vocab.n_e, vocab.n_r, config.dim, config.seed)

    stats = compute_bernoulli_stats(dataset.train)
    train_filter = (build_filter_index([dataset.train], ["train"])
                    if config.sampler.filter_false_negatives else None)
    sampler_config = dataclasses.replace(config.sampler, seed=config.seed)
    sampler = NegativeSampler(vocab.n_e, sampler_config, stats, train_filter)
    valid_filter = build_filter_index([dataset.train, dataset.valid],
                                      ["train", "valid"])
    shuffle_rng = substream(config.seed, "shuffle")

    train_arr = np.array(dataset.train, dtype=np.int64)
    n = len(train_arr)
    batch_size = min(config.batch_size, n) if n else 0

    def snapshot(step: int, mrr: float | None) -> Checkpoint:
        return Checkpoint(kind=kind, d=config.dim, n_e=vocab.n_e,
                          n_r=vocab.n_r, vocabulary=vocab,
                          params=params.copy(), config=config, step=step,
                          best_valid_mrr=mrr)

    best = snapshot(0, None)
    best_mrr = -np.inf
    evaluated = False
    bad_rounds = 0
    step = 0
    diverged = False

    while step < config.max_steps and n:
        order = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            if step >= config.max_steps:
                break
            pos = train_arr[order[start:start + batch_size]]
            neg = sampler.corrupt_batch(pos)
            b, k = neg.shape[:2]
            flat = np.concatenate([pos, neg.reshape(-1, 3)])
            energies, cache = _batch_energies(params, flat, config.p)
            e_pos = energies[:b]
            e_neg = energies[b:].reshape(b, k)
            loss, c_pos, c_neg = _loss_coefficients(e_pos, e_neg, config)
            if not np.isfinite(loss):
                warnings.warn(f"training diverged at step {step}; "
                              "returning last good checkpoint")
                diverged = True
                break
            coeffs = np.concatenate([c_pos, c_neg.ravel()])
            ent_g, rel_g = _batch_gradients(params, flat, coeffs, cache,
                                            config.p, energies)
            sgd_step(params, ent_g, rel_g, config.learning_rate)
            if config.normalize_entities and kind is ModelKind.TRANSE:
                rows = np.fromiter(ent_g, dtype=np.int64)
                norms = np.linalg.norm(params.entities[rows], axis=1,
                                       keepdims=True)
                params.entities[rows] /= np.maximum(norms, 1e-12)
            step += 1

            if config.eval_every and step % config.eval_every == 0:
                if dataset.valid:
                    metrics, _ = evaluate(params, dataset.valid, valid_filter,
                                          config.p)
                    mrr = metrics.filtered.mrr
                    evaluated = True
                    if mrr > best_mrr:
                        best_mrr = mrr
                        best = snapshot(step, mrr)
                        bad_rounds = 0
                    else:
                        bad_rounds += 1
                else:
                    mrr = None
                if log is not None:
                    log({"step": step, "loss": loss, "valid_mrr": mrr})
                if evaluated and bad_rounds >= config.patience:
                    return best
        if diverged:
            break

    if not evaluated:
        # params are last-good: a diverging step is never applied
        best = snapshot(step, None)
    return best


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Binary format: magic, length-prefixed JSON metadata, then the
    parameter arrays as little-endian float64, entities first."""
    meta = {
        "version": ckpt.version,
        "kind": ckpt.kind.value,
        "d": ckpt.d,
        "n_e": ckpt.n_e,
        "n_r": ckpt.n_r,
        "step": ckpt.step,
        "best_valid_mrr": ckpt.best_valid_mrr,
        "config": ckpt.config.to_dict(),
        "vocabulary": {
            "entities": list(ckpt.vocabulary.id_to_entity),
            "relations": list(ckpt.vocabulary.id_to_relation),
        },
    }
    blob = json.dumps(meta).encode("utf-8")
    params = ckpt.params
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(np.ascontiguousarray(params.entities, dtype="<f8").tobytes())
        rel = (params.relation_matrices if params.kind.uses_matrix
               else params.relation_vectors)
        f.write(np.ascontiguousarray(rel, dtype="<f8").tobytes())


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise ConsistencyError(
            f"truncated checkpoint: expected {count} bytes for {what}, "
            f"got {len(data)}")
    return data


def load_checkpoint(path) -> Checkpoint:
    try:
        f = open(path, "rb")
    except OSError as exc:
        raise InputError(f"cannot open checkpoint {path}: {exc}") from exc
    with f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConsistencyError(f"bad checkpoint magic in {path}")
        (meta_len,) = struct.unpack("<Q", _read_exact(f, 8, "metadata length"))
        try:
            meta = json.loads(_read_exact(f, meta_len, "metadata"))
        except json.JSONDecodeError as exc:
            raise ConsistencyError(f"corrupt checkpoint metadata: {exc}")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConsistencyError(
                f"unsupported checkpoint version {meta.get('version')}")
        kind = ModelKind(meta["kind"])
        d, n_e, n_r = meta["d"], meta["n_e"], meta["n_r"]
        voc = meta["vocabulary"]
        if len(voc["entities"]) != n_e or len(voc["relations"]) != n_r:
            raise ConsistencyError("vocabulary size does not match n_e/n_r")
        entities = np.frombuffer(
            _read_exact(f, n_e * d * 8, "entity array"), dtype="<f8"
        ).reshape(n_e, d).copy()
        rel_size = n_r * d * d if kind.uses_matrix else n_r * d
        rel = np.frombuffer(
            _read_exact(f, rel_size * 8, "relation array"), dtype="<f8"
        ).copy()
        rel = (rel.reshape(n_r, d, d) if kind.uses_matrix
               else rel.reshape(n_r, d))
        trailing = f.read(1)
        if trailing:
            raise ConsistencyError("checkpoint has trailing bytes")

    vocabulary = Vocabulary(
        entity_to_id={e: i for i, e in enumerate(voc["entities"])},
        id_to_entity=tuple(voc["entities"]),
        relation_to_id={r: i for i, r in enumerate(voc["relations"])},
        id_to_relation=tuple(voc["relations"]),
    )
    params = Parameters(
        kind=kind, d=d, entities=entities,
        relation_vectors=None if kind.uses_matrix else rel,
        relation_matrices=rel if kind.uses_matrix else None,
    )
    return Checkpoint(kind=kind, d=d, n_e=n_e, n_r=n_r,
                      vocabulary=vocabulary, params=params,
                      config=TrainConfig.from_dict(meta["config"]),
                      step=meta["step"],
                      best_valid_mrr=meta["best_valid_mrr"])
