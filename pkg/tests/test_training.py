import math

import numpy as np
import pytest

from lsekg import ConsistencyError, LsekgError
from lsekg.data import build_dataset
from lsekg.models import ModelKind, energy, init_params
from lsekg.sampling import SamplerConfig
from lsekg.training import (Checkpoint, TrainConfig, ce_loss,
                            load_checkpoint, margin_loss, save_checkpoint,
                            sgd_step, train, triple_probability,
                            _batch_energies, _batch_gradients,
                            _loss_coefficients)


class TestMarginLoss:
    def test_hinge_boundary(self):
        assert margin_loss(0.0, 1.0, gamma=1.0) == 0.0

    def test_active_hinge(self):
        assert margin_loss(2.0, 1.0, gamma=1.0) == 2.0

    def test_saturated(self):
        assert margin_loss(0.0, 1e9, gamma=1.0) == 0.0

    def test_monotone(self):
        grid = np.linspace(-5, 5, 41)
        for gamma in (0.5, 2.0):
            for e_neg in grid:
                losses = margin_loss(grid, e_neg, gamma)
                assert (np.diff(losses) >= 0).all()  # nondecreasing in e_pos
            for e_pos in grid:
                losses = margin_loss(e_pos, grid, gamma)
                assert (np.diff(losses) <= 0).all()  # nonincreasing in e_neg


class TestTripleProbability:
    def test_at_margin(self):
        assert triple_probability(3.0, gamma=3.0) == 0.5

    def test_limit(self):
        assert triple_probability(0.0, gamma=50.0) == pytest.approx(1.0)

    def test_quarter_point(self):
        e = 2.0 + math.log(3)
        assert triple_probability(e, gamma=2.0) == pytest.approx(0.25)


class TestCeLoss:
    def test_balanced_point(self):
        assert ce_loss(1.0, [1.0], gamma=1.0) == pytest.approx(2 * math.log(2))

    def test_separated_limit(self):
        assert ce_loss(0.0, [100.0], gamma=30.0) == pytest.approx(0.0,
                                                                  abs=1e-3)

    def test_identical_negatives_average(self):
        many = ce_loss(1.0, [4.0] * 4, gamma=2.0)
        one = ce_loss(1.0, [4.0], gamma=2.0)
        assert many == pytest.approx(one)

    def test_finite_under_extreme_energies(self):
        assert math.isfinite(ce_loss(1000.0, [-1000.0], gamma=1.0))

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            e_pos = rng.uniform(-10, 10)
            e_negs = rng.uniform(-10, 10, size=5)
            assert ce_loss(e_pos, e_negs, gamma=rng.uniform(0.1, 5)) >= 0


class TestSgdStep:
    def test_zero_gradient_is_identity(self):
        params = init_params(ModelKind.LSE_D, 5, 2, 4, seed=0)
        before = params.entities.copy()
        sgd_step(params, {1: np.zeros(4)}, {0: np.zeros(4)}, 0.1)
        assert np.array_equal(params.entities, before)

    def test_untouched_rows_bitwise_unchanged(self):
        params = init_params(ModelKind.TRANSE, 10, 3, 4, seed=1)
        before_e = params.entities.copy()
        before_r = params.relation_vectors.copy()
        sgd_step(params, {2: np.ones(4)}, {1: np.ones(4)}, 0.1)
        untouched = [i for i in range(10) if i != 2]
        assert np.array_equal(params.entities[untouched],
                              before_e[untouched])
        assert np.array_equal(params.relation_vectors[[0, 2]],
                              before_r[[0, 2]])
        assert not np.array_equal(params.entities[2], before_e[2])

    def test_disjoint_updates_commute(self):
        grads_a = ({0: np.array([1.0, 2.0])}, {0: np.array([0.5, 0.5])})
        grads_b = ({1: np.array([-1.0, 3.0])}, {1: np.array([0.1, 0.2])})
        p1 = init_params(ModelKind.LSE_D, 4, 2, 2, seed=3)
        p2 = p1.copy()
        sgd_step(p1, *grads_a, 0.05)
        sgd_step(p1, *grads_b, 0.05)
        sgd_step(p2, *grads_b, 0.05)
        sgd_step(p2, *grads_a, 0.05)
        assert np.array_equal(p1.entities, p2.entities)
        assert np.array_equal(p1.relation_vectors, p2.relation_vectors)

    def test_nonfinite_gradient_aborts(self):
        params = init_params(ModelKind.LSE_D, 4, 2, 2, seed=3)
        before = params.entities.copy()
        with pytest.raises(LsekgError):
            sgd_step(params, {0: np.array([np.nan, 0.0])}, {}, 0.1)
        assert np.array_equal(params.entities, before)

    def test_single_triple_descent(self):
        params = init_params(ModelKind.LSE_D, 4, 1, 8, seed=5)
        triples = np.array([[0, 0, 1], [2, 0, 3]])  # positive, negative
        config = TrainConfig(loss="margin", margin=5.0, dim=8,
                             learning_rate=1e-3)

        def pair_loss():
            return margin_loss(energy(params, 0, 0, 1),
                               energy(params, 2, 0, 3), config.margin)

        before = pair_loss()
        assert before > 0
        energies, cache = _batch_energies(params, triples, 1)
        loss, c_pos, c_neg = _loss_coefficients(
            energies[:1], energies[1:].reshape(1, 1), config)
        coeffs = np.concatenate([c_pos, c_neg.ravel()])
        ent_g, rel_g = _batch_gradients(params, triples, coeffs, cache, 1,
                                        energies)
        sgd_step(params, ent_g, rel_g, config.learning_rate)
        assert pair_loss() < before


@pytest.mark.parametrize("kind", list(ModelKind))
@pytest.mark.parametrize("loss", ["margin", "ce"])
def test_batch_gradient_matches_finite_differences(kind, loss):
    """Full-batch gradient of loss(energies) vs central differences through
    the composed map, p=2 (smooth everywhere)."""
    rng = np.random.default_rng(8)
    d = 8
    params = init_params(kind, 6, 2, d, seed=8)
    params.entities[:] = rng.normal(size=(6, d))
    triples = np.array([[0, 0, 1], [2, 1, 3],       # positives
                        [0, 0, 4], [5, 0, 1],       # negatives of first
                        [2, 1, 5], [4, 1, 3]])      # negatives of second
    config = TrainConfig(loss=loss, margin=2.0, p=2, dim=d)

    def total_loss():
        energies, _ = _batch_energies(params, triples, 2)
        loss_v, _, _ = _loss_coefficients(energies[:2],
                                          energies[2:].reshape(2, 2), config)
        return loss_v

    energies, cache = _batch_energies(params, triples, 2)
    _, c_pos, c_neg = _loss_coefficients(energies[:2],
                                         energies[2:].reshape(2, 2), config)
    coeffs = np.concatenate([c_pos, c_neg.ravel()])
    ent_g, rel_g = _batch_gradients(params, triples, coeffs, cache, 2,
                                    energies)

    step = 1e-6
    for row, grad in ent_g.items():
        for i in range(d):
            orig = params.entities[row, i]
            params.entities[row, i] = orig + step
            up = total_loss()
            params.entities[row, i] = orig - step
            down = total_loss()
            params.entities[row, i] = orig
            fd = (up - down) / (2 * step)
            assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)
    rel_arrays = (params.relation_matrices if kind.uses_matrix
                  else params.relation_vectors)
    for r, grad in rel_g.items():
        flat_grad = grad.ravel()
        flat = rel_arrays[r].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = total_loss()
            flat[i] = orig - step
            down = total_loss()
            flat[i] = orig
            fd = (up - down) / (2 * step)
            assert flat_grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)


@pytest.fixture
def tiny_dataset():
    rng = np.random.default_rng(4)
    raw = list({(f"e{a}", f"r{r}", f"e{b}")
                for a, r, b in rng.integers(0, [15, 2, 15], size=(60, 3))})
    raw.sort()
    return build_dataset(raw[:40], raw[40:50], raw[50:])


def desk_config(**kw):
    base = dict(loss="ce", margin=2.0, p=1, learning_rate=0.05,
                batch_size=16, dim=8, max_steps=50, eval_every=20,
                patience=3, seed=0,
                sampler=SamplerConfig(negatives_per_positive=4, seed=0))
    base.update(kw)
    return TrainConfig(**base)


class TestTrain:
    def test_zero_steps_returns_initialization(self, tiny_dataset):
        config = desk_config(max_steps=0)
        ckpt = train(tiny_dataset, ModelKind.LSE_D, config)
        ref = init_params(ModelKind.LSE_D, tiny_dataset.vocabulary.n_e,
                          tiny_dataset.vocabulary.n_r, config.dim,
                          config.seed)
        assert ckpt.step == 0
        assert np.array_equal(ckpt.params.entities, ref.entities)
        assert np.array_equal(ckpt.params.relation_vectors,
                              ref.relation_vectors)

    def test_identical_seed_identical_trajectory(self, tiny_dataset):
        logs = []
        for _ in range(2):
            records = []
            train(tiny_dataset, ModelKind.TRANSE, desk_config(),
                  log=records.append)
            logs.append(records)
        assert logs[0] == logs[1]

    def test_different_seed_different_trajectory(self, tiny_dataset):
        a, b = [], []
        train(tiny_dataset, ModelKind.TRANSE, desk_config(seed=1),
              log=a.append)
        train(tiny_dataset, ModelKind.TRANSE, desk_config(seed=2),
              log=b.append)
        assert a != b

    def test_checkpoint_metadata(self, tiny_dataset):
        ckpt = train(tiny_dataset, ModelKind.LSE_D, desk_config())
        assert ckpt.kind is ModelKind.LSE_D
        assert ckpt.n_e == tiny_dataset.vocabulary.n_e
        assert ckpt.params.entities.shape == (ckpt.n_e, ckpt.d)
        assert ckpt.best_valid_mrr is not None

    def test_normalize_entities_projects_rows(self, tiny_dataset):
        config = desk_config(normalize_entities=True, max_steps=30,
                             eval_every=0)
        ckpt = train(tiny_dataset, ModelKind.TRANSE, config)
        norms = np.linalg.norm(ckpt.params.entities, axis=1)
        touched = norms[np.abs(norms - 1.0) < 1e-9]
        assert len(touched) > 0  # every updated row is unit length


class TestCheckpointIO:
    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_round_trip_bitwise(self, kind, tiny_dataset, tmp_path):
        ckpt = train(tiny_dataset, kind, desk_config(max_steps=5,
                                                     eval_every=0))
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.kind == ckpt.kind
        assert loaded.step == ckpt.step
        assert np.array_equal(loaded.params.entities, ckpt.params.entities)
        if kind.uses_matrix:
            assert np.array_equal(loaded.params.relation_matrices,
                                  ckpt.params.relation_matrices)
        else:
            assert np.array_equal(loaded.params.relation_vectors,
                                  ckpt.params.relation_vectors)
        assert loaded.vocabulary == ckpt.vocabulary
        assert loaded.config == ckpt.config

    def test_reloaded_energies_bitwise_equal(self, tiny_dataset, tmp_path):
        ckpt = train(tiny_dataset, ModelKind.LSE, desk_config(max_steps=5,
                                                              eval_every=0))
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        rng = np.random.default_rng(0)
        for _ in range(100):
            h, t = rng.integers(0, ckpt.n_e, size=2)
            r = rng.integers(0, ckpt.n_r)
            assert energy(ckpt.params, h, r, t) == energy(loaded.params,
                                                          h, r, t)

    def test_truncated_file_rejected(self, tiny_dataset, tmp_path):
        ckpt = train(tiny_dataset, ModelKind.LSE_D,
                     desk_config(max_steps=1, eval_every=0))
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        data = path.read_bytes()
        (tmp_path / "cut.ckpt").write_bytes(data[:-40])
        with pytest.raises(ConsistencyError, match="truncated"):
            load_checkpoint(tmp_path / "cut.ckpt")

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(ConsistencyError, match="magic"):
            load_checkpoint(path)

    def test_trailing_bytes_rejected(self, tiny_dataset, tmp_path):
        ckpt = train(tiny_dataset, ModelKind.LSE_D,
                     desk_config(max_steps=1, eval_every=0))
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(ConsistencyError, match="trailing"):
            load_checkpoint(path)
