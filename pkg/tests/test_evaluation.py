import numpy as np
import pytest
from hypothesis import given, strategies as st

from lsekg import ConsistencyError
from lsekg.data import Triple, build_filter_index
from lsekg.evaluation import (MetricBlock, Metrics, RankRecord, aggregate,
                              evaluate, parse_structured, rank_of_truth,
                              report)
from lsekg.models import ModelKind, energy, init_params


class TestRankOfTruth:
    def test_one_better_candidate(self):
        assert rank_of_truth(np.array([0.5, 0.2, 0.9]), 0) == 2.0

    def test_all_tied_mean_policy(self):
        energies = np.full(5, 1.0)
        for truth in range(5):
            assert rank_of_truth(energies, truth) == 3.0

    def test_tie_policies(self):
        energies = np.full(5, 1.0)
        assert rank_of_truth(energies, 2, tie_policy="optimistic") == 1.0
        assert rank_of_truth(energies, 2, tie_policy="pessimistic") == 5.0

    def test_mask_improves_rank(self):
        energies = np.array([0.5, 0.2, 0.9])
        assert rank_of_truth(energies, 0, mask={1}) == 1.0

    def test_truth_must_not_be_masked(self):
        with pytest.raises(ConsistencyError):
            rank_of_truth(np.array([1.0, 2.0]), 0, mask={0})

    def test_truth_out_of_range(self):
        with pytest.raises(ConsistencyError):
            rank_of_truth(np.array([1.0, 2.0]), 5)

    def test_invariant_under_candidate_permutation(self):
        rng = np.random.default_rng(0)
        energies = rng.normal(size=50)
        truth = 17
        base = rank_of_truth(energies, truth)
        for _ in range(20):
            perm = rng.permutation(50)
            permuted = energies[perm]
            new_truth = int(np.where(perm == truth)[0][0])
            assert rank_of_truth(permuted, new_truth) == base


class TestMetricArithmetic:
    def test_ranks_1_2_4(self):
        records = [RankRecord(Triple(0, 0, 0), "tail", r, r)
                   for r in (1, 2, 4)]
        m = aggregate(records)
        assert m.filtered.mrr == pytest.approx(7 / 12)
        assert m.filtered.hits1 == pytest.approx(1 / 3)
        assert m.filtered.hits3 == pytest.approx(2 / 3)
        assert m.filtered.hits10 == 1.0
        assert m.filtered.mr == pytest.approx(7 / 3)

    def test_perfect_model(self):
        records = [RankRecord(Triple(0, 0, 0), "head", 1, 1)
                   for _ in range(10)]
        m = aggregate(records)
        assert m.filtered.mrr == 1.0
        assert m.filtered.hits1 == 1.0
        assert m.filtered.mr == 1.0

    @given(st.lists(st.integers(min_value=1, max_value=500), min_size=1,
                    max_size=60))
    def test_invariants_on_random_rank_multisets(self, ranks):
        block = MetricBlock.from_ranks(np.array(ranks, dtype=float))
        assert block.hits1 <= block.hits3 <= block.hits10
        assert 0 < block.mrr <= 1
        assert block.mr >= 1
        assert 1 / block.mr <= block.mrr + 1e-12

    def test_empty(self):
        m = aggregate([])
        assert m.n_queries == 0
        assert m.raw is None and m.filtered is None


def small_setup(kind=ModelKind.LSE_D, n_e=12, n_r=2, n_triples=30, seed=0):
    rng = np.random.default_rng(seed)
    params = init_params(kind, n_e, n_r, 6, seed=seed)
    triples = {Triple(*map(int, rng.integers(0, [n_e, n_r, n_e])))
               for _ in range(n_triples)}
    eval_set = tuple(sorted(triples))
    return params, eval_set, build_filter_index([eval_set])


class TestEvaluate:
    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_ranks_match_brute_force(self, kind):
        params, eval_set, idx = small_setup(kind)
        _, records = evaluate(params, eval_set, idx)
        by_key = {(r.triple, r.side): r for r in records}
        for triple in eval_set:
            h, rel, t = triple
            tail_energies = np.array(
                [energy(params, h, rel, e) for e in range(params.n_e)])
            rec = by_key[(triple, "tail")]
            assert rec.raw_rank == rank_of_truth(tail_energies, t)
            assert rec.filtered_rank == rank_of_truth(
                tail_energies, t, idx.true_tails(h, rel) - {t})
            head_energies = np.array(
                [energy(params, e, rel, t) for e in range(params.n_e)])
            rec = by_key[(triple, "head")]
            assert rec.raw_rank == rank_of_truth(head_energies, h)

    def test_filtered_never_worse_than_raw(self):
        params, eval_set, idx = small_setup(n_triples=60, seed=5)
        metrics, records = evaluate(params, eval_set, idx)
        assert all(r.filtered_rank <= r.raw_rank for r in records)
        assert metrics.filtered.mrr >= metrics.raw.mrr

    def test_two_queries_per_triple(self):
        params, eval_set, idx = small_setup()
        metrics, records = evaluate(params, eval_set, idx)
        assert metrics.n_queries == 2 * len(eval_set)

    def test_pure_function_of_inputs(self):
        params, eval_set, idx = small_setup()
        a, _ = evaluate(params, eval_set, idx)
        b, _ = evaluate(params, eval_set, idx)
        assert a == b

    def test_vocabulary_mismatch_rejected(self):
        params, _, idx = small_setup()
        with pytest.raises(ConsistencyError):
            evaluate(params, (Triple(99, 0, 0),), idx)


class TestReport:
    def test_structured_round_trip(self):
        params, eval_set, idx = small_setup(n_triples=40, seed=9)
        metrics, _ = evaluate(params, eval_set, idx)
        parsed = parse_structured(report(metrics, format="structured"))
        assert parsed["n"] == metrics.n_queries
        assert parsed["tie_policy"] == "mean"
        assert parsed["filtered.mrr"] == pytest.approx(metrics.filtered.mrr,
                                                       abs=1e-6)
        assert parsed["raw.hits10"] == pytest.approx(metrics.raw.hits10,
                                                     abs=1e-6)
        assert parsed["filtered.head.mrr"] == pytest.approx(
            metrics.filtered_by_side["head"].mrr, abs=1e-6)

    def test_text_contains_both_settings(self):
        params, eval_set, idx = small_setup()
        metrics, _ = evaluate(params, eval_set, idx)
        text = report(metrics)
        assert "raw" in text and "filtered" in text
        assert "MRR" in text and "Hits@10" in text

    def test_empty_eval_set(self):
        m = Metrics(n_queries=0, tie_policy="mean")
        assert "no queries" in report(m)
        parsed = parse_structured(report(m, format="structured"))
        assert parsed["n"] == 0
