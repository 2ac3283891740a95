import numpy as np
import pytest

from sidforge.evalharness import (
    EvalCase,
    OracleScorer,
    SyntheticSpec,
    hitrate_at_k,
    mrr_at_k,
    run_eval,
    synth_catalog,
)
from sidforge.generator import UniformScorer
from sidforge.quantizer import encode_batch, fit_codebook
from sidforge.sidmetrics import cur, icr
from sidforge.sids import SidCatalog


def case(truth, candidates):
    return EvalCase("ctx", frozenset(truth), tuple(candidates))


def brute_hitrate(cases, k):
    hits = 0
    for c in cases:
        if set(c.candidates[:k]) & c.truth:
            hits += 1
    return hits / len(cases)


def brute_mrr(cases, k):
    total = 0.0
    for c in cases:
        for rank, cand in enumerate(c.candidates, 1):
            if rank > k:
                break
            if cand in c.truth:
                total += 1.0 / rank
                break
    return total / len(cases)


class TestMetrics:
    def test_truth_at_rank_one(self):
        assert hitrate_at_k([case({"a"}, ["a", "b"])], 1) == 1.0
        assert mrr_at_k([case({"a"}, ["a", "b"])], 1) == 1.0

    def test_truth_outside_topk_contributes_zero(self):
        cases = [case({"z"}, ["a", "b", "z"])]
        assert hitrate_at_k(cases, 2) == 0.0
        assert mrr_at_k(cases, 2) == 0.0
        assert mrr_at_k(cases, 3) == pytest.approx(1 / 3)

    def test_first_hit_semantics(self):
        cases = [case({"b", "c"}, ["a", "b", "c"])]
        assert mrr_at_k(cases, 3) == pytest.approx(0.5)

    def test_hand_counted_mixed_set(self):
        cases = [
            case({"t"}, ["t", "x"]),      # hit@1
            case({"t"}, ["x", "t"]),      # hit@2
            case({"t"}, ["x", "y"]),      # miss
            case({"t"}, []),              # miss, no candidates
        ]
        assert hitrate_at_k(cases, 2) == pytest.approx(2 / 4)
        assert mrr_at_k(cases, 2) == pytest.approx((1.0 + 0.5) / 4)

    def test_matches_brute_oracle_on_random_cases(self):
        rng = np.random.default_rng(0)
        cases = []
        for _ in range(200):
            items = [f"i{n}" for n in range(20)]
            rng.shuffle(items)
            truth = set(rng.choice(items, size=rng.integers(1, 4), replace=False))
            cases.append(case(truth, items[: rng.integers(0, 20)]))
        for k in (1, 3, 10, 25):
            assert hitrate_at_k(cases, k) == pytest.approx(brute_hitrate(cases, k))
            assert mrr_at_k(cases, k) == pytest.approx(brute_mrr(cases, k))

    def test_monotone_in_k_and_mrr_below_hr(self):
        rng = np.random.default_rng(1)
        cases = []
        for _ in range(50):
            items = [f"i{n}" for n in range(15)]
            rng.shuffle(items)
            cases.append(case({items[rng.integers(15)]}, items))
        prev_hr, prev_mrr = 0.0, 0.0
        for k in (1, 2, 5, 10, 15):
            hr, mrr = hitrate_at_k(cases, k), mrr_at_k(cases, k)
            assert hr >= prev_hr and mrr >= prev_mrr
            assert mrr <= hr <= 1.0
            prev_hr, prev_mrr = hr, mrr

    def test_empty_cases_rejected(self):
        with pytest.raises(ValueError):
            hitrate_at_k([], 1)
        with pytest.raises(ValueError):
            mrr_at_k([], 1)

    def test_duplicate_candidates_rejected(self):
        with pytest.raises(ValueError, match="dedup"):
            case({"a"}, ["a", "a"])


class TestSynthCatalog:
    def test_fixed_seed_bit_identical(self):
        spec = SyntheticSpec(clusters=4, items_per_cluster=6, dim=5, sessions=10, seed=9)
        a, b = synth_catalog(spec), synth_catalog(spec)
        assert np.array_equal(a.items.matrix, b.items.matrix)
        assert np.array_equal(a.queries.matrix, b.queries.matrix)
        assert a.sessions == b.sessions

    def test_zero_noise_items_equal_centers(self):
        spec = SyntheticSpec(clusters=3, items_per_cluster=4, dim=4,
                             noise_scale=0.0, keyword_noise=0.0, seed=2)
        bundle = synth_catalog(spec)
        mat = bundle.items.matrix
        for c in range(3):
            block = mat[c * 4:(c + 1) * 4]
            assert np.allclose(block, block[0])

    def test_zero_noise_level1_encodes_perfectly(self):
        spec = SyntheticSpec(clusters=4, items_per_cluster=5, dim=6,
                             noise_scale=0.0, keyword_noise=0.0, seed=3)
        bundle = synth_catalog(spec)
        cb = fit_codebook(bundle.items, (4,), balanced_last=False,
                          opq_subspaces=2, opq_codes=2, seed=0)
        sids = encode_batch(bundle.items.matrix, cb)
        first = {}
        for item_id, sid in zip(bundle.items.ids, sids):
            cluster = bundle.categories[item_id]
            first.setdefault(cluster, sid.rq[0])
            assert sid.rq[0] == first[cluster]
        assert len(set(first.values())) == 4

    def test_two_separated_clusters_pure_level1(self):
        spec = SyntheticSpec(clusters=2, items_per_cluster=10, dim=4,
                             noise_scale=0.05, center_scale=50.0, seed=4)
        bundle = synth_catalog(spec)
        cb = fit_codebook(bundle.items, (2,), balanced_last=False,
                          opq_subspaces=2, opq_codes=2, seed=0)
        sids = encode_batch(bundle.items.matrix, cb)
        codes_by_cluster = {}
        for item_id, sid in zip(bundle.items.ids, sids):
            codes_by_cluster.setdefault(bundle.categories[item_id], set()).add(sid.rq[0])
        assert all(len(codes) == 1 for codes in codes_by_cluster.values())

    def test_session_clicks_stay_in_query_cluster(self):
        spec = SyntheticSpec(clusters=5, items_per_cluster=8, dim=4, sessions=50, seed=5)
        bundle = synth_catalog(spec)
        assert len(bundle.sessions) == 50
        for sess in bundle.sessions:
            cluster = sess.query_id.removeprefix("query")
            for item in sess.short_clicks + (sess.clicked_item,):
                assert item.startswith(f"item{cluster}_")


@pytest.fixture(scope="module")
def bundle_and_cb():
    spec = SyntheticSpec(clusters=6, items_per_cluster=8, dim=6,
                         noise_scale=0.3, sessions=0, seed=6)
    bundle = synth_catalog(spec)
    cb = fit_codebook(bundle.items, (6, 4), balanced_last=True,
                      opq_subspaces=2, opq_codes=4, seed=1)
    return bundle, cb


class TestRunEval:
    def test_oracle_scorer_perfect_hit_at_one(self, bundle_and_cb):
        bundle, cb = bundle_and_cb
        sids = encode_batch(bundle.items.matrix, cb)
        by_id = dict(zip(bundle.items.ids, sids))
        q_sids = encode_batch(bundle.queries.matrix, cb)
        cases, truth_map = [], {}
        for q_id, q_sid in zip(bundle.queries.ids, q_sids):
            target = f"item{bundle.query_cluster[q_id]}_0"
            cases.append(EvalCase(q_sid, frozenset({target})))
            truth_map[q_sid] = by_id[target]
        report = run_eval(cb, OracleScorer(truth_map), cases, [1, 5], bundle.items, beam=8)
        assert report.hitrate[1] == 1.0
        assert report.mrr[1] == 1.0

    def test_report_matches_component_metrics(self, bundle_and_cb):
        bundle, cb = bundle_and_cb
        q_sids = encode_batch(bundle.queries.matrix, cb)
        cases = [
            EvalCase(q_sid, frozenset({f"item{bundle.query_cluster[q_id]}_1"}))
            for q_id, q_sid in zip(bundle.queries.ids, q_sids)
        ]
        report = run_eval(cb, UniformScorer(), cases, [3, 10], bundle.items, beam=16)
        sids = encode_batch(bundle.items.matrix, cb)
        sid_cat = SidCatalog(dict(zip(bundle.items.ids, sids)), cb.scheme)
        assert report.catalog_icr_rq == pytest.approx(icr(sid_cat, use_opq=False))
        assert report.catalog_icr_full == pytest.approx(icr(sid_cat, use_opq=True))
        assert report.catalog_cur_per_level == [cur(sid_cat, 1), cur(sid_cat, 2)]
        assert 0.0 <= report.mrr[3] <= report.hitrate[3] <= report.hitrate[10] <= 1.0

    def test_deterministic_report(self, bundle_and_cb):
        bundle, cb = bundle_and_cb
        q_sids = encode_batch(bundle.queries.matrix, cb)
        cases = [EvalCase(q_sids[0], frozenset({"item0_0"}))]
        r1 = run_eval(cb, UniformScorer(), cases, [5], bundle.items, beam=8)
        r2 = run_eval(cb, UniformScorer(), cases, [5], bundle.items, beam=8)
        assert r1.render() == r2.render()

    def test_empty_cases_rejected(self, bundle_and_cb):
        bundle, cb = bundle_and_cb
        with pytest.raises(ValueError):
            run_eval(cb, UniformScorer(), [], [1], bundle.items)

    def test_uniform_scorer_hitrate_near_k_over_n(self):
        # uniform scores return one fixed tie-break ranking, so with truth
        # drawn uniformly HR@K concentrates around K / |catalog|
        spec = SyntheticSpec(clusters=32, items_per_cluster=16, dim=8,
                             noise_scale=1.0, seed=7)
        bundle = synth_catalog(spec)
        cb = fit_codebook(bundle.items, (16, 8), balanced_last=False,
                          opq_subspaces=2, opq_codes=8, seed=2)
        rng = np.random.default_rng(8)
        q_sids = encode_batch(bundle.queries.matrix, cb)
        cases = []
        for _ in range(400):
            q = q_sids[int(rng.integers(len(q_sids)))]
            truth = bundle.items.ids[int(rng.integers(len(bundle.items)))]
            cases.append(EvalCase(q, frozenset({truth})))
        report = run_eval(cb, UniformScorer(), cases, [10], bundle.items, beam=16)
        expected = 10 / len(bundle.items)
        # four binomial standard deviations around the analytic expectation
        sd = (expected * (1 - expected) / len(cases)) ** 0.5
        assert abs(report.hitrate[10] - expected) <= 4 * sd + 1e-9
