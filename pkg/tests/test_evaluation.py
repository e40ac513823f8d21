import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from tripletiris.augment import tta_set
from tripletiris.backbone import BackboneConfig, embed_batch, forward_embed, init_model
from tripletiris.dataset import generate_synthetic
from tripletiris.evaluation import (
    ScoreSet,
    TtaEmbedding,
    all_to_all,
    build_report,
    compute_eer,
    compute_frr_at_far,
    compute_rank1,
    read_roc,
    roc_points,
    tta_embed,
)

from .oracles import brute_force_eer, brute_force_frr_at_far, brute_force_rank1, eer_from_curve


def _embs(values, labels):
    return [TtaEmbedding(np.atleast_1d(np.asarray(v, dtype=float)), f"s{i}", str(lab))
            for i, (v, lab) in enumerate(zip(values, labels))]


score_lists = st.lists(
    st.one_of(st.integers(0, 12).map(lambda k: k / 12), st.floats(0, 2, allow_nan=False)),
    min_size=1, max_size=25,
)


class TestTtaEmbed:
    def test_length_six_d(self):
        im = generate_synthetic(2, 2, 16, seed=0).images[0]
        m = init_model(BackboneConfig(input_resolution=16, stage_channels=(4, 8), blocks_per_stage=(1, 1),
                                      embedding_dim=128), 0)
        e = tta_embed(m, im)
        assert e.values.shape == (768,)
        assert (e.source_id, e.class_id) == (im.source_id, im.class_id)
        views = embed_batch(m, tta_set(im)).astype(np.float64)
        np.testing.assert_array_equal(e.values, views.ravel())
        # a batch of one may round differently in float32 BLAS
        np.testing.assert_allclose(e.values[:128], forward_embed(m, im), rtol=1e-5, atol=1e-6)

    def test_resolution_mismatch(self):
        im = generate_synthetic(2, 2, 32, seed=0).images[0]
        with pytest.raises(ValueError, match="resolution"):
            tta_embed(init_model(BackboneConfig(input_resolution=16, stage_channels=(4,),
                                                blocks_per_stage=(1,)), 0), im)


class TestAllToAll:
    def test_two_by_two(self):
        s = all_to_all(_embs([[1, 0], [1, 0.1], [0, 1], [0.1, 1]], "aabb"))
        assert len(s.genuine) == 2 and len(s.impostor) == 4

    def test_single_class(self):
        s = all_to_all(_embs([[1, 0], [1, 0.1], [0, 1]], "aaa"))
        assert len(s.impostor) == 0
        with pytest.raises(ValueError, match="impostor"):
            compute_eer(s)

    def test_ten(self):
        rng = np.random.default_rng(0)
        s = all_to_all(_embs(rng.normal(size=(10, 3)), rng.integers(0, 3, 10)))
        assert len(s.genuine) + len(s.impostor) == 45

    def test_needs_two(self):
        with pytest.raises(ValueError):
            all_to_all(_embs([[1.0]], "a"))

    @given(seed=st.integers(0, 10_000), n=st.integers(2, 15))
    def test_pair_count_and_routing(self, seed, n):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, 3))
        labels = rng.integers(0, 4, n)
        s = all_to_all(_embs(x, labels), "l2")
        same = sum(labels[i] == labels[j] for i in range(n) for j in range(i + 1, n))
        assert len(s.genuine) == same and len(s.genuine) + len(s.impostor) == n * (n - 1) // 2


class TestEer:
    def test_separated(self):
        assert compute_eer(ScoreSet([0.1, 0.2], [0.5, 0.6]))[0] == 0.0

    def test_identical_lists(self):
        eer, _ = compute_eer(ScoreSet([0.1, 0.4, 0.7], [0.1, 0.4, 0.7]))
        assert eer == pytest.approx(0.5, abs=1e-12)

    def test_hand_example(self):
        eer, thr = compute_eer(ScoreSet([0.1, 0.2, 0.3, 0.6], [0.4, 0.5, 0.7, 0.8]))
        assert eer == 0.25
        assert thr == 0.4

    def test_interpolated_crossing(self):
        # genuine {0, 2}, impostor {1, 3}: sweep (0,1) (0,.5) (.5,.5) ...
        assert compute_eer(ScoreSet([0.0, 2.0], [1.0, 3.0]))[0] == 0.5
        # genuine {1, 2, 3}, impostor {0, 4}: FRR-FAR changes sign between t=-inf.. t=0
        eer, _ = compute_eer(ScoreSet([1.0, 2.0, 3.0], [0.0, 4.0]))
        assert eer == pytest.approx(brute_force_eer([1.0, 2.0, 3.0], [0.0, 4.0]))

    @settings(max_examples=300)
    @given(gen=score_lists, imp=score_lists)
    def test_matches_brute_force(self, gen, imp):
        assert compute_eer(ScoreSet(gen, imp))[0] == brute_force_eer(gen, imp)

    @given(gen=score_lists, imp=score_lists)
    def test_in_unit_interval(self, gen, imp):
        assert 0.0 <= compute_eer(ScoreSet(gen, imp))[0] <= 1.0

    @given(seed=st.integers(0, 10_000))
    def test_at_most_half_when_genuine_smaller(self, seed):
        rng = np.random.default_rng(seed)
        g = rng.normal(0.0, 1.0, 30)
        i = rng.normal(1.5, 1.0, 30)
        assert compute_eer(ScoreSet(g, i))[0] <= 0.5


class TestFrrAtFar:
    def test_separated(self):
        s = ScoreSet([0.1, 0.2], [0.5, 0.6])
        for target in (1e-4, 0.01, 0.5):
            assert compute_frr_at_far(s, target) == 0.0

    def test_below_first_impostor_quantile(self):
        s = ScoreSet([0.1, 0.3, 0.5, 0.7], [0.2, 0.4, 0.6])
        # FAR must stay 0: accept only distances below 0.2
        assert compute_frr_at_far(s, 0.1) == 0.75

    def test_identical_hundred(self):
        vals = np.linspace(0.0, 1.0, 100)
        assert compute_frr_at_far(ScoreSet(vals, vals), 0.01) == 0.99

    def test_rejects_bad_target(self):
        with pytest.raises(ValueError):
            compute_frr_at_far(ScoreSet([0.1], [0.2]), 0.0)

    @settings(max_examples=300)
    @given(gen=score_lists, imp=score_lists, target=st.floats(1e-4, 0.999))
    def test_matches_brute_force(self, gen, imp, target):
        assert compute_frr_at_far(ScoreSet(gen, imp), target) == brute_force_frr_at_far(gen, imp, target)


class TestRoc:
    def test_endpoints_and_monotone(self):
        rng = np.random.default_rng(1)
        pts = roc_points(ScoreSet(rng.random(20), rng.random(30) + 0.3))
        assert pts[0] == (0.0, 1.0) and pts[-1] == (1.0, 0.0)
        far = [p[0] for p in pts]
        frr = [p[1] for p in pts]
        assert far == sorted(far) and frr == sorted(frr, reverse=True)

    @settings(max_examples=100)
    @given(gen=score_lists, imp=score_lists)
    def test_eer_from_curve_agrees(self, gen, imp):
        s = ScoreSet(gen, imp)
        assert abs(eer_from_curve(roc_points(s)) - compute_eer(s)[0]) <= 1e-9

    def test_one_point_per_distinct_threshold(self):
        s = ScoreSet([0.1, 0.2, 0.2], [0.2, 0.5])
        assert len(roc_points(s)) == 1 + 3

    def test_csv_round_trip(self, tmp_path):
        s = ScoreSet([0.1, 0.3], [0.2, 0.5])
        report = build_report(_embs([[1, 0], [1, 0.2], [0, 1], [0.3, 1]], "aabb"))
        report.write_roc(tmp_path / "roc.csv")
        lines = (tmp_path / "roc.csv").read_text().splitlines()
        assert lines[0] == "far,frr"
        assert read_roc(tmp_path / "roc.csv") == report.roc
        assert roc_points(s)[0] == (0.0, 1.0)


class TestRank1:
    def test_separated_clusters(self):
        rate, excluded = compute_rank1(_embs([[1, 0], [1, 0.1], [0, 1], [0.1, 1]], "aabb"))
        assert (rate, excluded) == (1.0, 0)

    def test_adversarial(self):
        # each point's nearest neighbour is the other class
        rate, _ = compute_rank1(_embs([0.0, 2.0, 0.5, 2.5], "aabb"), "l2")
        assert rate == 0.0

    def test_one_dimensional_example(self):
        x = [0.0, 0.1, 0.05, 1.0]
        rate, _ = compute_rank1(_embs(x, "AABB"), "l2")
        assert rate == brute_force_rank1(np.array(x)[:, None], list("AABB"))
        assert rate == 0.0

    def test_integer_ties_go_to_lowest_index(self):
        # probe 0 is equidistant from 1 (class b) and 2 (class a)
        x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0], [6.0, 5.0]])
        labels = list("babab")
        rate, _ = compute_rank1(_embs(x, labels), "l2")
        assert rate == brute_force_rank1(x, labels)

    def test_singleton_probe_excluded(self):
        rate, excluded = compute_rank1(_embs([0.0, 0.1, 5.0], "aab"), "l2")
        assert (rate, excluded) == (1.0, 1)

    @settings(max_examples=100)
    @given(seed=st.integers(0, 10_000), n=st.integers(3, 15), metric=st.sampled_from(["l2", "cosine"]))
    def test_matches_brute_force(self, seed, n, metric):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, 3))
        labels = [str(v) for v in rng.integers(0, 3, n)]
        if all(labels.count(lab) == 1 for lab in labels):
            return
        rate, _ = compute_rank1(_embs(x, labels), metric)
        assert rate == brute_force_rank1(x, labels, metric)


@settings(max_examples=100)
@given(gen=score_lists, imp=score_lists, seed=st.integers(0, 10_000))
def test_eer_rank_invariance(gen, imp, seed):
    s = ScoreSet(gen, imp)
    a, b = np.random.default_rng(seed).uniform(0.1, 5.0, 2)
    f = lambda v: np.exp(a * np.asarray(v)) + b * np.asarray(v) ** 3
    both = np.concatenate([s.genuine, s.impostor])
    # the transform must stay strictly increasing once rounded to floats
    assume(np.unique(f(both)).size == np.unique(both).size)
    assert compute_eer(ScoreSet(f(s.genuine), f(s.impostor)))[0] == compute_eer(s)[0]


def test_report_text_labels_far():
    report = build_report(_embs([[1, 0], [1, 0.2], [0, 1], [0.3, 1]], "aabb"), far_target=0.001)
    assert "FRR@0.1% FAR" in report.to_text()
    assert math.isfinite(report.eer)
