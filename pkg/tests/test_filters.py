import numpy as np
import pytest

from lokf.data import (CloakMask, DataBundle, HypothesisId, PartitionSet,
                       cloak_swap)
from lokf.filters import (DiscoverySet, LkfConfig, StatVector, alkf,
                          assemble_w, fixed_lkf, global_kf,
                          knockoff_threshold, lkf_fixed, naive_lkf,
                          split_lkf, write_discoveries_csv)
from lokf.lasso import FitOptions
from lokf.partition import PartitionConfig
from lokf.rng import derive_rng, derive_seed
from lokf.scores import ScoreConfig, ScoreEntry, ScoreTable
from tests.test_scores import score_bundle

FAST = FitOptions(cv_folds=3, grid_size=25)


def stat_vector(values):
    ids = tuple(HypothesisId(j, 1) for j in range(len(values)))
    return StatVector(ids, np.asarray(values, dtype=float))


def oracle_threshold(w, alpha):
    """Brute-force scan over all candidate thresholds."""
    w = list(w)
    cands = sorted({abs(v) for v in w if v != 0})
    for t in cands:
        neg = sum(1 for v in w if v <= -t)
        pos = sum(1 for v in w if v >= t)
        if (1 + neg) / max(1, pos) <= alpha:
            return t, {i for i, v in enumerate(w) if v >= t}
    return None, set()


class TestAssembleW:
    def test_examples(self):
        t = ScoreTable()
        t.entries[HypothesisId(0, 1)] = ScoreEntry(0.7, 0.2, 10, False)
        t.entries[HypothesisId(1, 1)] = ScoreEntry(0.0, 0.0, 10, True)
        t.entries[HypothesisId(2, 1)] = ScoreEntry(0.2, 0.7, 10, False)
        sv = assemble_w(t)
        assert sv.w.tolist() == pytest.approx([0.5, 0.0, -0.5])

    def test_antisymmetry(self):
        rng = derive_rng(1, "anti")
        t = ScoreTable()
        t2 = ScoreTable()
        for j in range(10):
            a, b = rng.random(2)
            t.entries[HypothesisId(j, 1)] = ScoreEntry(a, b, 5, False)
            t2.entries[HypothesisId(j, 1)] = ScoreEntry(b, a, 5, False)
        assert np.array_equal(assemble_w(t).w, -assemble_w(t2).w)


class TestKnockoffThreshold:
    def test_all_negative(self):
        disc = knockoff_threshold(stat_vector([-1, -2, -3]), 0.5)
        assert disc.rejected == ()
        assert np.isinf(disc.threshold)

    def test_worked_example(self):
        disc = knockoff_threshold(stat_vector([4, 3, -1, 2]), 0.5)
        assert disc.threshold == 2
        assert {hid.variable for hid in disc.rejected} == {0, 1, 3}
        assert disc.fdp_estimate == pytest.approx(1 / 3)

    def test_zeros_inert(self):
        a = knockoff_threshold(stat_vector([4, 3, -1, 2, 0, 0]), 0.5)
        b = knockoff_threshold(stat_vector([4, 3, -1, 2]), 0.5)
        assert a.threshold == b.threshold
        assert len(a.rejected) == len(b.rejected)

    def test_alpha_validation(self):
        with pytest.raises(ValueError):
            knockoff_threshold(stat_vector([1.0]), 0.0)

    def test_oracle_equivalence_random(self):
        rng = derive_rng(2, "oracle")
        for trial in range(300):
            k = int(rng.integers(1, 50))
            w = rng.choice([-1, 1], k) * rng.integers(0, 5, k).astype(float)
            alpha = float(rng.uniform(0.05, 0.6))
            disc = knockoff_threshold(stat_vector(w), alpha)
            t, idx = oracle_threshold(w, alpha)
            if t is None:
                assert disc.rejected == ()
            else:
                assert disc.threshold == t
                assert {h.variable for h in disc.rejected} == idx

    def test_monotone_in_alpha(self):
        rng = derive_rng(3, "mono")
        for _ in range(50):
            w = rng.standard_normal(30)
            prev = set()
            for alpha in (0.05, 0.1, 0.2, 0.4, 0.8):
                got = {h.variable for h in
                       knockoff_threshold(stat_vector(w), alpha).rejected}
                assert prev <= got
                prev = got


class TestPipelines:
    def test_tiny_alpha_rejects_nothing(self):
        d = score_bundle(200, seed=31, effects=((0, None, 4.0),))
        part = PartitionSet.trivial(d.p)
        cfg = LkfConfig(scores=ScoreConfig(path="batch", use_prior=False,
                                           opts=FAST))
        disc = lkf_fixed(d, CloakMask.zeros(d.n, d.p), part, 1 / (4 * d.p),
                         cfg, seed=1)
        assert disc.rejected == ()

    def test_trivial_batch_equals_global(self):
        d = score_bundle(300, seed=32, effects=((0, None, 3.0),
                                                 (2, None, 2.0)))
        part = PartitionSet.trivial(d.p)
        cfg = LkfConfig(scores=ScoreConfig(path="batch", use_prior=False,
                                           opts=FAST))
        a = lkf_fixed(d, CloakMask.zeros(d.n, d.p), part, 0.2, cfg, seed=5)
        b = global_kf(d, 0.2, seed=5, opts=FAST)
        assert a.rejected == b.rejected
        assert np.array_equal(a.stats.w, b.stats.w)

    def test_alkf_gmax_zero_reduction(self):
        d = score_bundle(260, seed=33, effects=((1, None, 3.0),))
        cfg = LkfConfig(partition=PartitionConfig(g_max=0),
                        scores=ScoreConfig(use_prior=False, opts=FAST))
        part, disc = alkf(d, 0.2, cfg, seed=17)
        assert part.rules == ((),) * d.p
        mask = CloakMask.draw(d.n, d.p, 0.5, derive_seed(17, "cloak"))
        direct = lkf_fixed(d, mask, PartitionSet.trivial(d.p), 0.2, cfg,
                           derive_seed(17, "test"))
        assert disc.rejected == direct.rejected
        assert np.array_equal(disc.stats.w, direct.stats.w)

    def test_fixed_lkf_no_envs_is_global(self):
        d = score_bundle(220, seed=34, effects=((0, None, 3.0),))
        a = fixed_lkf(d, (), 0.2, seed=9, opts=FAST)
        b = global_kf(d, 0.2, seed=9, opts=FAST)
        assert a.rejected == b.rejected
        assert np.array_equal(a.stats.w, b.stats.w)

    def test_fixed_lkf_env_hypotheses(self):
        d = score_bundle(400, seed=35, m=2, effects=((0, 0, 4.0),))
        disc = fixed_lkf(d, (0, 1), 0.25, seed=4, opts=FAST,
                         min_subgroup=20)
        labels = {hid.label for hid in disc.stats.ids}
        assert labels == {1, 2, 3, 4}
        assert len(disc.stats.ids) == 4 * d.p

    def test_split_deterministic_and_half_rows(self):
        d = score_bundle(300, seed=36, effects=((0, None, 3.0),))
        cfg = LkfConfig(partition=PartitionConfig(g_max=1, c_main=1.0),
                        scores=ScoreConfig(use_prior=False, opts=FAST))
        a = split_lkf(d, 0.2, cfg, seed=8)
        b = split_lkf(d, 0.2, cfg, seed=8)
        assert a.rejected == b.rejected
        assert len(a.rows) == d.n // 2

    def test_naive_deterministic(self):
        d = score_bundle(260, seed=37, effects=((0, 0, 3.0),))
        cfg = LkfConfig(partition=PartitionConfig(g_max=1, c_main=1.0),
                        scores=ScoreConfig(use_prior=False, opts=FAST))
        a = naive_lkf(d, 0.2, cfg, seed=2)
        b = naive_lkf(d, 0.2, cfg, seed=2)
        assert a.rejected == b.rejected

    def test_rejections_have_positive_w(self):
        d = score_bundle(300, seed=38, effects=((0, None, 4.0),
                                                 (1, None, 4.0),
                                                 (2, None, 4.0)))
        disc = global_kf(d, 0.4, seed=3, opts=FAST)
        w_of = dict(zip(disc.stats.ids, disc.stats.w))
        for hid in disc.rejected:
            assert w_of[hid] >= disc.threshold > 0


class TestFlipSign:
    def test_null_w_signs_are_fair_coins(self):
        # on null-only data the signs of nonzero statistics are symmetric
        from lokf.simlab import gen_hetero
        from lokf.rng import derive_rng
        pos = 0
        nonzero = 0
        part = PartitionSet(((0,), (), (1,), (0, 1), ()))
        cfg = LkfConfig(scores=ScoreConfig(path="batch", use_prior=False,
                                           min_subgroup=20, opts=FAST))
        for s in range(200):
            data = gen_hetero(320, seed=9000 + s)
            b = data.bundle
            noise = derive_rng(s, "null-y").standard_normal(b.n)
            y_null = b.z @ data.truth.gamma + noise
            d = DataBundle(b.x[:, :5], b.xk[:, :5], y_null, b.z)
            mask = CloakMask.draw(d.n, d.p, 0.5, seed=s)
            disc = lkf_fixed(d, mask, part, 0.1, cfg, seed=s)
            w = disc.stats.w
            pos += int(np.sum(w > 0))
            nonzero += int(np.sum(w != 0))
        frac = pos / nonzero
        se = 0.5 / np.sqrt(nonzero)
        assert abs(frac - 0.5) <= 3 * se, \
            f"sign fraction {frac:.4f} ({nonzero} stats, se {se:.4f})"


class TestDiscoveryCsv:
    def test_schema(self, tmp_path):
        d = score_bundle(300, seed=39, effects=((0, None, 4.0),
                                                 (1, None, 4.0),
                                                 (2, None, 4.0),
                                                 (3, None, 4.0)))
        disc = global_kf(d, 0.5, seed=3, opts=FAST)
        path = tmp_path / "disc.csv"
        write_discoveries_csv(disc, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == ("variable,block,subgroup_label,"
                            "subgroup_definition,w,threshold,alpha")
        assert len(lines) == 1 + disc.n_rejected
        if disc.n_rejected:
            first = lines[1].split(",")
            assert first[3] == "all"
