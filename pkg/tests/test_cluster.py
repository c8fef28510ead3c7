import numpy as np
import pytest

from vitalclust.cluster import (
    DBSCAN,
    ClusterParams,
    FeatureMismatchError,
    KMeans,
    KMedoids,
    KShape,
    assign_frozen,
    extract_shape,
    fit_cluster_model,
    kmeans_plusplus,
    lloyd,
    load_model,
    multichannel_sbd,
    pam_build,
    pam_swap,
    power_iteration,
    save_model,
    sbd,
)
from vitalclust.features import FeaturePreprocessor, assemble_matrix, znorm
from vitalclust.model import NOISE, FeatureMatrix
from vitalclust.validity import ari

from oracles import dbscan_oracle, kmeans_partition_oracle, pam_oracle, sbd_oracle

FOUR = np.array([[0.0], [1.0], [9.0], [10.0]])


class TestKMeans:
    def test_four_points(self):
        est = KMeans(2, random_state=1).fit(FOUR)
        assert est.inertia_ == pytest.approx(1.0)
        assert est.inertia_ == pytest.approx(kmeans_partition_oracle(FOUR.tolist(), 2))
        assert sorted(est.cluster_centers_.ravel()) == [0.5, 9.5]
        assert est.labels_[0] == est.labels_[1] != est.labels_[2] == est.labels_[3]

    def test_single_cluster(self, rng):
        X = rng.normal(size=(20, 3))
        est = KMeans(1).fit(X)
        np.testing.assert_allclose(est.cluster_centers_[0], X.mean(axis=0))
        assert est.inertia_ == pytest.approx(np.sum((X - X.mean(axis=0)) ** 2))

    def test_duplicates_at_k_sites(self):
        X = np.repeat([[0.0, 0.0], [5.0, 1.0], [-3.0, 7.0]], 4, axis=0)
        assert KMeans(3).fit(X).inertia_ == 0.0

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_exhaustive_partition(self, seed):
        X = np.random.default_rng(seed).normal(size=(8, 2))
        est = KMeans(2, n_init=10, random_state=seed).fit(X)
        assert est.inertia_ >= kmeans_partition_oracle(X.tolist(), 2) - 1e-9

    @pytest.mark.parametrize("seed", range(10))
    def test_lloyd_monotone(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(200, 4))
        init = X[kmeans_plusplus(X, 5, rng)]
        _, _, final, hist = lloyd(X, init, max_iter=300, tol=0.0)
        assert all(b <= a * (1 + 1e-12) for a, b in zip(hist, hist[1:]))
        assert final == hist[-1]

    def test_empty_cluster_repaired(self):
        X = np.array([[0.0], [0.1], [0.2], [10.0]])
        labels, centers, _, _ = lloyd(X, np.array([[0.1], [100.0], [200.0]]))
        assert sorted(set(labels.tolist())) == [0, 1, 2]

    def test_workers_and_restarts_deterministic(self, rng):
        X = rng.normal(size=(150, 3))
        a = KMeans(4, random_state=5).fit(X)
        b = KMeans(4, random_state=5, n_jobs=3).fit(X)
        assert np.array_equal(a.labels_, b.labels_) and a.inertia_ == b.inertia_

    def test_predict_tie_goes_low(self):
        est = KMeans(2).fit(np.array([[0.0], [0.0], [2.0], [2.0]]))
        order = np.argsort(est.cluster_centers_.ravel())
        assert est.predict([[1.0]])[0] == min(order)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            KMeans(5).fit(FOUR)
        with pytest.raises(ValueError):
            KMeans(0).fit(FOUR)


class TestKMedoids:
    def test_four_points(self):
        est = KMedoids(2).fit(FOUR)
        cost, _ = pam_oracle(FOUR.tolist(), 2)
        assert est.inertia_ == pytest.approx(2.0) == pytest.approx(cost)
        meds = sorted(FOUR[est.medoid_indices_, 0])
        assert meds[0] in (0.0, 1.0) and meds[1] in (9.0, 10.0)

    def test_every_point_a_medoid(self, rng):
        X = rng.normal(size=(6, 2))
        est = KMedoids(6).fit(X)
        assert est.inertia_ == 0.0
        assert sorted(est.medoid_indices_) == list(range(6))

    @pytest.mark.parametrize("seed", range(6))
    def test_duplicated_dataset_same_medoids(self, seed):
        X = np.random.default_rng(seed).normal(size=(7, 2))
        once = KMedoids(2).fit(X)
        twice = KMedoids(2).fit(np.concatenate([X, X]))
        a = sorted(map(tuple, once.cluster_centers_))
        b = sorted(map(tuple, twice.cluster_centers_))
        assert a == b
        assert twice.inertia_ == pytest.approx(2 * once.inertia_)
        assert once.inertia_ == pytest.approx(pam_oracle(X.tolist(), 2)[0])

    @pytest.mark.parametrize("seed", range(10))
    def test_swap_cost_strictly_decreases(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(60, 3))
        D = np.linalg.norm(X[:, None] - X[None], axis=-1)
        meds, hist = pam_swap(D, [0, 1, 2, 3])
        assert all(b < a for a, b in zip(hist, hist[1:]))
        assert hist[-1] == pytest.approx(np.min(D[:, meds], axis=1).sum())
        assert len(set(meds)) == 4

    def test_build_is_greedy(self):
        D = np.abs(FOUR - FOUR.T)
        assert pam_build(D, 1) in ([1], [2])


class TestSBD:
    def test_self_distance(self, rng):
        x = rng.normal(size=8)
        assert sbd(x, x) == (pytest.approx(0.0, abs=1e-12), 0)

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 12))
        x, y = rng.normal(size=n), rng.normal(size=n)
        d, w = sbd(x, y)
        ref_d, ref_w = sbd_oracle(x, y)
        assert abs(d - ref_d) <= 1e-12 and w == ref_w
        d2, w2 = sbd(y, x)
        assert d2 == pytest.approx(d, abs=1e-12)

    def test_shifted_copy(self):
        x = np.array([0, 0, 1, 3, 1, 0, 0, 0], dtype=float)
        y = np.roll(x, 2)
        d, w = sbd(y, x)
        assert w == 2
        assert d == pytest.approx(sbd_oracle(y, x)[0], abs=1e-12)

    def test_constant_series(self, rng):
        assert sbd(np.ones(8), rng.normal(size=8)) == (1.0, 0)

    def test_bad_input(self):
        with pytest.raises(ValueError):
            sbd([1, 2, 3], [1, 2])

    def test_multichannel_is_mean_ncc_at_shared_shift(self, rng):
        shape = znorm(rng.normal(size=(3, 8)))
        grids = rng.normal(size=(5, 3, 8))
        dist, shifts = multichannel_sbd(shape, grids)
        for i in range(5):
            best, best_w = -np.inf, None
            for w in sorted(range(-7, 8), key=lambda w: (abs(w), w)):
                total = 0.0
                for c in range(3):
                    s, g = shape[c], znorm(grids[i, c])
                    cc = sum(s[t] * g[t - w] for t in range(8) if 0 <= t - w < 8)
                    total += cc / (np.linalg.norm(s) * np.linalg.norm(g))
                if total / 3 > best:
                    best, best_w = total / 3, w
            assert dist[i] == pytest.approx(1 - best, abs=1e-12)
            assert shifts[i] == best_w


class TestKShape:
    def test_power_iteration_vs_eigh(self, rng):
        # Centred scatter matrices of noisy copies of one shape, as produced
        # by shape extraction.
        Q = np.eye(8) - np.ones((8, 8)) / 8
        checked = 0
        for _ in range(50):
            members = rng.normal(size=8) + rng.uniform(0.2, 1.5) * rng.normal(size=(30, 8))
            M = Q @ (members.T @ members) @ Q
            vals, vecs = np.linalg.eigh(M)
            if vals[-2] / vals[-1] > 0.8:
                continue
            v = power_iteration(M)
            assert min(np.abs(v - vecs[:, -1]).max(), np.abs(v + vecs[:, -1]).max()) < 1e-6
            checked += 1
        assert checked >= 20
        assert not power_iteration(np.zeros((8, 8))).any()

    def test_shape_of_identical_members(self, rng):
        x = rng.normal(size=8)
        shape = extract_shape(np.tile(znorm(x), (5, 1)))
        np.testing.assert_allclose(shape, znorm(x), atol=1e-6)

    def test_identical_patients_k1(self, rng):
        grid = rng.normal(size=(5, 8))
        est = KShape(1, n_init=2, random_state=3).fit(np.tile(grid, (6, 1, 1)))
        np.testing.assert_allclose(est.cluster_centers_[0], znorm(grid), atol=1e-6)
        assert est.inertia_ == pytest.approx(0.0, abs=1e-9)

    def test_shifted_waveforms_separate(self):
        rng = np.random.default_rng(0)
        T = 32
        t = np.arange(T)
        grids, truth = [], []
        for i in range(40):
            s = int(rng.integers(-3, 4))
            if i % 2:
                wave = np.sin(2 * np.pi * (t - s) / 16.0)
            else:
                wave = ((t - s) % 16 < 4).astype(float)
            grids.append((wave + 0.05 * rng.normal(size=T))[None, :])
            truth.append(i % 2)
        est = KShape(2, n_init=3, random_state=11).fit(np.array(grids))
        assert ari(truth, est.labels_) == 1.0

    def test_predict_matches_labels(self, small_cohort):
        grids = small_cohort[0].grids()
        est = KShape(3, n_init=2, random_state=0).fit(grids)
        assert np.array_equal(est.predict(grids), est.labels_)
        assert est.transform(grids).shape == (len(grids), 3)
        assert set(est.labels_.tolist()) == {0, 1, 2}


class TestDBSCAN:
    def test_hand_example(self):
        X = np.array([[0.0], [0.5], [1.0], [10.0]])
        est = DBSCAN(eps=1.0, min_pts=3).fit(X)
        assert est.labels_.tolist() == [0, 0, 0, NOISE]
        assert est.labels_.tolist() == dbscan_oracle(X.tolist(), 1.0, 3)

    def test_huge_eps(self, rng):
        est = DBSCAN(eps=1e6, min_pts=1).fit(rng.normal(size=(10, 2)))
        assert set(est.labels_.tolist()) == {0}

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(int(rng.integers(5, 40)), int(rng.integers(1, 4))))
        eps = float(rng.uniform(0.3, 1.2))
        m = int(rng.integers(1, 6))
        assert DBSCAN(eps=eps, min_pts=m).fit(X).labels_.tolist() == dbscan_oracle(X.tolist(), eps, m)

    def test_default_eps_and_predict(self, rng):
        X = np.concatenate([rng.normal(0, 0.1, (20, 2)), rng.normal(5, 0.1, (20, 2))])
        est = DBSCAN(min_pts=4).fit(X)
        assert est.eps_ > 0 and est.n_clusters_ == 2
        assert est.predict([[0.0, 0.0], [100.0, 100.0]]).tolist() == [est.labels_[0], NOISE]


class TestFrozen:
    def fitted(self, small_cohort, algorithm="kmeans", k=3):
        cohort, _ = small_cohort
        raw = assemble_matrix(cohort)
        feats = FeaturePreprocessor(0.9).fit(raw).transform(raw)
        params = ClusterParams(algorithm, k, seed=4, n_init=3)
        return cohort, raw, fit_cluster_model(params, feats, grids=cohort.grids())

    @pytest.mark.parametrize("algorithm", ["kmeans", "kmedoids", "kshape", "dbscan"])
    def test_training_patients_keep_labels(self, small_cohort, algorithm):
        cohort, raw, model = self.fitted(small_cohort, algorithm)
        got = assign_frozen(model, raw, grids=cohort.grids())
        want = [model.labels[p] for p in cohort.patient_ids]
        if algorithm == "dbscan":
            core = set(model.core_ids)
            idx = [i for i, p in enumerate(cohort.patient_ids) if p in core]
            assert [got[i] for i in idx] == [want[i] for i in idx]
        else:
            assert got.tolist() == want

    def test_tie_goes_to_lowest_index(self):
        from vitalclust.model import ClusterModel
        model = ClusterModel("kmeans", 0, {}, ["f0"], [[0.0, 1.0]], [[2.0], [0.0]],
                             {"a": 0, "b": 1}, k=2)
        new = FeatureMatrix(["x"], ["f0"], [[1.0]])
        assert assign_frozen(model, new).tolist() == [0]

    def test_row_order_invariance(self, small_cohort):
        cohort, raw, model = self.fitted(small_cohort)
        feats = FeaturePreprocessor(0.9).fit(raw).transform(raw)
        perm = np.random.default_rng(0).permutation(len(raw.patient_ids))
        shuffled = FeatureMatrix([feats.patient_ids[i] for i in perm], feats.feature_names,
                                 feats.values[perm], feats.column_stats)
        again = fit_cluster_model(ClusterParams("kmeans", 3, seed=4, n_init=3), shuffled)
        assert again.labels == model.labels

    def test_save_load(self, small_cohort, tmp_path):
        cohort, raw, model = self.fitted(small_cohort, "kshape")
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert back.labels == model.labels
        grids = cohort.grids()
        assert np.array_equal(assign_frozen(back, grids=grids), assign_frozen(model, grids=grids))

    def test_feature_mismatch(self, small_cohort):
        _, raw, model = self.fitted(small_cohort)
        short = raw.columns(raw.feature_names[:5])
        with pytest.raises(FeatureMismatchError, match="lacks"):
            assign_frozen(model, short)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            ClusterParams("spectral")
        with pytest.raises(ValueError):
            ClusterParams("kmeans", k=0)
        with pytest.raises(ValueError):
            ClusterParams("dbscan", eps=-1.0)
