"""Trainer tests: whitened block features, alternating descent, persistence.

The reparameterization identities are spot-checked here on random configs
(the full 200-configuration sweep is an acceptance test); block updates are
checked against analytic optima; the zero-mu path is checked against the
KKT-verified max-margin reference.
"""

import numpy as np
import pytest

from oracles import hinge_objective, max_margin_reference
from spmd.data import LabeledDataset, synth_blobs
from spmd.tensor import DenseTensor, inner, unvec
from spmd.trainer import (Hyper, MetricCollapseError, TrainConfig, WeightModel,
                          apply_bias, block_update, core_features, load_model,
                          mode_features_cp, mode_features_tucker, predict,
                          primal_objective, psd_root, decision_scores,
                          save_model, train, _mode_ranks, _Workspace)
from spmd.tensor import cp_reconstruct, tucker_reconstruct, unfold, vec


def random_dataset(rng, dims, n):
    samples = rng.standard_normal((n, int(np.prod(dims))))
    labels = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    labels[0], labels[1] = 1.0, -1.0
    return LabeledDataset(samples, dims, labels)


class TestModeRanks:
    def test_vector_needs_order_1(self):
        assert _mode_ranks("vector", [], 1) == (1,)
        with pytest.raises(ValueError, match="order-1"):
            _mode_ranks("vector", [], 2)

    def test_rank1_fixed(self):
        assert _mode_ranks("rank1", [], 3) == (1, 1, 1)
        with pytest.raises(ValueError, match="rank1"):
            _mode_ranks("rank1", [2], 2)

    def test_cp_single_shared_rank(self):
        assert _mode_ranks("cp", [2], 3) == (2, 2, 2)
        with pytest.raises(ValueError, match="single"):
            _mode_ranks("cp", [2, 2], 2)

    def test_tucker_per_mode(self):
        assert _mode_ranks("tucker", [1, 2, 3], 3) == (1, 2, 3)
        with pytest.raises(ValueError, match="per mode"):
            _mode_ranks("tucker", [1, 2], 3)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            _mode_ranks("butterfly", [], 2)


class TestPsdRoot:
    def test_reproduces_healthy_metric(self):
        rng = np.random.default_rng(0)
        M = rng.standard_normal((4, 4))
        A = M @ M.T + np.eye(4)
        root = psd_root(A)
        np.testing.assert_allclose(root.half @ root.half.T, A, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(root.inv_half @ root.half, np.eye(4),
                                   rtol=0, atol=1e-12)
        assert root.clamped == 0

    def test_structurally_singular_metric(self):
        # rank-1 A: the floor only nudges the null direction, so norms built
        # through the root stay within round-off of the true value
        rng = np.random.default_rng(1)
        p = rng.standard_normal((2, 1)) * 3.0
        A = p @ p.T
        root = psd_root(A)
        assert root.clamped == 1
        V = rng.standard_normal((5, 2))
        lhs = float(vec(V @ root.half) @ vec(V @ root.half))
        rhs = float(np.sum((V @ p) ** 2))
        assert abs(lhs - rhs) <= 1e-12 * (1 + rhs)

    def test_collapse_names_context(self):
        with pytest.raises(MetricCollapseError, match="mode 2"):
            psd_root(np.zeros((3, 3)), context="mode 2 metric")

    def test_non_finite_rejected(self):
        with pytest.raises(MetricCollapseError, match="finite"):
            psd_root(np.full((2, 2), np.nan))


class TestWorkspace:
    def test_mode_unfoldings_match_per_sample_unfold(self):
        rng = np.random.default_rng(2)
        data = random_dataset(rng, (2, 3, 2), 4)
        ws = _Workspace(data)
        for m in (1, 2, 3):
            stacks = ws.mode_unfoldings(m)
            for i in range(4):
                np.testing.assert_array_equal(stacks[i], unfold(data.sample(i), m))


class TestModeFeatureIdentities:
    def test_tucker_identity_factors_reduce_to_unfolding(self):
        rng = np.random.default_rng(3)
        data = random_dataset(rng, (3, 3), 4)
        core = DenseTensor.from_array(np.eye(3))
        feats, root = mode_features_tucker(data, [np.eye(3), np.eye(3)], core, 1)
        for i in range(4):
            np.testing.assert_allclose(feats[:, i], vec(unfold(data.sample(i), 1)),
                                       rtol=1e-12, atol=1e-12)

    def test_cp_rank1_unit_factors_contract(self):
        rng = np.random.default_rng(4)
        data = random_dataset(rng, (3, 4), 5)
        u = rng.standard_normal(4)
        u /= np.linalg.norm(u)
        feats, root = mode_features_cp(data, [np.zeros((3, 1)), u[:, None]], 1)
        for i in range(5):
            np.testing.assert_allclose(feats[:, i], unfold(data.sample(i), 1) @ u,
                                       rtol=1e-10, atol=1e-12)

    def test_cp_rank1_bilinear_form(self):
        rng = np.random.default_rng(5)
        data = random_dataset(rng, (3, 4), 5)
        v1, v2 = rng.standard_normal(3), rng.standard_normal(4)
        w = cp_reconstruct([v1[:, None], v2[:, None]])
        feats, root = mode_features_cp(data, [v1[:, None], v2[:, None]], 1)
        vv = vec(v1[:, None] @ root.half)
        for i in range(5):
            z = data.sample(i).to_array()
            assert feats[:, i] @ vv == pytest.approx(float(v1 @ z @ v2), rel=1e-10)
            assert feats[:, i] @ vv == pytest.approx(inner(w, data.sample(i)), rel=1e-10)

    @pytest.mark.parametrize("kind", ["cp", "tucker"])
    def test_identities_random_configs(self, kind):
        rng = np.random.default_rng(6)
        for _ in range(10):
            order = int(rng.integers(2, 5))
            dims = tuple(int(d) for d in rng.integers(2, 6, size=order))
            if kind == "tucker":
                ranks = tuple(int(r) for r in rng.integers(1, 4, size=order))
                factors = [rng.standard_normal((d, r)) for d, r in zip(dims, ranks)]
                core = DenseTensor(ranks, rng.standard_normal(int(np.prod(ranks))))
                w = tucker_reconstruct(core, factors)
            else:
                r = int(rng.integers(1, 4))
                factors = [rng.standard_normal((d, r)) for d in dims]
                core = None
                w = cp_reconstruct(factors)
            data = random_dataset(rng, dims, 4)
            wn = float(w.data @ w.data)
            for m in range(1, order + 1):
                if kind == "tucker":
                    feats, root = mode_features_tucker(data, factors, core, m)
                else:
                    feats, root = mode_features_cp(data, factors, m)
                v = vec(factors[m - 1] @ root.half)
                assert float(v @ v) == pytest.approx(wn, abs=1e-10 * (1 + wn))
                ips = feats.T @ v
                for i in range(4):
                    want = inner(w, data.sample(i))
                    assert ips[i] == pytest.approx(want, abs=1e-10 * (1 + abs(want)))


class TestCoreFeatures:
    def test_orthonormal_factors_whiten_by_rotation(self):
        # orthonormal factors give K = I up to round-off; the whitening is
        # then an orthogonal map, so features keep the raw Gram exactly
        rng = np.random.default_rng(7)
        data = random_dataset(rng, (4, 3), 4)
        q1, _ = np.linalg.qr(rng.standard_normal((4, 2)))
        q2, _ = np.linalg.qr(rng.standard_normal((3, 2)))
        feats, root = core_features(data, [q1, q2])
        np.testing.assert_allclose(root.half @ root.half.T, np.eye(4),
                                   rtol=0, atol=1e-12)
        np.testing.assert_allclose(root.inv_half @ root.inv_half.T, np.eye(4),
                                   rtol=0, atol=1e-12)
        raw = np.stack([vec(q1.T @ data.sample(i).to_array() @ q2)
                        for i in range(4)], axis=1)
        np.testing.assert_allclose(feats.T @ feats, raw.T @ raw,
                                   rtol=1e-10, atol=1e-12)

    def test_identity_factors_give_vec_sample(self):
        rng = np.random.default_rng(8)
        data = random_dataset(rng, (2, 3), 4)
        feats, root = core_features(data, [np.eye(2), np.eye(3)])
        for i in range(4):
            np.testing.assert_allclose(feats[:, i], data.sample(i).data,
                                       rtol=1e-12, atol=1e-12)

    def test_identities_random(self):
        rng = np.random.default_rng(9)
        dims, ranks = (3, 4, 2), (2, 2, 2)
        factors = [rng.standard_normal((d, r)) for d, r in zip(dims, ranks)]
        core = DenseTensor(ranks, rng.standard_normal(8))
        w = tucker_reconstruct(core, factors)
        data = random_dataset(rng, dims, 5)
        feats, root = core_features(data, factors)
        f = root.half.T @ core.data
        wn = float(w.data @ w.data)
        assert float(f @ f) == pytest.approx(wn, abs=1e-10 * (1 + wn))
        for i in range(5):
            want = inner(w, data.sample(i))
            assert feats[:, i] @ f == pytest.approx(want, abs=1e-10 * (1 + abs(want)))


class TestBlockUpdate:
    def test_canonical_two_point_max_margin(self):
        feats = np.array([[1.0, -1.0]])
        labels = np.array([1.0, -1.0])
        v, sol, info = block_update(feats, labels, Hyper(0.0, 0.0, 100.0))
        assert v[0] == pytest.approx(1.0, abs=1e-8)
        assert sol.converged
        assert not info["ridge_added"]

    def test_mean_only_direction(self):
        rng = np.random.default_rng(10)
        Z = rng.standard_normal((3, 6))
        t = np.where(rng.random(6) < 0.5, 1.0, -1.0)
        v, *_ = block_update(Z, t, Hyper(0.0, 5.0, 1e-10))
        np.testing.assert_allclose(v, (5.0 / 6) * (Z @ t), rtol=1e-6)

    def test_single_sample_margin_activity(self):
        feats = np.array([[1.0]])
        labels = np.array([1.0])
        v, *_ = block_update(feats, labels, Hyper(0.0, 0.0, 2.0))
        assert v[0] == pytest.approx(1.0, abs=1e-10)
        v, *_ = block_update(feats, labels, Hyper(0.0, 0.0, 0.5))
        assert v[0] == pytest.approx(0.5, abs=1e-10)


class TestPrimalObjective:
    def test_zero_weight(self):
        rng = np.random.default_rng(11)
        data = random_dataset(rng, (2, 2), 6)
        w = DenseTensor((2, 2), np.zeros(4))
        lam = 3.0
        assert primal_objective(w, data, Hyper(1.0, 1.0, lam)) == pytest.approx(lam)

    def test_svm_no_violations(self):
        samples = np.array([[2.0], [-2.0]])
        data = LabeledDataset(samples, (1,), np.array([1.0, -1.0]))
        w = DenseTensor((1,), np.array([1.0]))
        assert primal_objective(w, data, Hyper(0.0, 0.0, 1.0)) == pytest.approx(0.5)

    def test_term_by_term_recomposition(self):
        from spmd.margins import summarize_margins
        rng = np.random.default_rng(12)
        data = random_dataset(rng, (2, 3), 8)
        w = DenseTensor((2, 3), rng.standard_normal(6))
        hyper = Hyper(0.7, 1.3, 2.0)
        s = summarize_margins(w, data)
        want = (0.5 * w.norm() ** 2 + 0.7 * s.variance - 1.3 * s.mean
                + 2.0 / 8 * np.maximum(0, 1 - s.margins).sum())
        assert primal_objective(w, data, hyper) == pytest.approx(want, rel=1e-12)


def descent_ok(objectives):
    j = np.array(objectives)
    return bool(np.all(np.diff(j) <= 1e-8 * (1 + np.abs(j[:-1]))))


class TestTrain:
    def test_separable_blobs_fit(self):
        data = synth_blobs((4, 3), 20, margin=2.0, noise=0.1, seed=0)
        model, report = train(data, TrainConfig(kind="rank1", lam=10.0, seed=1))
        assert report.converged
        assert descent_ok(report.objectives)
        scores = decision_scores(model, data.samples, data.dims)
        assert np.mean(np.sign(scores) == data.labels) == 1.0

    @pytest.mark.parametrize("kind,ranks", [("cp", [2]), ("tucker", [2, 2])])
    def test_decomposed_kinds_descend_and_converge(self, kind, ranks):
        data = synth_blobs((4, 3), 15, margin=1.5, noise=0.3, seed=2)
        model, report = train(data, TrainConfig(kind=kind, ranks=ranks, seed=3))
        assert report.converged
        assert descent_ok(report.objectives)
        assert report.block_labels[0] == "init"
        expected_labels = {"mode1", "mode2"} | ({"core"} if kind == "tucker" else set())
        assert set(report.block_labels[1:]) == expected_labels

    def test_order1_vector_equals_rank1(self):
        data = synth_blobs((6,), 10, margin=1.0, noise=0.5, seed=4)
        m_vec, r_vec = train(data, TrainConfig(kind="vector", seed=5))
        m_r1, r_r1 = train(data, TrainConfig(kind="rank1", seed=5))
        w_vec = m_vec.reconstruct().data
        w_r1 = m_r1.reconstruct().data
        np.testing.assert_allclose(w_vec, w_r1, atol=1e-8)
        assert r_vec.final_objective == pytest.approx(r_r1.final_objective, abs=1e-8)

    def test_full_rank_tucker_matches_vector_on_flat_data(self):
        data = synth_blobs((3, 3), 12, margin=1.0, noise=0.4, seed=6)
        flat = LabeledDataset(data.samples, (9,), data.labels)
        m_t, r_t = train(data, TrainConfig(kind="tucker", ranks=[3, 3], seed=7))
        m_v, r_v = train(flat, TrainConfig(kind="vector", seed=7))
        assert r_t.final_objective == pytest.approx(r_v.final_objective, abs=1e-6)

    def test_zero_mu_matches_max_margin_reference(self):
        rng = np.random.default_rng(13)
        for trial in range(3):
            n = int(rng.integers(6, 15))
            samples = rng.standard_normal((n, 5))
            labels = np.where(rng.random(n) < 0.5, 1.0, -1.0)
            labels[0], labels[1] = 1.0, -1.0
            data = LabeledDataset(samples, (5,), labels)
            lam = float(rng.choice([0.5, 1.0, 4.0]))
            cfg = TrainConfig(kind="vector", mu1=0.0, mu2=0.0, lam=lam,
                              tol=1e-6, qp_tol=1e-10, seed=trial)
            model, report = train(data, cfg)
            _, ref_obj = max_margin_reference(samples, labels, lam)
            assert report.final_objective == pytest.approx(ref_obj, abs=1e-6)

    def test_stm_mode_blocks_reach_fixed_point(self):
        # at convergence each mode's block re-update leaves the weight put
        data = synth_blobs((3, 4), 15, margin=1.5, noise=0.2, seed=8)
        cfg = TrainConfig(kind="rank1", mu1=0.0, mu2=0.0, lam=1.0,
                          tol=1e-5, max_outer=300, qp_tol=1e-10, seed=9)
        model, report = train(data, cfg)
        assert report.converged
        w_before = model.reconstruct()
        factors = [f.copy() for f in model.factors]
        feats, root = mode_features_cp(
            LabeledDataset(data.samples, data.dims, data.labels), factors, 1)
        v, *_ = block_update(feats, data.labels, model.hyper, qp_tol=1e-10)
        factors[0] = unvec(v, (3, 1)) @ root.inv_half
        w_after = cp_reconstruct(factors)
        drift = float(np.linalg.norm(w_after.data - w_before.data))
        assert drift <= 1e-2 * (1 + w_before.norm())

    def test_unconverged_warns_and_flags(self):
        data = synth_blobs((3, 3), 10, margin=0.5, noise=1.0, seed=10)
        with pytest.warns(UserWarning, match="no convergence"):
            model, report = train(
                data, TrainConfig(kind="rank1", tol=1e-12, max_outer=1, seed=11))
        assert not report.converged
        assert report.iterations == 1

    def test_convergence_satisfies_stop_rule(self):
        data = synth_blobs((4, 3), 15, margin=1.5, noise=0.3, seed=12)
        cfg = TrainConfig(kind="cp", ranks=[2], seed=13)
        model, report = train(data, cfg)
        assert report.converged
        assert report.history[-1]["rel_change"] <= cfg.tol

    def test_determinism_bit_identical(self):
        data = synth_blobs((3, 4), 12, margin=1.0, noise=0.5, seed=14)
        cfg = TrainConfig(kind="tucker", ranks=[2, 2], seed=15)
        _, r1 = train(data, cfg)
        _, r2 = train(data, cfg)
        assert r1.objectives == r2.objectives
        assert r1.final_objective == r2.final_objective

    def test_validation(self):
        rng = np.random.default_rng(16)
        one = LabeledDataset(rng.standard_normal((1, 4)), (4,), np.array([1.0]))
        with pytest.raises(ValueError, match="two samples"):
            train(one, TrainConfig(kind="vector"))
        same = LabeledDataset(rng.standard_normal((3, 4)), (4,), np.ones(3))
        with pytest.raises(ValueError, match="each class"):
            train(same, TrainConfig(kind="vector"))
        data = random_dataset(rng, (4,), 4)
        with pytest.raises(ValueError, match="lambda"):
            train(data, TrainConfig(kind="vector", lam=0.0))
        with pytest.raises(ValueError, match="nonnegative"):
            train(data, TrainConfig(kind="vector", mu1=-1.0))

    def test_rank_exceeding_mode_size_warns(self):
        data = synth_blobs((2, 3), 8, margin=1.0, noise=0.2, seed=17)
        with pytest.warns(UserWarning, match="exceeds mode size"):
            train(data, TrainConfig(kind="tucker", ranks=[3, 2], max_outer=2,
                                    tol=1.0, seed=18))


class TestPrediction:
    @pytest.mark.filterwarnings("ignore:no convergence")
    def test_scores_match_reconstruction(self):
        rng = np.random.default_rng(19)
        data = synth_blobs((3, 2, 2), 8, margin=1.0, noise=0.3, seed=20)
        for kind, ranks in [("rank1", []), ("cp", [2]), ("tucker", [2, 1, 2])]:
            model, _ = train(data, TrainConfig(kind=kind, ranks=ranks,
                                               max_outer=3, tol=1e-4, seed=21))
            w = model.reconstruct()
            scores = decision_scores(model, data.samples, data.dims)
            ref = data.samples @ w.data
            np.testing.assert_allclose(scores, ref, rtol=1e-10, atol=1e-12)

    def test_vector_kind_scores(self):
        data = synth_blobs((5,), 8, margin=1.0, noise=0.3, seed=22)
        model, _ = train(data, TrainConfig(kind="vector", seed=23))
        w = model.reconstruct()
        np.testing.assert_allclose(decision_scores(model, data.samples, (5,)),
                                   data.samples @ w.data, rtol=1e-12)

    def test_predict_sign_convention(self):
        v1 = np.array([[1.0], [0.5]])
        v2 = np.array([[1.0], [-1.0]])
        model = WeightModel("rank1", (2, 2), (1, 1), (v1, v2), None,
                            Hyper(1, 1, 1))
        w = model.reconstruct()
        label, score = predict(model, w)
        assert label == 1 and score > 0
        neg = DenseTensor(w.dims, -w.data)
        label, score = predict(model, neg)
        assert label == -1 and score < 0

    def test_zero_score_maps_to_plus_one(self):
        model = WeightModel("rank1", (2,), (1,), (np.zeros((2, 1)),), None,
                            Hyper(1, 1, 1))
        label, score = predict(model, np.array([1.0, 2.0]))
        assert label == 1 and score == 0.0

    def test_shape_mismatch(self):
        model = WeightModel("rank1", (2, 2), (1, 1),
                            (np.ones((2, 1)), np.ones((2, 1))), None, Hyper(1, 1, 1))
        with pytest.raises(ValueError, match="dims"):
            decision_scores(model, np.zeros((1, 6)), (2, 3))


class TestBias:
    def test_apply_bias_appends_ones_slab(self):
        rng = np.random.default_rng(24)
        data = random_dataset(rng, (2, 3), 4)
        aug = apply_bias(data)
        assert aug.dims == (3, 3)
        arr = aug.arrays()
        np.testing.assert_array_equal(arr[:, :2, :], data.arrays())
        np.testing.assert_array_equal(arr[:, 2, :], np.ones((4, 3)))

    def test_bias_model_predicts_raw_samples(self):
        data = synth_blobs((3, 2), 10, margin=1.5, noise=0.2, seed=25)
        model, _ = train(data, TrainConfig(kind="rank1", bias_feature=True,
                                           seed=26))
        assert model.shape == (4, 2)
        aug = apply_bias(data)
        for i in range(3):
            l_raw, s_raw = predict(model, data.sample(i))
            l_aug, s_aug = predict(model, aug.sample(i))
            assert s_raw == pytest.approx(s_aug, rel=1e-12)
            assert l_raw == l_aug

    def test_bias_shape_mismatch_message(self):
        data = synth_blobs((3, 2), 8, margin=1.5, noise=0.2, seed=27)
        model, _ = train(data, TrainConfig(kind="rank1", bias_feature=True,
                                           max_outer=2, tol=1.0, seed=28))
        with pytest.raises(ValueError, match="pre-bias"):
            predict(model, np.zeros((5, 2)))


class TestPersistence:
    @pytest.mark.filterwarnings("ignore:no convergence")
    @pytest.mark.parametrize("kind,ranks", [("vector", []), ("rank1", []),
                                            ("cp", [2]), ("tucker", [2, 2])])
    def test_round_trip_bit_exact(self, tmp_path, kind, ranks):
        shape = (6,) if kind == "vector" else (3, 4)
        data = synth_blobs(shape, 8, margin=1.0, noise=0.3, seed=29)
        model, _ = train(data, TrainConfig(kind=kind, ranks=ranks, max_outer=3,
                                           tol=1e-3, seed=30))
        path = str(tmp_path / "model.spmd")
        save_model(path, model)
        back = load_model(path)
        assert back.kind == model.kind
        assert back.shape == model.shape
        assert back.ranks == model.ranks
        assert back.hyper == model.hyper
        assert back.bias_feature == model.bias_feature
        for a, b in zip(model.factors, back.factors):
            np.testing.assert_array_equal(a, b)
        if kind == "tucker":
            np.testing.assert_array_equal(model.core.data, back.core.data)
        sample = data.sample(0)
        assert predict(model, sample) == predict(back, sample)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.spmd"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(ValueError, match="magic"):
            load_model(str(path))

    def test_bad_version(self, tmp_path):
        import struct
        path = tmp_path / "ver.spmd"
        path.write_bytes(b"SPMD" + struct.pack("<IBBB", 99, 1, 0, 1))
        with pytest.raises(ValueError, match="version"):
            load_model(str(path))

    def test_truncated(self, tmp_path):
        data = synth_blobs((4,), 6, margin=1.0, noise=0.2, seed=31)
        model, _ = train(data, TrainConfig(kind="vector", max_outer=2, tol=1.0,
                                           seed=32))
        path = str(tmp_path / "model.spmd")
        save_model(path, model)
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_model(path)

    def test_trailing_bytes(self, tmp_path):
        data = synth_blobs((4,), 6, margin=1.0, noise=0.2, seed=33)
        model, _ = train(data, TrainConfig(kind="vector", max_outer=2, tol=1.0,
                                           seed=34))
        path = str(tmp_path / "model.spmd")
        save_model(path, model)
        with open(path, "ab") as f:
            f.write(b"\x00" * 8)
        with pytest.raises(ValueError, match="trailing"):
            load_model(path)
