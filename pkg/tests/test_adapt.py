import numpy as np
import pytest

from csalign import autodiff as ad
from csalign.adapt import (
    ScheduleConfig,
    TrainConfig,
    dla_loss,
    fla_loss,
    schedule,
    source_weights,
    train,
)
from csalign.data import SubjectDataset, Trial
from csalign.errors import SampleSizeError, ShapeError, StateError
from csalign.kernels import KernelConfig
from csalign.linalg import check_gradients
from csalign.synth import SynthConfig, generate
from csalign.alignment import euclidean_align

FIXED = KernelConfig(bandwidth_mode="fixed", sigma=1.0)


class TestSourceWeights:
    def test_uniform_for_equal_divergences(self):
        w = source_weights({"a": 0.4, "b": 0.4, "c": 0.4})
        np.testing.assert_allclose(list(w.values()), 1.0 / 3.0)

    def test_softmax_by_hand(self):
        w = source_weights({"a": 0.0, "b": np.log(2.0)})
        np.testing.assert_allclose([w["a"], w["b"]], [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)

    def test_single_source(self):
        assert source_weights({"only": 3.7}) == {"only": 1.0}

    def test_sum_to_one_and_monotone(self):
        rng = np.random.default_rng(0)
        divs = {f"s{i}": float(v) for i, v in enumerate(rng.uniform(0, 5, 8))}
        w = source_weights(divs)
        assert abs(sum(w.values()) - 1.0) < 1e-12
        order = sorted(divs, key=divs.get)
        weights = [w[k] for k in order]
        assert all(a > b for a, b in zip(weights, weights[1:]))

    def test_stability_with_large_divergences(self):
        w = source_weights({"a": 1e4, "b": 1e4 + 1.0})
        assert np.isfinite(list(w.values())).all()
        assert abs(sum(w.values()) - 1.0) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(SampleSizeError):
            source_weights({})


class TestSchedule:
    CFG = ScheduleConfig(alpha=0.7, beta=1.4, tau0=100.0, epochs=300)

    def test_midpoint_exact(self):
        alpha_tau, beta_tau = schedule(100.0, self.CFG)
        assert alpha_tau == 0.35 and beta_tau == 0.70

    def test_endpoints_within_relative_tolerance(self):
        a0, b0 = schedule(0.0, self.CFG)
        assert abs(a0 - 0.7) <= 1e-12 * 0.7
        assert b0 <= 1e-12 * 1.4
        a2, b2 = schedule(200.0, self.CFG)
        assert a2 <= 1e-12 * 0.7
        assert abs(b2 - 1.4) <= 1e-12 * 1.4

    def test_no_overflow_far_from_offset(self):
        a, b = schedule(1100.0, self.CFG)
        assert np.isfinite(a) and np.isfinite(b)
        a, b = schedule(-900.0, self.CFG)
        assert np.isfinite(a) and np.isfinite(b)

    def test_monotone_directions(self):
        taus = np.arange(0, 201, 5, dtype=float)
        alphas, betas = zip(*(schedule(t, self.CFG) for t in taus))
        assert all(a >= b for a, b in zip(alphas, alphas[1:]))
        assert all(a <= b for a, b in zip(betas, betas[1:]))


def _nodes(rng, n=8, d=3):
    return ad.Node(rng.normal(size=(n, d)))


class TestFlaLoss:
    def test_identical_batches_zero(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(8, 3))
        batches = {"a": ad.Node(z.copy()), "b": ad.Node(z.copy())}
        l_st, l_ss = fla_loss(batches, ad.Node(z.copy()), {"a": 0.5, "b": 0.5}, FIXED)
        assert float(l_st.value) == 0.0 and float(l_ss.value) == 0.0

    def test_single_source_pairwise_zero(self):
        rng = np.random.default_rng(2)
        _, l_ss = fla_loss(
            {"a": _nodes(rng)}, _nodes(rng), {"a": 1.0}, FIXED
        )
        assert float(l_ss.value) == 0.0

    def test_two_source_substitution_case(self):
        # Z_1 = Z_t != Z_2 with equal weights: the source-target term is
        # half the divergence D(Z_2, Z_t), the pairwise term is D(Z_1, Z_2),
        # and those two divergences coincide.
        rng = np.random.default_rng(3)
        z_t = rng.normal(size=(10, 3))
        z_2 = rng.normal(1.0, 1.0, size=(10, 3))
        batches = {"s1": ad.Node(z_t.copy()), "s2": ad.Node(z_2)}
        weights = {"s1": 0.5, "s2": 0.5}
        l_st, l_ss = fla_loss(batches, ad.Node(z_t.copy()), weights, FIXED)
        assert abs(float(l_st.value) - 0.5 * float(l_ss.value)) < 1e-12
        assert float(l_ss.value) > 0


class TestDlaLoss:
    def test_identical_everything_zero(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(8, 3))
        y = rng.normal(size=(8, 2))
        batches = {
            "a": (ad.Node(z.copy()), ad.Node(y.copy())),
            "b": (ad.Node(z.copy()), ad.Node(y.copy())),
        }
        l_st, l_ss = dla_loss(
            batches, (ad.Node(z.copy()), ad.Node(y.copy())),
            {"a": 0.5, "b": 0.5}, FIXED, FIXED,
        )
        assert float(l_st.value) == 0.0 and float(l_ss.value) == 0.0

    def test_single_source_pairwise_zero(self):
        rng = np.random.default_rng(5)
        batches = {"a": (_nodes(rng), _nodes(rng, d=2))}
        _, l_ss = dla_loss(
            batches, (_nodes(rng), _nodes(rng, d=2)), {"a": 1.0}, FIXED, FIXED
        )
        assert float(l_ss.value) == 0.0

    def test_hand_case_single_source(self):
        # constant features, disjoint one-hot outputs -> conditional
        # divergence 2.0; with a single source of weight 1 the ST term is 2.
        zs = ad.Node(np.ones((4, 3)))
        zt = ad.Node(np.ones((4, 3)))
        ys = ad.Node(np.tile([1.0, 0.0], (4, 1)))
        yt = ad.Node(np.tile([0.0, 1.0], (4, 1)))
        flat = KernelConfig(bandwidth_mode="fixed", sigma=1e6)
        out = KernelConfig(bandwidth_mode="fixed", sigma=1.0)
        l_st, _ = dla_loss({"s": (zs, ys)}, (zt, yt), {"s": 1.0}, flat, out)
        assert abs(float(l_st.value) - 2.0) < 1e-9


def _tiny_sources_target(seed=0, n_subjects=3, trials_per_class=8):
    cfg = SynthConfig(
        n_subjects=n_subjects,
        trials_per_class=trials_per_class,
        channels=2,
        samples=200,
        n_classes=2,
        noise_std=0.3,
        seed=seed,
    )
    datasets = [euclidean_align(ds) for ds in generate(cfg)]
    return {ds.subject_id: ds for ds in datasets[:-1]}, datasets[-1]


def _tiny_train_config(epochs=3, seed=0, **kwargs):
    defaults = dict(
        schedule=ScheduleConfig(alpha=0.7, beta=1.4, tau0=float(epochs) / 2, epochs=epochs),
        lr=1e-3,
        batch_size=8,
        seed=seed,
        feature_dim=4,
        hidden_widths=(6,),
        pool_factor=4,
        feat_kernel=KernelConfig(bandwidth_mode="median"),
        out_kernel=KernelConfig(bandwidth_mode="median"),
    )
    defaults.update(kwargs)
    return TrainConfig(**defaults)


class TestTrain:
    def test_loss_breakdown_identity_every_epoch(self):
        sources, target = _tiny_sources_target()
        result = train(sources, target, _tiny_train_config(epochs=4))
        for entry in result.log:
            recomposed = (
                entry.l_cls
                + entry.alpha_tau * (entry.l_fla_st + entry.l_fla_ss)
                + entry.beta_tau * (entry.l_dla_st + entry.l_dla_ss)
            )
            assert abs(entry.l_total - recomposed) < 1e-10

    def test_weights_sum_to_one_every_epoch(self):
        sources, target = _tiny_sources_target()
        result = train(sources, target, _tiny_train_config(epochs=3))
        for omega in result.weight_history:
            assert abs(sum(omega.values()) - 1.0) < 1e-12
            assert all(v > 0 for v in omega.values())

    def test_deterministic_for_fixed_seed(self):
        sources, target = _tiny_sources_target()
        a = train(sources, target, _tiny_train_config(epochs=3, seed=7))
        b = train(sources, target, _tiny_train_config(epochs=3, seed=7))
        for ea, eb in zip(a.log, b.log):
            assert ea.l_total == eb.l_total
            assert ea.l_cls == eb.l_cls
            assert ea.target_acc == eb.target_acc
        for key in a.params:
            assert np.array_equal(a.params[key], b.params[key])

    def test_seed_changes_trajectory(self):
        sources, target = _tiny_sources_target()
        a = train(sources, target, _tiny_train_config(epochs=2, seed=0))
        b = train(sources, target, _tiny_train_config(epochs=2, seed=1))
        assert any(ea.l_total != eb.l_total for ea, eb in zip(a.log, b.log))

    def test_alpha_beta_zero_reduces_to_weighted_ce(self):
        sources, target = _tiny_sources_target()
        cfg = _tiny_train_config(
            epochs=3, schedule=ScheduleConfig(alpha=0.0, beta=0.0, tau0=1.0, epochs=3)
        )
        result = train(sources, target, cfg)
        for entry in result.log:
            assert entry.l_fla_st == 0.0 and entry.l_fla_ss == 0.0
            assert entry.l_dla_st == 0.0 and entry.l_dla_ss == 0.0
            assert entry.l_total == entry.l_cls
            assert entry.alpha_tau == 0.0 and entry.beta_tau == 0.0

    def test_single_source_pairwise_terms_zero(self):
        sources, target = _tiny_sources_target(n_subjects=2)
        assert len(sources) == 1
        result = train(sources, target, _tiny_train_config(epochs=2))
        for entry in result.log:
            assert entry.l_fla_ss == 0.0 and entry.l_dla_ss == 0.0
        assert result.weight_history[0] == {next(iter(sources)): 1.0}

    def test_target_metrics_reported_when_labeled(self):
        sources, target = _tiny_sources_target()
        result = train(sources, target, _tiny_train_config(epochs=2))
        assert result.metrics is not None
        assert all(e.target_acc is not None for e in result.log)
        unlabeled = target.without_labels()
        result2 = train(sources, unlabeled, _tiny_train_config(epochs=2))
        assert result2.metrics is None
        assert all(e.target_acc is None for e in result2.log)

    def test_requires_alignment_flag(self):
        cfg = SynthConfig(n_subjects=2, trials_per_class=4, channels=2,
                          samples=200, seed=0)
        raw = generate(cfg)
        with pytest.raises(StateError):
            train({raw[0].subject_id: raw[0]}, euclidean_align(raw[1]),
                  _tiny_train_config(epochs=1))

    def test_shape_mismatch_rejected(self):
        sources, target = _tiny_sources_target()
        odd = SubjectDataset(
            "odd",
            [Trial(np.zeros((3, 200)), label=1), Trial(np.zeros((3, 200)), label=2)],
            n_classes=2,
            ea_applied=True,
        )
        with pytest.raises(ShapeError):
            train({"odd": odd}, target, _tiny_train_config(epochs=1))

    def test_conditional_ss_switch_runs(self):
        sources, target = _tiny_sources_target()
        result = train(
            sources, target, _tiny_train_config(epochs=2, fla_ss_conditional=True)
        )
        assert len(result.log) == 2

    def test_probability_outputs_switch_runs(self):
        sources, target = _tiny_sources_target()
        result = train(
            sources, target, _tiny_train_config(epochs=2, dla_on_probabilities=True)
        )
        assert len(result.log) == 2


class TestTotalLossGradient:
    def test_total_loss_gradient_matches_fd(self):
        # 2 sources, 8 samples per domain, d=4, K=2 through the backbone.
        from csalign.model import BackboneConfig, forward_nodes, init_params, one_hot, cross_entropy_node

        bcfg = BackboneConfig(channels=2, samples=16, feature_dim=4, n_classes=2,
                              hidden_widths=(5,), pool_factor=4, seed=0)
        rng = np.random.default_rng(6)
        batches = {name: rng.normal(size=(8, 2, 16)) for name in ("s1", "s2", "t")}
        labels = {name: one_hot(rng.integers(1, 3, size=8), 2) for name in ("s1", "s2")}
        weights = {"s1": 0.6, "s2": 0.4}
        params = init_params(bcfg)
        keys = sorted(params)
        shapes = {k: params[k].shape for k in keys}
        sizes = {k: params[k].size for k in keys}

        def loss(theta):
            pos, leaves = 0, {}
            for k in keys:
                leaves[k] = ad.Node(theta[pos : pos + sizes[k]].reshape(shapes[k]))
                pos += sizes[k]
            feats, logits = {}, {}
            for name in ("s1", "s2", "t"):
                feats[name], logits[name] = forward_nodes(bcfg, leaves, batches[name])
            l_cls = ad.add(
                ad.mul(cross_entropy_node(logits["s1"], labels["s1"]), 0.6),
                ad.mul(cross_entropy_node(logits["s2"], labels["s2"]), 0.4),
            )
            src = {n: feats[n] for n in ("s1", "s2")}
            l_fla_st, l_fla_ss = fla_loss(src, feats["t"], weights, FIXED)
            pairs = {n: (feats[n], logits[n]) for n in ("s1", "s2")}
            l_dla_st, l_dla_ss = dla_loss(
                pairs, (feats["t"], logits["t"]), weights, FIXED, FIXED
            )
            total = ad.add(
                l_cls,
                ad.add(
                    ad.mul(ad.add(l_fla_st, l_fla_ss), 0.35),
                    ad.mul(ad.add(l_dla_st, l_dla_ss), 0.70),
                ),
            )
            ad.backward(total)
            grad = np.concatenate([leaves[k].grad.ravel() for k in keys])
            return float(total.value), grad

        theta0 = np.concatenate([params[k].ravel() for k in keys])
        assert check_gradients(loss, theta0) < 1e-4
