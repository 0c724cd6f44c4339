"""Imitation pipeline tests: features, noisy expert, dataset collection,
training, and the clipped deployment policy."""

import numpy as np
import pytest

from mgempc import grid, imitation as im, mlp, scenario
from mgempc.empc import EmpcConfig, InfoTuple, expert_action, info_from_state
from mgempc.imitation import (Dataset, FeatureConfig, NoiseConfig, beta_grid,
                              build_features, collect_dataset,
                              default_noise_config, feature_names,
                              learned_action, load_dataset, load_policy,
                              noisy_expert_action, save_dataset, save_policy,
                              train_policy, virtual_disturbance)


@pytest.fixture
def params():
    return grid.reference_params()


def flat_forecast(res, load, T):
    return tuple(grid.Disturbance(p_res=res, p_load=load) for _ in range(T))


class TestFeaturePieces:
    def test_virtual_disturbance_examples(self):
        assert virtual_disturbance(30, 100, 0.0) == pytest.approx(-70.0)
        assert virtual_disturbance(30, 100, 1.0) == pytest.approx(30.0)
        assert virtual_disturbance(30, 100, 0.15) == pytest.approx(-55.0)

    def test_beta_grid(self):
        assert np.allclose(beta_grid(0.3, 3), [0.0, 0.15, 0.3])
        assert np.allclose(beta_grid(0.5, 2), [0.0, 0.5])
        assert np.allclose(beta_grid(0.0, 4), [0.0, 0.0, 0.0, 0.0])
        with pytest.raises(ValueError):
            beta_grid(0.3, 1)

    def test_feature_length_reference_setting(self, params):
        info = InfoTuple(soc0=48.0, prev_gen_power=(0.0, 0.0),
                         prev_gen_on=(0, 0), forecasts=flat_forecast(40, 90, 6))
        f = build_features(info, FeatureConfig(n_beta=3, t_w=6),
                           params.load_res.beta_max)
        assert f.shape == (33,)
        f0 = build_features(info, FeatureConfig(n_beta=3, t_w=0),
                            params.load_res.beta_max)
        assert f0.shape == (15,)

    def test_feature_block_indices(self, params):
        # the net-injection block sits after [soc, prev powers, res, load]
        # with lookahead outer and curtail level inner
        fcfg = FeatureConfig(n_beta=3, t_w=6)
        res, load = 30.0, 100.0
        info = InfoTuple(soc0=48.0, prev_gen_power=(7.0, 0.0),
                         prev_gen_on=(1, 0), forecasts=flat_forecast(res, load, 6))
        f = build_features(info, fcfg, params.load_res.beta_max)
        names = feature_names(2, 6, fcfg)
        assert f[names.index("soc")] == 48.0
        assert f[names.index("p_fg_prev_0")] == 7.0
        assert f[names.index("res_hat_3")] == res
        assert f[names.index("load_hat_5")] == load
        for k in range(6):
            for i, b in enumerate(beta_grid(params.load_res.beta_max, 3)):
                assert f[names.index(f"wbeta_t{k}_b{i}")] == pytest.approx(
                    virtual_disturbance(res, load, b))

    def test_depth_cannot_exceed_horizon(self, params):
        info = InfoTuple(soc0=48.0, prev_gen_power=(0.0, 0.0),
                         prev_gen_on=(0, 0), forecasts=flat_forecast(40, 90, 2))
        with pytest.raises(ValueError, match="exceeds"):
            build_features(info, FeatureConfig(n_beta=3, t_w=3),
                           params.load_res.beta_max)

    def test_pure_function(self, params):
        info = InfoTuple(soc0=48.0, prev_gen_power=(0.0, 0.0),
                         prev_gen_on=(0, 0), forecasts=flat_forecast(40, 90, 6))
        fcfg = FeatureConfig()
        a = build_features(info, fcfg, 0.3)
        b = build_features(info, fcfg, 0.3)
        assert a.tobytes() == b.tobytes()


class TestNoisyExpert:
    def test_zero_noise_reduces_to_expert(self, params):
        cfg = EmpcConfig(horizon=2)
        info = InfoTuple(soc0=48.0, prev_gen_power=(0.0, 0.0),
                         prev_gen_on=(0, 0), forecasts=flat_forecast(40, 90, 2))
        noise = default_noise_config(params, scale=0.0)
        u_bar, u_star, _, _ = noisy_expert_action(params, info, cfg, noise, 0, 0)
        assert np.array_equal(u_bar.as_array(), u_star.as_array())

    def test_applied_input_in_box(self, params):
        cfg = EmpcConfig(horizon=2)
        noise = default_noise_config(params, scale=2.0)
        state = grid.initial_state(params, 48.0)
        box = grid.input_box(params, state)
        for t in range(8):
            info = info_from_state(state, flat_forecast(40, 90, 2))
            u_bar, _, _, _ = noisy_expert_action(params, info, cfg, noise, 3, t)
            assert box.contains(u_bar.as_array())

    def test_noise_deterministic_per_scenario_step(self, params):
        cfg = EmpcConfig(horizon=2)
        info = InfoTuple(soc0=48.0, prev_gen_power=(0.0, 0.0),
                         prev_gen_on=(0, 0), forecasts=flat_forecast(40, 90, 2))
        noise = default_noise_config(params, scale=1.0, seed=5)
        a = noisy_expert_action(params, info, cfg, noise, 4, 9)[0]
        b = noisy_expert_action(params, info, cfg, noise, 4, 9)[0]
        c = noisy_expert_action(params, info, cfg, noise, 4, 10)[0]
        assert np.array_equal(a.as_array(), b.as_array())
        assert not np.array_equal(a.as_array(), c.as_array())

    def test_default_sigma_is_five_percent_of_range(self, params):
        noise = default_noise_config(params)
        assert noise.sigma == pytest.approx(
            (0.05 * 60, 0.05 * 80, 0.05 * 2 * 150, 0.05 * 0.3))


@pytest.fixture(scope="module")
def tiny_scenarios():
    params = grid.reference_params()
    return params, scenario.sample_scenarios(params, 1, soc0_set=(44.0, 52.0),
                                             seed=2, n_steps=24)


@pytest.fixture(scope="module")
def tiny_dataset(tiny_scenarios):
    params, scen = tiny_scenarios
    cfg = EmpcConfig(horizon=2)
    fcfg = FeatureConfig(n_beta=3, t_w=2)
    noise = default_noise_config(params, scale=1.0, seed=0)
    return collect_dataset(params, scen, cfg, fcfg, noise,
                           fc_cfg=scenario.default_forecast_config(2), t_sim=6)


class TestCollect:
    def test_cardinality_and_order(self, tiny_scenarios, tiny_dataset):
        params, scen = tiny_scenarios
        ds = tiny_dataset
        expected = 6 * (len(scen) - len(ds.failed_scenarios))
        assert ds.n_rows == expected
        order = [tuple(r) for r in ds.ids]
        assert order == sorted(order)

    def test_labels_inside_their_boxes(self, tiny_scenarios, tiny_dataset):
        params, scen = tiny_scenarios
        ds = tiny_dataset
        by_id = {s.id: s for s in scen}
        # replay each rollout's state evolution to rebuild the boxes
        states = {}
        for i in range(ds.n_rows):
            sid, t = int(ds.ids[i, 0]), int(ds.ids[i, 1])
            s = by_id[sid]
            if t == 0:
                states[sid] = grid.initial_state(params, s.soc0)
            state = states[sid]
            box = grid.input_box(params, state)
            assert box.contains(ds.labels[i])
            u = grid.ControlInput.from_array(ds.labels[i], params.n_fg)
            states[sid] = grid.augmented_step(params, state, u, s.disturbance(t))

    def test_zero_noise_matches_clean_labels(self, tiny_scenarios):
        params, scen = tiny_scenarios
        cfg = EmpcConfig(horizon=2)
        fcfg = FeatureConfig(n_beta=3, t_w=2)
        ds = collect_dataset(params, scen, cfg, fcfg,
                             default_noise_config(params, scale=0.0),
                             fc_cfg=scenario.default_forecast_config(2), t_sim=6)
        assert np.array_equal(ds.labels, ds.clean_labels)

    def test_noise_seed_only_changes_eps(self, tiny_scenarios):
        params, scen = tiny_scenarios
        cfg = EmpcConfig(horizon=2)
        fcfg = FeatureConfig(n_beta=3, t_w=2)
        fc = scenario.default_forecast_config(2)
        d1 = collect_dataset(params, scen, cfg, fcfg,
                             NoiseConfig(sigma=(1.0, 1.0, 3.0, 0.01), seed=1),
                             fc_cfg=fc, t_sim=3)
        d2 = collect_dataset(params, scen, cfg, fcfg,
                             NoiseConfig(sigma=(1.0, 1.0, 3.0, 0.01), seed=2),
                             fc_cfg=fc, t_sim=3)
        # same scenario set and first-step expert input, different draws
        assert np.array_equal(d1.ids, d2.ids)
        assert np.array_equal(d1.clean_labels[0], d2.clean_labels[0])
        assert not np.array_equal(d1.labels, d2.labels)

    def test_dataset_round_trip(self, tiny_dataset, tmp_path):
        path = tmp_path / "ds.csv"
        save_dataset(tiny_dataset, path)
        loaded = load_dataset(path)
        assert np.array_equal(loaded.features, tiny_dataset.features)
        assert np.array_equal(loaded.labels, tiny_dataset.labels)
        assert np.array_equal(loaded.ids, tiny_dataset.ids)
        assert loaded.feature_cfg == tiny_dataset.feature_cfg
        assert loaded.horizon == tiny_dataset.horizon


@pytest.fixture(scope="module")
def bundle(tiny_dataset):
    cfg = mlp.TrainConfig(max_epochs=40, patience=40)
    out, log = train_policy(tiny_dataset, hidden=(8, 8), train_cfg=cfg, seed=0)
    assert len(log) > 0
    return out


class TestTrainAndDeploy:
    def test_bundle_embeds_feature_config(self, bundle, tiny_dataset):
        assert bundle.feature_cfg == tiny_dataset.feature_cfg
        assert bundle.spec.n_in == tiny_dataset.features.shape[1]

    def test_learned_action_in_box_and_deterministic(self, bundle, tiny_scenarios):
        params, scen = tiny_scenarios
        state = grid.initial_state(params, 48.0)
        fcs = flat_forecast(40, 90, 2)
        u1 = learned_action(bundle, params, state, fcs)
        u2 = learned_action(bundle, params, state, fcs)
        assert u1 == u2
        assert grid.input_box(params, state).contains(u1.as_array())

    def test_zero_weight_policy_is_feasible_idle(self, tiny_dataset, tiny_scenarios):
        params, _ = tiny_scenarios
        cfg = mlp.TrainConfig(max_epochs=1, patience=1)
        bundle, _ = train_policy(tiny_dataset, hidden=(4,), train_cfg=cfg, seed=0)
        for arr in bundle.params.weights + bundle.params.biases:
            arr[:] = 0.0
        state = grid.initial_state(params, 48.0)
        u = learned_action(bundle, params, state, flat_forecast(40, 90, 2))
        assert u.gen_power == (0.0, 0.0)  # OFF point reachable through clipping
        assert u.p_exg == 0.0 and u.beta == 0.0

    def test_policy_round_trip(self, bundle, tmp_path):
        path = tmp_path / "policy.json"
        save_policy(bundle, path)
        loaded = load_policy(path)
        assert loaded.feature_cfg == bundle.feature_cfg
        assert loaded.n_fg == bundle.n_fg and loaded.horizon == bundle.horizon
        x = np.random.default_rng(0).normal(size=bundle.spec.n_in)
        assert np.array_equal(mlp.forward(loaded.params, x),
                              mlp.forward(bundle.params, x))

    def test_runtime_mismatch_rejected(self, bundle, tiny_scenarios):
        import dataclasses
        params, _ = tiny_scenarios
        one_gen = dataclasses.replace(params, generators=params.generators[:1])
        state = grid.initial_state(one_gen, 48.0)
        with pytest.raises(ValueError, match="generators"):
            learned_action(bundle, one_gen, state, flat_forecast(40, 90, 2))
        state2 = grid.initial_state(params, 48.0)
        with pytest.raises(ValueError, match="forecast steps"):
            learned_action(bundle, params, state2, flat_forecast(40, 90, 4))

    def test_empty_dataset_rejected(self, tiny_dataset):
        empty = Dataset(features=np.zeros((0, 15)), labels=np.zeros((0, 4)),
                        clean_labels=np.zeros((0, 4)),
                        ids=np.zeros((0, 2), dtype=int),
                        feature_cfg=FeatureConfig(), n_fg=2, horizon=6)
        with pytest.raises(ValueError, match="empty"):
            train_policy(empty)


class TestReduction:
    def test_zero_noise_zero_depth_equals_baseline(self, tiny_scenarios):
        # proposed pipeline with sigma = 0 and t_w = 0 reproduces the
        # baseline pipeline byte for byte
        params, scen = tiny_scenarios
        cfg = EmpcConfig(horizon=2)
        fc = scenario.default_forecast_config(2)
        prop = collect_dataset(params, scen, cfg, FeatureConfig(n_beta=3, t_w=0),
                               default_noise_config(params, scale=0.0),
                               fc_cfg=fc, t_sim=4)
        base = collect_dataset(params, scen, cfg, FeatureConfig(n_beta=3, t_w=0),
                               default_noise_config(params, scale=0.0),
                               fc_cfg=fc, t_sim=4)
        assert np.array_equal(prop.features, base.features)
        assert np.array_equal(prop.labels, base.labels)

    def test_feature_width_is_the_only_difference(self, tiny_scenarios):
        # with zero noise the closed loops coincide, so wide features embed
        # the narrow ones and the labels agree exactly
        params, scen = tiny_scenarios
        cfg = EmpcConfig(horizon=2)
        fc = scenario.default_forecast_config(2)
        noise0 = default_noise_config(params, scale=0.0)
        wide = collect_dataset(params, scen, cfg, FeatureConfig(n_beta=3, t_w=2),
                               noise0, fc_cfg=fc, t_sim=4)
        narrow = collect_dataset(params, scen, cfg, FeatureConfig(n_beta=3, t_w=0),
                                 noise0, fc_cfg=fc, t_sim=4)
        assert np.array_equal(wide.labels, narrow.labels)
        d_narrow = narrow.features.shape[1]
        assert d_narrow == 1 + params.n_fg + 2 * cfg.horizon
        assert np.array_equal(wide.features[:, :d_narrow], narrow.features)
