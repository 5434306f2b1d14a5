import numpy as np
import pytest

from safl_sim import (
    AnnealConfig,
    Dataset,
    DivergenceError,
    GateConfig,
    LrSchedule,
    Objective,
    PartitionSpec,
    SimConfig,
    WeightScheme,
    global_estimate,
    make_blobs,
    make_linear_regression,
    partition_with_holdout,
    run,
    run_local_epochs,
)

TOY_OBJ = Objective("lasso", 2, reg=1.0)
TOY_SHARDS = [
    Dataset(np.array([[0.25, 0.0]]), np.array([-1.0])),
    Dataset(np.array([[0.0, 1.5]]), np.array([1.0])),
]


def regression_setup(n=6, mean_size=8, seed=3):
    data = make_linear_regression(depth_samples(n, mean_size), 4, feature_scale=0.3, coef_scale=3.0, seed=seed)
    obj = Objective("ridge", 4, reg=0.8)
    part = PartitionSpec(n=n, mean_size=mean_size, size_var=0.0, max_labels_per_device=1, seed=17)
    return data, obj, part


def depth_samples(n, mean_size):
    return max(4 * n * mean_size // 3, 50)


def base_config(obj, part, **kw):
    defaults = dict(
        objective=obj,
        partition=part,
        selected_per_round=part.n,
        rounds=12,
        local_epochs=1,
        algorithm="fedavg",
        lr=LrSchedule("inverse", 1.5),
        seed=11,
        holdout_fraction=0.0,
    )
    defaults.update(kw)
    return SimConfig(**defaults)


class TestToyScenario:
    def test_single_round_oracle_aggregate(self):
        part = PartitionSpec(n=2, mean_size=1.0, seed=1)
        cfg = SimConfig(
            objective=TOY_OBJ,
            partition=part,
            selected_per_round=2,
            rounds=1,
            algorithm="fedavg",
            weight_scheme=WeightScheme("uniform"),
            local_solver="oracle",
            seed=7,
            holdout_fraction=0.0,
        )
        res = run(cfg, shards=TOY_SHARDS)
        z_bar = res.server.global_params
        assert np.allclose(z_bar, [0.0, 2.0 / 9.0], atol=0)
        # the averaged model sits 2/9 away from the optimum even though one
        # device's local solution is exactly optimal
        assert abs(np.linalg.norm(res.w_star - z_bar) - 2.0 / 9.0) < 1e-12
        assert np.linalg.norm(res.w_star - np.array([0.0, 4.0 / 9.0])) == 0.0
        assert res.records[0].mse == pytest.approx((2.0 / 9.0) ** 2, abs=1e-15)

    def test_sgd_on_lasso_rejected(self):
        part = PartitionSpec(n=2, mean_size=1.0, seed=1)
        with pytest.raises(ValueError, match="non-smooth"):
            SimConfig(
                objective=TOY_OBJ,
                partition=part,
                selected_per_round=2,
                rounds=1,
                seed=1,
            )


class TestFedAvgReduction:
    def test_unit_epsilon_matches_fedavg_bitwise(self):
        data, obj, part = regression_setup()
        cfg_f = base_config(obj, part, algorithm="fedavg")
        cfg_s = base_config(obj, part, algorithm="safl", anneal=AnnealConfig(temperature=5.0, epsilon=1.0))
        res_f, res_s = run(cfg_f, dataset=data), run(cfg_s, dataset=data)
        for a, b in zip(res_f.records, res_s.records):
            assert a.mse == b.mse and a.accuracy == b.accuracy and a.uploads == b.uploads
        for df, ds_ in zip(res_f.devices, res_s.devices):
            assert np.array_equal(df.params, ds_.params)

    def test_underflowed_schedule_matches_fedavg_bitwise(self):
        # temperature so small the local-leaning branch has probability < 1e-17
        # from the very first round
        data, obj, part = regression_setup()
        cfg_f = base_config(obj, part, algorithm="fedavg")
        cfg_s = base_config(obj, part, algorithm="safl", anneal=AnnealConfig(temperature=1.0 / 45.0, epsilon=0.2))
        res_f, res_s = run(cfg_f, dataset=data), run(cfg_s, dataset=data)
        for df, ds_ in zip(res_f.devices, res_s.devices):
            assert np.array_equal(df.params, ds_.params)


class TestLocalOnlyLimit:
    def test_zero_epsilon_high_temperature_keeps_local_models(self):
        data, obj, part = regression_setup()
        seen = []
        cfg = base_config(
            obj,
            part,
            algorithm="safl",
            anneal=AnnealConfig(temperature=1e9, epsilon=0.0, mask_mode="scalar"),
            rounds=25,
        )

        def observer(record, server, devices, extras):
            for k in extras["selected"]:
                seen.append(np.array_equal(devices[k].params, extras["locals"][k]))

        run(cfg, dataset=data, observer=observer)
        assert seen and all(seen)


class TestSingleDevice:
    def test_fedavg_with_one_device_is_plain_sgd(self):
        data, obj, part = regression_setup(n=1, mean_size=10)
        cfg = base_config(obj, part, selected_per_round=1, rounds=8)
        res = run(cfg, dataset=data)

        # replay: same init stream, same train stream, chained local epochs
        root = np.random.SeedSequence(cfg.seed)
        _, dev_ss = root.spawn(2)
        init_ss, train_ss, _, _ = dev_ss.spawn(4)
        w = 0.1 * np.random.default_rng(init_ss).standard_normal(obj.param_dim)
        shard = partition_with_holdout(data, part, 0.0)[0][0]
        rng = np.random.default_rng(train_ss)
        steps = 0
        for _ in range(8):
            w, took = run_local_epochs(w, shard, obj, 1, cfg.lr, rng, start_step=steps)
            steps += took
        assert np.array_equal(res.devices[0].params, w)


class TestDeterminismAndAccounting:
    def test_identical_configs_reproduce_bitwise(self):
        data, obj, part = regression_setup()
        cfg = base_config(obj, part, algorithm="safl", anneal=AnnealConfig(temperature=6.0, epsilon=0.4))
        r1, r2 = run(cfg, dataset=data), run(cfg, dataset=data)
        assert [a.mse for a in r1.records] == [b.mse for b in r2.records]
        for d1, d2 in zip(r1.devices, r2.devices):
            assert np.array_equal(d1.params, d2.params)

    def test_zero_rounds_give_empty_records(self):
        data, obj, part = regression_setup()
        res = run(base_config(obj, part, rounds=0), dataset=data)
        assert res.records == []

    def test_upload_counts_for_ungated_algorithms(self):
        data, obj, part = regression_setup()
        for algo in ("fedavg", "safl"):
            cfg = base_config(obj, part, algorithm=algo, selected_per_round=4, rounds=10)
            res = run(cfg, dataset=data)
            assert all(r.uploads == 4 for r in res.records)

    def test_annealing_probability_strictly_decreases(self):
        data, obj, part = regression_setup()
        cfg = base_config(obj, part, algorithm="safl", anneal=AnnealConfig(temperature=9.0, epsilon=0.5), rounds=15)
        res = run(cfg, dataset=data)
        ps = [r.selection_prob for r in res.records]
        assert all(p is not None for p in ps)
        assert all(b < a for a, b in zip(ps, ps[1:]))

    def test_early_stop_cuts_the_run(self):
        data, obj, part = regression_setup()
        cfg = base_config(obj, part, rounds=50, early_stop_mse=1e9)
        res = run(cfg, dataset=data)
        assert len(res.records) == 1

    def test_divergence_reports_the_round(self):
        # constant 1e8 rate multiplies the error each step; overflow to inf
        # takes a few rounds, and the report names the round where it lands
        data, obj, part = regression_setup()
        cfg = base_config(obj, part, lr=LrSchedule("constant", 1e8), rounds=10)
        with pytest.raises(DivergenceError) as err:
            run(cfg, dataset=data)
        assert err.value.round_index is not None and 1 <= err.value.round_index <= 10


class TestGatedUploads:
    def gated_setup(self, gap_scale, rounds=60, seed=5, mean_size=50.0, holdout=0.3,
                    separation=1.0, cluster_std=1.5, samples=1500):
        data = make_blobs(samples, 4, 3, separation=separation, cluster_std=cluster_std, seed=2)
        obj = Objective("multinomial_logistic", 4, reg=0.05, n_classes=3)
        part = PartitionSpec(n=8, mean_size=mean_size, size_var=0.0, max_labels_per_device=3, seed=13, pure_count=3)
        cfg = SimConfig(
            objective=obj,
            partition=part,
            selected_per_round=8,
            rounds=rounds,
            algorithm="safl_extended",
            anneal=AnnealConfig(temperature=10.0, epsilon=0.3),
            gate=GateConfig(gap_scale=gap_scale),
            lr=LrSchedule("constant", 0.1),
            seed=seed,
            holdout_fraction=holdout,
        )
        return cfg, data

    def test_uploads_never_exceed_selection(self):
        cfg, data = self.gated_setup(gap_scale=0.1)
        res = run(cfg, dataset=data)
        assert all(0 <= r.uploads <= 8 for r in res.records)
        total = sum(r.uploads for r in res.records)
        assert total <= cfg.partition.n * cfg.rounds

    def test_upload_rate_tracks_the_recorded_probabilities(self):
        # label overlap keeps the biased device's gap persistently large; the
        # wide holdout keeps the gap series smooth relative to the gate scale
        cfg, data = self.gated_setup(
            gap_scale=0.3, rounds=200, mean_size=120.0, holdout=0.25,
            separation=0.8, cluster_std=1.8, samples=2000,
        )
        qs, gaps, ups = [], [], []

        def observer(record, server, devices, extras):
            info = extras["gate"].get(0)  # device 0 is label-pure (biased)
            if info:
                qs.append(info["q"])
                gaps.append(info["gap"])
                ups.append(info["uploaded"])

        run(cfg, dataset=data, observer=observer)
        qs, gaps, ups = np.array(qs), np.array(gaps), np.array(ups, dtype=float)
        assert len(qs) == 200
        # Bernoulli aggregate oracle: uploads within 4 sd of the summed
        # per-round probabilities reconstructed from the gap series
        assert np.allclose(qs, np.exp(-gaps / cfg.gate.gap_scale), atol=0)
        sd_sum = float(np.sqrt(np.sum(qs * (1 - qs))))
        assert abs(ups.sum() - qs.sum()) <= 4 * sd_sum + 1e-9
        # over the stationary tail the gap is steady, so the rate also sits
        # below the mean-gap envelope
        tail = slice(100, None)
        q_t, u_t = qs[tail], ups[tail]
        envelope = float(np.exp(-gaps[tail].mean() / cfg.gate.gap_scale))
        sd_tail = float(np.sqrt(np.sum(q_t * (1 - q_t)))) / len(q_t)
        assert u_t.mean() <= envelope + 3 * sd_tail + 1e-9

    def test_all_skip_round_leaves_global_model_unchanged(self):
        cfg, data = self.gated_setup(gap_scale=0.004, rounds=40)
        snapshots = []

        def observer(record, server, devices, extras):
            snapshots.append((record.uploads, server.global_params.copy()))

        run(cfg, dataset=data, observer=observer)
        skipped = [i for i, (u, _) in enumerate(snapshots) if u == 0]
        assert skipped, "expected at least one all-skip round at this gate scale"
        for i in skipped:
            if i == 0:
                continue
            assert np.array_equal(snapshots[i][1], snapshots[i - 1][1])

    def test_identical_local_and_global_scores_upload_certainly(self):
        # one device, its local model IS the aggregate, so after the first
        # round the proxies coincide and q stays exactly 1
        data = make_blobs(60, 3, 2, separation=3.0, seed=4)
        obj = Objective("multinomial_logistic", 3, reg=0.05, n_classes=2)
        part = PartitionSpec(n=1, mean_size=30.0, max_labels_per_device=2, seed=6)
        cfg = SimConfig(
            objective=obj,
            partition=part,
            selected_per_round=1,
            rounds=12,
            algorithm="safl_extended",
            anneal=AnnealConfig(temperature=1e-3, epsilon=1.0),  # adopt global outright
            gate=GateConfig(gap_scale=0.05),
            lr=LrSchedule("constant", 1e-9),  # training barely moves the model
            seed=9,
            holdout_fraction=0.3,
        )
        qs = []

        def observer(record, server, devices, extras):
            qs.append(extras["gate"][0]["q"])

        res = run(cfg, dataset=data, observer=observer)
        assert all(q == 1.0 for q in qs[1:])
        assert all(r.uploads == 1 for r in res.records[1:])


class TestConfigValidation:
    def test_selected_bounds(self):
        data, obj, part = regression_setup()
        with pytest.raises(ValueError):
            base_config(obj, part, selected_per_round=part.n + 1)
        with pytest.raises(ValueError):
            base_config(obj, part, selected_per_round=0)

    def test_extended_requires_gate(self):
        data, obj, part = regression_setup()
        with pytest.raises(ValueError, match="gate"):
            base_config(obj, part, algorithm="safl_extended")

    def test_per_step_feedback_not_implemented(self):
        data, obj, part = regression_setup()
        with pytest.raises(NotImplementedError):
            base_config(obj, part, feedback_timing="per_step")

    def test_global_estimate_needs_matched_weights(self):
        data, obj, part = regression_setup()
        res = run(base_config(obj, part, rounds=1), dataset=data)
        with pytest.raises(ValueError):
            global_estimate(res.devices, np.array([1.0]))
