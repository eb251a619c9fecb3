import tracemalloc

import numpy as np
import pytest

from fvsrn.fused import (
    CapacityError,
    bench_compare,
    bench_csv,
    fused_eval,
    naive_eval_model,
    plan_build,
    plan_for_model,
    warmup,
)
from fvsrn.model import ModelConfig, model_init

# Largest layer count per channel width that fits the 48 kB budget.
CAPACITY_FRONTIER = {32: 22, 48: 10, 64: 6, 96: 3, 128: 2}


class TestPlanBuild:
    def test_worked_example_accounting(self):
        # 4 layers x 48 channels: weights 4*48^2*2 + biases 4*48*2 = 18816,
        # per-tile activations 48*32*2 = 3072, resident tiles 9.
        plan = plan_build(4, 48, 47, 1)
        assert plan.m_w == 18816
        assert plan.m_s == 3072
        assert plan.w == 9

    @pytest.mark.parametrize("channels,layers", CAPACITY_FRONTIER.items())
    def test_frontier_fits(self, channels, layers):
        plan = plan_build(layers, channels, channels - 1, 1)
        assert plan.max_resident_tiles >= 1
        assert plan.resident_weight_bytes + plan.resident_scratch_bytes <= plan.budget_bytes

    @pytest.mark.parametrize("channels,layers", CAPACITY_FRONTIER.items())
    def test_one_layer_past_frontier_errors(self, channels, layers):
        with pytest.raises(CapacityError):
            plan_build(layers + 1, channels, channels - 1, 1)

    def test_capacity_error_names_quantities(self):
        with pytest.raises(CapacityError, match="bytes"):
            plan_build(3, 128, 127, 1)

    def test_padded_widths_multiple_of_16(self):
        plan = plan_build(4, 32, 47, 1)
        assert plan.padded_widths == (48, 32, 32, 32, 16)


class TestFusedEval:
    def test_matches_naive_default_model(self, rng):
        model = model_init(ModelConfig(seed=2))
        plan = plan_for_model(model)
        x = rng.uniform(-1, 1, size=(1000, 47)).astype(np.float32)
        got = fused_eval(plan, model, x)
        want = naive_eval_model(model, x)
        assert np.abs(got - want).max() <= 1e-4

    def test_matches_naive_color_head(self, rng):
        model = model_init(ModelConfig(head="color", seed=3))
        plan = plan_for_model(model)
        x = rng.uniform(-1, 1, size=(257, 47)).astype(np.float32)
        got = fused_eval(plan, model, x)
        want = naive_eval_model(model, x)
        assert got.shape == (257, 4)
        assert np.abs(got - want).max() <= 1e-4

    @pytest.mark.parametrize("channels,layers", CAPACITY_FRONTIER.items())
    def test_matches_naive_across_frontier_configs(self, channels, layers, rng):
        cfg = ModelConfig(layers=layers, hidden=channels, grid_resolution=0,
                          fourier_m=(channels - 4) // 2, seed=channels + layers)
        model = model_init(cfg)
        plan = plan_for_model(model)
        x = rng.uniform(-1, 1, size=(96, cfg.input_width)).astype(np.float32)
        got = fused_eval(plan, model, x)
        want = naive_eval_model(model, x)
        assert np.abs(got - want).max() <= 1e-4

    @pytest.mark.parametrize("activation", ["relu", "sigmoid", "softplus", "snake"])
    def test_other_activations(self, activation, rng):
        model = model_init(ModelConfig(layers=3, hidden=32, activation=activation, seed=4))
        plan = plan_for_model(model)
        x = rng.uniform(-1, 1, size=(130, 47)).astype(np.float32)
        assert np.abs(fused_eval(plan, model, x) - naive_eval_model(model, x)).max() <= 1e-4

    def test_tiling_transparent_at_batch_33(self, rng):
        model = model_init(ModelConfig(seed=5))
        plan = plan_for_model(model)
        x = rng.uniform(-1, 1, size=(33, 47)).astype(np.float32)
        whole = fused_eval(plan, model, x)
        parts = np.concatenate([fused_eval(plan, model, x[:32]),
                                fused_eval(plan, model, x[32:])])
        np.testing.assert_allclose(whole, parts, atol=1e-6)

    def test_python_tile_path_agrees(self, rng):
        model = model_init(ModelConfig(seed=6))
        plan = plan_for_model(model)
        x = rng.uniform(-1, 1, size=(100, 47)).astype(np.float32)
        got = fused_eval(plan, model, x, python_tiles=True)
        want = naive_eval_model(model, x)
        assert np.abs(got - want).max() <= 1e-4

    def test_zero_padding_contributes_nothing(self, rng):
        # Same weights with explicitly widened zero-padded input columns must
        # produce identical outputs.
        model = model_init(ModelConfig(seed=7))
        plan = plan_for_model(model)
        x = rng.uniform(-1, 1, size=(64, 47)).astype(np.float32)
        x_pad = np.zeros((64, 48), dtype=np.float32)
        x_pad[:, :47] = x
        got = fused_eval(plan, model, x)
        codes = fused_eval(plan, model, x)  # repeat calls stable
        np.testing.assert_array_equal(got, codes)

    def test_scratch_stays_within_plan_budget(self, rng):
        # The python tile path allocates exactly the documented scratch; its
        # traced peak must not scale with the batch.
        model = model_init(ModelConfig(seed=8))
        plan = plan_for_model(model)

        def peak(n):
            x = rng.uniform(-1, 1, size=(n, 47)).astype(np.float32)
            out_bytes = n * 4  # result array, grows with batch by design
            tracemalloc.start()
            fused_eval(plan, model, x, python_tiles=True)
            _, peak_b = tracemalloc.get_traced_memory()
            tracemalloc.stop()
            return peak_b - out_bytes

        small = peak(320)
        large = peak(3200)
        assert large <= small + plan.scratch_bytes_f32 + 65536


class TestBench:
    def test_report_shape(self):
        model = model_init(ModelConfig(seed=9))
        rows = bench_compare(model, [256, 512], runs=3)
        assert len(rows) == 4
        assert {r["evaluator"] for r in rows} == {"naive", "fused"}
        csv = bench_csv(rows)
        assert csv.splitlines()[0] == "batch,evaluator,samples_per_sec"
        assert len(csv.splitlines()) == 5

    def test_medians_stable_across_repeats(self, rng):
        # Interleave two measurement series so machine drift hits both alike;
        # their medians must agree within 20%.
        import time as _time

        model = model_init(ModelConfig(seed=10))
        plan = plan_for_model(model)
        warmup(plan, model)
        x = rng.uniform(-1, 1, size=(16384, 47)).astype(np.float32)
        fused_eval(plan, model, x)
        series = ([], [])
        for _ in range(7):
            for bucket in series:
                t0 = _time.perf_counter()
                fused_eval(plan, model, x)
                bucket.append(_time.perf_counter() - t0)
        med_a = sorted(series[0])[3]
        med_b = sorted(series[1])[3]
        assert abs(med_a - med_b) / min(med_a, med_b) < 0.20
