"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Heavier criteria train real models at desk scale; expect a total runtime of
roughly 20-30 minutes. Run with `pytest tests/test_acceptance.py -v -s`.
"""

import time
import tracemalloc

import numpy as np
import pytest

from fvsrn.fused import (
    CapacityError,
    fused_eval,
    naive_eval_model,
    plan_build,
    plan_for_model,
    warmup,
)
from fvsrn.imaging import metric_psnr
from fvsrn.model import (
    ModelConfig,
    checkpoint_load,
    checkpoint_save,
    decode_volume,
    memory_footprint,
    model_backward,
    model_forward,
    model_init,
)
from fvsrn.nn import init_params, mlp_backward, mlp_forward
from fvsrn.render import (
    ModelSource,
    RenderSettings,
    VolumeSource,
    composite_invert,
    composite_step,
    raymarch_backward,
    raymarch_forward,
    render_image,
)
from fvsrn.train import (
    TemporalTrainConfig,
    WorldTarget,
    WorldTrainConfig,
    evaluate_views,
    fibonacci_cameras,
    train_temporal,
    train_world,
)
from fvsrn.transfer import TF_PRESETS, TransferFunction
from fvsrn.volume import ScalarVolume, equivalent_lowpass_res, lowpass_downsample, \
    synth_field

TRAIN_BUDGET = dict(sample_count=64**3, batch_size=16384, epochs=100, lr=0.01, seed=0)


def report(criterion, ok, detail):
    print(f"\n[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")


# ---------------------------------------------------------------------------
# shared trained models (session-scoped so several criteria reuse them)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def gaussians_volume():
    return synth_field("gaussians", 64, {"n_components": 8}, seed=42)


@pytest.fixture(scope="session")
def trained_gaussians(gaussians_volume):
    """R32F16 / R8F4 / no-grid models trained with the fixed budget."""
    models = {}
    for name, (r, f) in {"R32F16": (32, 16), "R8F4": (8, 4), "nogrid": (0, 4)}.items():
        model = model_init(ModelConfig(grid_resolution=r, grid_channels=f, seed=1))
        train_world(model, WorldTarget(gaussians_volume), WorldTrainConfig(**TRAIN_BUDGET))
        models[name] = model
    return models


def _fd_check(arrays, grad_arrays, loss, rng, probes_per_array, h, rtol, atol):
    """Sampled central differences; returns (checked, failures)."""
    checked = bad = 0
    for arr, g in zip(arrays, grad_arrays):
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        n = min(probes_per_array, flat.size)
        idx = rng.choice(flat.size, size=n, replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + h
            up = loss()
            flat[k] = orig - h
            dn = loss()
            flat[k] = orig
            fd = (up - dn) / (2 * h)
            checked += 1
            if not np.isclose(gflat[k], fd, rtol=rtol, atol=atol):
                bad += 1
    return checked, bad


class TestCriterion1Gradients:
    def test_gradient_suite(self):
        t0 = time.time()
        rng = np.random.default_rng(7)

        # MLP + grid + density head, f32, 4 layers x 48 channels, R=8 grid.
        model = model_init(ModelConfig(layers=4, hidden=48, fourier_m=22,
                                       grid_resolution=8, grid_channels=8, seed=3))
        p = rng.uniform(0.02, 0.98, size=(16, 3))
        g_out = rng.uniform(-1, 1, size=(16, 1)).astype(np.float32)
        raw, ctx = model_forward(model, p)
        grads = model_backward(model, ctx, g_out)

        def model_loss():
            r, _ = model_forward(model, p)
            return float(np.sum(r * g_out))

        checked_m, bad_m = _fd_check(model.trainable_arrays(), grads.arrays(),
                                     model_loss, rng, probes_per_array=40,
                                     h=1e-3, rtol=1e-2, atol=1e-4)

        # End to end through the renderer (color head, small model).
        cmodel = model_init(ModelConfig(head="color", layers=2, hidden=16,
                                        fourier_m=6, grid_resolution=4,
                                        grid_channels=4, seed=11))
        origins = np.column_stack([rng.uniform(0.25, 0.75, size=6),
                                   rng.uniform(0.25, 0.75, size=6),
                                   np.full(6, -0.5)])
        dirs = np.tile([0.0, 0.0, 1.0], (6, 1))
        settings = RenderSettings(stepsize=0.05)
        adj = rng.uniform(-1, 1, size=(6, 4))

        def render_loss():
            pix, _ = raymarch_forward(ModelSource(cmodel), origins, dirs, settings,
                                      want_states=True)
            return float(np.sum(pix * adj))

        rgrads = raymarch_backward(cmodel, origins, dirs, settings, adj)
        checked_r, bad_r = _fd_check(cmodel.trainable_arrays(), rgrads.arrays(),
                                     render_loss, rng, probes_per_array=5,
                                     h=1e-3, rtol=1e-2, atol=1e-4)

        checked = checked_m + checked_r
        bad = bad_m + bad_r
        frac_ok = 1.0 - bad / checked

        # Full-precision pass: every MLP parameter at f64.
        params = init_params(4, 48, 10, 2, seed=5, dtype=np.float64)
        x64 = rng.uniform(-1, 1, size=(8, 10))
        g64 = rng.uniform(-1, 1, size=(8, 2))
        _, cache = mlp_forward(params, x64)
        _, agrads = mlp_backward(params, cache, g64)

        def loss64():
            y, _ = mlp_forward(params, x64)
            return float(np.sum(y * g64))

        bad64 = 0
        total64 = 0
        for arr, g in zip([*params.weights, *params.biases],
                          [*agrads.weights, *agrads.biases]):
            flat, gflat = arr.reshape(-1), g.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + 1e-6
                up = loss64()
                flat[k] = orig - 1e-6
                dn = loss64()
                flat[k] = orig
                fd = (up - dn) / 2e-6
                total64 += 1
                if not np.isclose(gflat[k], fd, rtol=1e-5, atol=1e-9):
                    bad64 += 1

        elapsed = time.time() - t0
        ok = frac_ok >= 0.95 and bad64 == 0 and elapsed < 60
        report(1, ok, f"f32 {frac_ok*100:.1f}% of {checked} probes within 1e-2; "
                      f"f64 {total64 - bad64}/{total64} within 1e-5; {elapsed:.0f}s")
        assert frac_ok >= 0.95
        assert bad64 == 0
        assert elapsed < 60


class TestCriterion2Inversion:
    def test_inversion_and_constant_memory(self):
        t0 = time.time()
        rng = np.random.default_rng(2)

        # 1e4 random single steps: invert(step(s)) == s to 1e-4.
        n = 10_000
        c = rng.uniform(0, 1, size=(n, 3))
        a = rng.uniform(0, 0.95, size=n)
        rgb = rng.uniform(0, 1, size=(n, 3))
        sigma = rng.uniform(0, 50, size=n)
        ds = rng.uniform(0.001, 0.05, size=n)
        c2, a2 = composite_step(c, a, rgb, sigma, ds)
        c1, a1 = composite_invert(c2, a2, rgb, sigma, ds)
        max_err = max(np.abs(c1 - c).max(), np.abs(a1 - a).max())

        # Backward against the stored-intermediate oracle: 64 rays x 256 steps.
        from test_render import storeall_reference_backward

        model = model_init(ModelConfig(head="color", layers=2, hidden=16,
                                       fourier_m=6, grid_resolution=4,
                                       grid_channels=4, seed=4))
        n_rays = 64
        origins = np.column_stack([rng.uniform(0.1, 0.9, size=n_rays),
                                   rng.uniform(0.1, 0.9, size=n_rays),
                                   np.full(n_rays, -1.0)])
        dirs = np.tile([0.0, 0.0, 1.0], (n_rays, 1))
        settings = RenderSettings(stepsize=1.0 / 256)
        adj = rng.uniform(-1, 1, size=(n_rays, 4))
        got = raymarch_backward(model, origins, dirs, settings, adj)
        want = storeall_reference_backward(model, origins, dirs, settings, adj)
        rel = max(
            np.abs(g - w).max() / (np.abs(w).max() + 1e-12)
            for g, w in zip(got.arrays(), want.arrays())
        )

        # Peak traced memory must not grow with the step count.
        def peak(stepsize):
            s = RenderSettings(stepsize=stepsize)
            raymarch_backward(model, origins, dirs, s, adj)
            tracemalloc.start()
            raymarch_backward(model, origins, dirs, s, adj)
            _, pk = tracemalloc.get_traced_memory()
            tracemalloc.stop()
            return pk

        p128 = peak(1.0 / 128)
        p1024 = peak(1.0 / 1024)
        mem_ratio = p1024 / p128

        elapsed = time.time() - t0
        ok = max_err <= 1e-4 and rel <= 1e-3 and mem_ratio <= 1.10 and elapsed < 60
        report(2, ok, f"invert err {max_err:.2e}; oracle rel {rel:.2e}; "
                      f"mem 1024/128 steps = {mem_ratio:.3f}; {elapsed:.0f}s")
        assert max_err <= 1e-4
        assert rel <= 1e-3
        assert mem_ratio <= 1.10
        assert elapsed < 60


class TestCriterion3Capacity:
    def test_capacity_model(self):
        t0 = time.time()
        plan = plan_build(4, 48, 47, 1)
        frontier_ok = True
        for channels, layers in {32: 22, 48: 10, 64: 6, 96: 3, 128: 2}.items():
            plan_build(layers, channels, channels - 1, 1)  # must fit
            try:
                plan_build(layers + 1, channels, channels - 1, 1)
                frontier_ok = False
            except CapacityError:
                pass
        elapsed = time.time() - t0
        ok = (plan.m_w, plan.m_s, plan.w) == (18816, 3072, 9) and frontier_ok \
            and elapsed < 1.0
        report(3, ok, f"m_w={plan.m_w} m_s={plan.m_s} w={plan.w}; "
                      f"frontier 32->22 48->10 64->6 96->3 128->2; {elapsed*1000:.0f}ms")
        assert (plan.m_w, plan.m_s, plan.w) == (18816, 3072, 9)
        assert frontier_ok
        assert elapsed < 1.0


class TestCriterion4Fused:
    def test_equivalence_and_speed(self):
        t0 = time.time()
        rng = np.random.default_rng(4)
        worst = 0.0
        for channels, layers in {32: 22, 48: 10, 64: 6, 96: 3, 128: 2}.items():
            cfg = ModelConfig(layers=layers, hidden=channels, grid_resolution=0,
                              fourier_m=(channels - 4) // 2, seed=channels)
            model = model_init(cfg)
            plan = plan_for_model(model)
            x = rng.uniform(-1, 1, size=(160, cfg.input_width)).astype(np.float32)
            diff = np.abs(fused_eval(plan, model, x) - naive_eval_model(model, x)).max()
            worst = max(worst, float(diff))

        model = model_init(ModelConfig(seed=9))  # default: 4x32, m=14, F=16
        plan = plan_for_model(model)
        warmup(plan, model)
        x = rng.uniform(-1, 1, size=(65536, 47)).astype(np.float32)
        naive_eval_model(model, x)

        def median_time(fn, runs=5):
            times = []
            for _ in range(runs):
                s = time.perf_counter()
                fn()
                times.append(time.perf_counter() - s)
            return sorted(times)[len(times) // 2]

        t_naive = median_time(lambda: naive_eval_model(model, x))
        t_fused = median_time(lambda: fused_eval(plan, model, x))
        speedup = t_naive / t_fused

        elapsed = time.time() - t0
        ok = worst <= 1e-4 and speedup > 1.5 and elapsed < 120
        report(4, ok, f"max |fused - naive| = {worst:.2e}; speedup {speedup:.2f}x "
                      f"at batch 65536; {elapsed:.0f}s")
        assert worst <= 1e-4
        assert speedup > 1.5
        assert elapsed < 120


def _mean_metrics(model, volume, n_views=8, resolution=128):
    rows = evaluate_views(model, volume, TF_PRESETS["grayscale"], n_views=n_views,
                          resolution=resolution)
    return rows[-1]["psnr"], rows[-1]["ssim"]


class TestCriterion5LatentGridAblation:
    def test_psnr_ordering(self, trained_gaussians, gaussians_volume):
        t0 = time.time()
        psnr = {}
        for name, model in trained_gaussians.items():
            psnr[name], _ = _mean_metrics(model, gaussians_volume)
        gap_hi = psnr["R32F16"] - psnr["R8F4"]
        gap_lo = psnr["R8F4"] - psnr["nogrid"]
        elapsed = time.time() - t0
        ok = gap_hi >= 1.0 and gap_lo >= 1.0
        report("5a", ok, f"PSNR R32F16 {psnr['R32F16']:.2f} > R8F4 {psnr['R8F4']:.2f} "
                         f"> nogrid {psnr['nogrid']:.2f} (gaps {gap_hi:.2f}/{gap_lo:.2f} dB); "
                         f"{elapsed:.0f}s eval")
        assert gap_hi >= 1.0
        assert gap_lo >= 1.0

    def test_equal_memory_lowpass_baseline(self, trained_gaussians, gaussians_volume):
        # The stated baseline resolution for R=32, F=16 is round(cbrt(32^3*16))
        # = 81, which exceeds this 64^3 volume, so the baseline degenerates to
        # a near-lossless copy of the ground truth. Kept faithful to the
        # protocol; see the run report for the measured gap.
        model_psnr, _ = _mean_metrics(trained_gaussians["R32F16"], gaussians_volume)
        target = min(equivalent_lowpass_res(32, 16), max(gaussians_volume.dims))
        baseline = lowpass_downsample(gaussians_volume, target)
        cams = fibonacci_cameras(8, 128, 128)
        settings = RenderSettings.for_voxels(64, 1.0)
        base_vals = []
        for cam in cams:
            ref = render_image(VolumeSource(gaussians_volume, TF_PRESETS["grayscale"]),
                               cam, settings)
            img = render_image(VolumeSource(baseline, TF_PRESETS["grayscale"]),
                               cam, settings)
            base_vals.append(metric_psnr(img, ref))
        base_psnr = float(np.mean(base_vals))
        margin = model_psnr - base_psnr
        ok = margin >= 2.0
        report("5b", ok, f"model {model_psnr:.2f} dB vs equal-memory low-pass "
                         f"baseline (res {target}) {base_psnr:.2f} dB; margin {margin:.2f} dB")
        assert margin >= 2.0, (
            f"equal-memory baseline at desk scale resolves to the volume's own "
            f"resolution ({target}^3) and scores {base_psnr:.1f} dB; a lossy model "
            f"cannot out-render a near-lossless copy of the ground truth"
        )


class TestCriterion6FourierAblation:
    def test_nerf_features_beat_disabled(self):
        t0 = time.time()
        volume = synth_field("marschner_lobb", 64)
        ssim = {}
        for name, mode in [("nerf", "nerf"), ("off", "off")]:
            cfg = ModelConfig(fourier_mode=mode,
                              fourier_m=14 if mode == "nerf" else None,
                              grid_resolution=0, seed=1)
            model = model_init(cfg)
            train_world(model, WorldTarget(volume), WorldTrainConfig(**TRAIN_BUDGET))
            _, ssim[name] = _mean_metrics(model, volume)
        gap = ssim["nerf"] - ssim["off"]
        elapsed = time.time() - t0
        ok = gap >= 0.01 and elapsed < 600
        report(6, ok, f"SSIM nerf {ssim['nerf']:.4f} vs off {ssim['off']:.4f} "
                      f"(gap {gap:.4f}); {elapsed:.0f}s")
        assert gap >= 0.01
        assert elapsed < 600


class TestCriterion7AdaptiveResampling:
    def test_adaptive_beats_uniform(self, gaussians_volume):
        t0 = time.time()
        target = WorldTarget(gaussians_volume, TF_PRESETS["two_peaks"])
        rng = np.random.default_rng(99)
        eval_p = rng.uniform(0, 1, size=(65536, 3))
        eval_ref = target.reference(eval_p)

        final = {}
        for name, adaptive in [("uniform", False), ("adaptive", True)]:
            model = model_init(ModelConfig(head="color", seed=1))
            cfg = WorldTrainConfig(sample_count=64**3, batch_size=16384, epochs=100,
                                   lr=0.01, seed=0, adaptive=adaptive,
                                   resample_interval=25, error_grid_resolution=32)
            train_world(model, target, cfg)
            from fvsrn.train import _model_predict

            pred, _, _ = _model_predict(model, eval_p)
            final[name] = float(np.mean(np.abs(pred - eval_ref)))
        improvement = (final["uniform"] - final["adaptive"]) / final["uniform"]
        elapsed = time.time() - t0
        ok = improvement >= 0.10 and elapsed < 600
        report(7, ok, f"held-out L1 uniform {final['uniform']:.4f} vs adaptive "
                      f"{final['adaptive']:.4f} ({improvement*100:.0f}% better); {elapsed:.0f}s")
        assert improvement >= 0.10
        assert elapsed < 600


class TestCriterion8Quantization:
    def test_u8_grid_quality_and_size(self, trained_gaussians, gaussians_volume, tmp_path):
        t0 = time.time()
        model = trained_gaussians["R32F16"]
        f32_path = tmp_path / "f32.fvsrn"
        u8_path = tmp_path / "u8.fvsrn"
        checkpoint_save(model, f32_path, "f32", "f32")
        checkpoint_save(model, u8_path, "f32", "u8")
        parent = checkpoint_load(f32_path)
        quantized = checkpoint_load(u8_path)

        _, ssim_parent = _mean_metrics(parent, gaussians_volume)
        _, ssim_quant = _mean_metrics(quantized, gaussians_volume)
        rel_drop = (ssim_parent - ssim_quant) / abs(ssim_parent)

        grid_f32 = memory_footprint(model, "f32", "f32")["grid"]
        grid_u8_payload = memory_footprint(model, "f32", "u8")["grid"] - 8 * 16
        ratio_exact = grid_u8_payload * 4 == grid_f32

        elapsed = time.time() - t0
        ok = rel_drop <= 0.02 and ratio_exact and elapsed < 300
        report(8, ok, f"SSIM {ssim_parent:.4f} -> {ssim_quant:.4f} "
                      f"({rel_drop*100:.2f}% drop); u8 payload = f32/4: {ratio_exact}; "
                      f"{elapsed:.0f}s")
        assert rel_drop <= 0.02
        assert ratio_exact
        assert elapsed < 300


class TestCriterion9TemporalSuperResolution:
    def test_latent_interpolation_beats_grid_interpolation(self):
        # Blobs translate and pulse independently, so the sequence is not a
        # smooth warp a small network could encode in its weights alone;
        # keyframe latents have to carry the per-time structure.
        t0 = time.time()
        T = 21
        params = {"n_blobs": 5, "sigma": 0.07, "speed": 0.5, "pulse": 0.65}

        def provider(t):
            return synth_field("moving_blobs", 64, params, t=(t - 1) / (T - 1), seed=7)

        keyframes = [1, 11, 21]
        train_times = [1, 6, 11, 16, 21]
        held_out = [t for t in range(1, T + 1) if t not in train_times]
        gt = {t: provider(t) for t in range(1, T + 1)}

        def baseline_at(t):
            for lo, hi in zip(keyframes, keyframes[1:]):
                if lo <= t <= hi:
                    w = (t - lo) / (hi - lo)
                    vals = (1 - w) * gt[lo].values + w * gt[hi].values
                    return ScalarVolume(values=vals.astype(np.float32))
            return gt[keyframes[-1]]

        base_psnr = float(np.mean([metric_psnr(baseline_at(t), gt[t]) for t in held_out]))

        scores = {}
        for name, kf, tm in [("multi", keyframes, "none"), ("single", [1], "direct")]:
            cfg = ModelConfig(layers=2, hidden=32, grid_resolution=32,
                              grid_channels=16, keyframe_times=kf, time_mode=tm,
                              time_range=[1.0, float(T)], seed=1)
            model = model_init(cfg)
            tcfg = TemporalTrainConfig(
                keyframe_times=kf, train_times=train_times,
                world=WorldTrainConfig(sample_count=64**3, batch_size=16384,
                                       epochs=150, lr=0.01, seed=0),
            )
            train_temporal(model, provider, tcfg)
            vals = [metric_psnr(decode_volume(model, 64, t=t), gt[t]) for t in held_out]
            scores[name] = float(np.mean(vals))

        margin = scores["multi"] - base_psnr
        elapsed = time.time() - t0
        ok = margin >= 1.0 and scores["single"] < scores["multi"] and elapsed < 1200
        report(9, ok, f"held-out PSNR multi {scores['multi']:.2f} vs baseline "
                      f"{base_psnr:.2f} (margin {margin:.2f} dB); single-keyframe "
                      f"{scores['single']:.2f}; {elapsed:.0f}s")
        assert margin >= 1.0
        assert scores["single"] < scores["multi"]
        assert elapsed < 1200


class TestCriterion10RendererPhysics:
    def test_homogeneous_medium_and_decode_consistency(self, trained_gaussians):
        t0 = time.time()
        vol = ScalarVolume(values=np.ones((4, 4, 4), dtype=np.float32))
        tf = TransferFunction.from_points([(0.0, (1, 1, 1), 8.0), (1.0, (1, 1, 1), 8.0)])
        origins = np.array([[0.5, 0.5, -1.0]])
        dirs = np.array([[0.0, 0.0, 1.0]])
        pixels, _ = raymarch_forward(VolumeSource(vol, tf), origins, dirs,
                                     RenderSettings(stepsize=1.0 / 1000))
        want = 1 - np.exp(-8.0)
        beer_err = abs(pixels[0, 3] - want) / want

        model = trained_gaussians["R32F16"]
        cam = fibonacci_cameras(3, 96, 96)[1]
        settings = RenderSettings.for_voxels(64, 1.0)
        img_model = render_image(ModelSource(model, tf=TF_PRESETS["grayscale"]),
                                 cam, settings)
        decoded = decode_volume(model, 64)
        img_decode = render_image(VolumeSource(decoded, TF_PRESETS["grayscale"]),
                                  cam, settings)
        psnr = metric_psnr(img_model, img_decode)

        elapsed = time.time() - t0
        ok = beer_err <= 0.01 and psnr > 40.0 and elapsed < 120
        report(10, ok, f"homogeneous opacity err {beer_err*100:.3f}%; "
                       f"model-vs-decode PSNR {psnr:.1f} dB; {elapsed:.0f}s")
        assert beer_err <= 0.01
        assert psnr > 40.0
        assert elapsed < 120
