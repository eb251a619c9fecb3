"""Cache-resident blocked MLP evaluation and its capacity model.

The evaluator processes 32-sample tiles against 16x16 weight blocks, keeping
each tile's activations in a small scratch region instead of materializing
whole-layer activations for the full batch. Byte accounting mirrors a
2-bytes-per-entry storage model (the plan documents the actual float32
scratch figures alongside), and compute runs in float32.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .model import FvsrnModel
from .nn import ACTIVATION_KINDS, MlpParams

DEFAULT_BUDGET = 48 * 1024
TILE_SAMPLES = 32
BLOCK = 16

_ACT_CODES = {kind: i for i, kind in enumerate(ACTIVATION_KINDS)}
_HEAD_CODES = {"density": 0, "color": 1}


class CapacityError(ValueError):
    pass


def _pad16(n: int) -> int:
    return max(BLOCK, ((n + BLOCK - 1) // BLOCK) * BLOCK)


@dataclass(frozen=True)
class FusedPlan:
    """Blocked evaluation plan plus both byte accountings.

    m_w / m_s / w use the uniform hidden-layer arithmetic at 2 bytes per
    entry (all layers counted as hidden-shaped); feasibility and the
    resident-tile count use the padded layer shapes actually evaluated.
    """

    layers: int
    hidden: int
    d_in: int
    d_out: int
    padded_widths: tuple[int, ...]
    budget_bytes: int
    m_w: int
    m_s: int
    w: int
    resident_weight_bytes: int
    resident_scratch_bytes: int
    max_resident_tiles: int
    scratch_bytes_f32: int


def plan_build(layers: int, hidden: int, d_in: int, d_out: int,
               budget_bytes: int = DEFAULT_BUDGET) -> FusedPlan:
    """Build the tile plan; raises CapacityError when the budget is exceeded."""
    if layers < 1 or hidden < 1 or d_in < 1 or d_out < 1:
        raise ValueError("layer shape components must be positive")
    pin, pc, pout = _pad16(d_in), _pad16(hidden), _pad16(d_out)
    if layers == 1:
        widths = (pin, pout)
    else:
        widths = (pin,) + (pc,) * (layers - 1) + (pout,)

    # Uniform accounting: every layer counted as hidden x hidden + bias.
    m_w = layers * (2 * hidden * hidden + 2 * hidden)
    m_s = 2 * TILE_SAMPLES * hidden
    w = (budget_bytes - m_w) // m_s

    # Padded accounting used for the capacity check.
    weight_entries = sum(widths[i] * widths[i + 1] for i in range(layers))
    bias_entries = sum(widths[1:])
    resident_weight_bytes = 2 * (weight_entries + bias_entries)
    resident_scratch_bytes = 2 * TILE_SAMPLES * max(widths)
    need = resident_weight_bytes + resident_scratch_bytes
    if need > budget_bytes:
        raise CapacityError(
            f"network does not fit the fast-memory budget: weights+biases "
            f"{resident_weight_bytes} bytes plus per-tile activations "
            f"{resident_scratch_bytes} bytes exceed {budget_bytes} bytes"
        )
    max_tiles = (budget_bytes - resident_weight_bytes) // resident_scratch_bytes
    # The evaluator double-buffers activations at f32.
    scratch_f32 = 2 * TILE_SAMPLES * max(widths) * 4
    return FusedPlan(
        layers=layers, hidden=hidden, d_in=d_in, d_out=d_out,
        padded_widths=widths, budget_bytes=budget_bytes,
        m_w=m_w, m_s=m_s, w=w,
        resident_weight_bytes=resident_weight_bytes,
        resident_scratch_bytes=resident_scratch_bytes,
        max_resident_tiles=max_tiles,
        scratch_bytes_f32=scratch_f32,
    )


def plan_for_model(model: FvsrnModel, budget_bytes: int = DEFAULT_BUDGET) -> FusedPlan:
    cfg = model.config
    return plan_build(cfg.layers, cfg.hidden, cfg.input_width, cfg.output_width,
                      budget_bytes)


def _pack(plan: FusedPlan, params: MlpParams):
    """Zero-pad weights/biases into the plan's layer shapes, flattened."""
    if params.layer_count != plan.layers or params.d_in != plan.d_in \
            or params.d_out != plan.d_out:
        raise ValueError("model parameters do not match the plan shape")
    wpack = []
    bpack = []
    for i, (wm, bv) in enumerate(zip(params.weights, params.biases)):
        win, wout = plan.padded_widths[i], plan.padded_widths[i + 1]
        wp = np.zeros((wout, win), dtype=np.float32)
        wp[: wm.shape[0], : wm.shape[1]] = wm
        bp = np.zeros(wout, dtype=np.float32)
        bp[: bv.shape[0]] = bv
        wpack.append(wp.ravel())
        bpack.append(bp)
    return np.concatenate(wpack), np.concatenate(bpack), \
        np.asarray(plan.padded_widths, dtype=np.int64)


_F0 = np.float32(0.0)
_F1 = np.float32(1.0)
_F2 = np.float32(2.0)
_FH = np.float32(0.5)
_INV_PI = np.float32(1.0 / np.pi)
_PI = np.float32(np.pi)
_C2 = np.float32(-1.0 / 2.0)
_C4 = np.float32(1.0 / 24.0)
_C6 = np.float32(-1.0 / 720.0)
_C8 = np.float32(1.0 / 40320.0)
_C10 = np.float32(-1.0 / 3628800.0)


@njit(cache=True, parallel=True, fastmath=True)
def _fused_kernel(wpack, bpack, widths, nlayers, act, head, dout_real, x, out):
    n = x.shape[0]
    ntiles = (n + TILE_SAMPLES - 1) // TILE_SAMPLES
    maxw = 0
    for i in range(nlayers + 1):
        if widths[i] > maxw:
            maxw = widths[i]
    for tile in prange(ntiles):
        lo = tile * TILE_SAMPLES
        cnt = min(lo + TILE_SAMPLES, n) - lo
        # Per-tile scratch: double-buffered activations, channel-major so the
        # 32-sample dimension is contiguous for SIMD.
        va = np.zeros((maxw, TILE_SAMPLES), dtype=np.float32)
        vb = np.zeros((maxw, TILE_SAMPLES), dtype=np.float32)
        for s in range(cnt):
            for j in range(x.shape[1]):
                va[j, s] = x[lo + s, j]
        off = 0
        boff = 0
        for li in range(nlayers):
            win = widths[li]
            wout_stored = widths[li + 1]
            # Padded rows of the last layer carry zero weights; skip them.
            wout = wout_stored if li < nlayers - 1 else dout_real
            r0 = 0
            while r0 + 4 <= wout:
                for s in range(TILE_SAMPLES):
                    vb[r0, s] = bpack[boff + r0]
                    vb[r0 + 1, s] = bpack[boff + r0 + 1]
                    vb[r0 + 2, s] = bpack[boff + r0 + 2]
                    vb[r0 + 3, s] = bpack[boff + r0 + 3]
                for k in range(win):
                    w0 = wpack[off + r0 * win + k]
                    w1 = wpack[off + (r0 + 1) * win + k]
                    w2 = wpack[off + (r0 + 2) * win + k]
                    w3 = wpack[off + (r0 + 3) * win + k]
                    for s in range(TILE_SAMPLES):
                        a = va[k, s]
                        vb[r0, s] += w0 * a
                        vb[r0 + 1, s] += w1 * a
                        vb[r0 + 2, s] += w2 * a
                        vb[r0 + 3, s] += w3 * a
                r0 += 4
            while r0 < wout:
                bias = bpack[boff + r0]
                for s in range(TILE_SAMPLES):
                    vb[r0, s] = bias
                for k in range(win):
                    wv = wpack[off + r0 * win + k]
                    for s in range(TILE_SAMPLES):
                        vb[r0, s] += wv * va[k, s]
                r0 += 1
            off += win * wout_stored
            boff += wout_stored
            if li < nlayers - 1:
                if act == 0:  # relu
                    for r in range(wout):
                        for s in range(TILE_SAMPLES):
                            if vb[r, s] < _F0:
                                vb[r, s] = _F0
                elif act == 1:  # sigmoid
                    for r in range(wout):
                        for s in range(TILE_SAMPLES):
                            vb[r, s] = 1.0 / (1.0 + math.exp(-vb[r, s]))
                elif act == 2:  # softplus
                    for r in range(wout):
                        for s in range(TILE_SAMPLES):
                            xv = vb[r, s]
                            if xv > 20.0:
                                vb[r, s] = xv
                            else:
                                vb[r, s] = math.log1p(math.exp(xv))
                else:
                    # snake family via branchless range-reduced cos(2x):
                    # snake:     x + sin^2 x  = x + 0.5 - 0.5 cos 2x
                    # snake_alt: 0.5x + sin^2 x
                    slope = _F1 if act == 3 else _FH
                    for r in range(wout):
                        for s in range(TILE_SAMPLES):
                            xv = vb[r, s]
                            t2 = _F2 * xv
                            k2 = np.floor(t2 * _INV_PI + _FH)
                            rr = t2 - k2 * _PI
                            q = rr * rr
                            cpoly = _F1 + q * (_C2 + q * (_C4 + q * (_C6 + q * (_C8 + q * _C10))))
                            sign = _F1 - _F2 * (k2 - _F2 * np.floor(k2 * _FH))
                            vb[r, s] = slope * xv + _FH - _FH * (sign * cpoly)
            va, vb = vb, va
        for s in range(cnt):
            for j in range(dout_real):
                xv = va[j, s]
                if head == 1 and j == 3:  # color absorption channel: softplus
                    if xv > 20.0:
                        out[lo + s, j] = xv
                    else:
                        out[lo + s, j] = math.log1p(math.exp(xv))
                else:
                    out[lo + s, j] = 1.0 / (1.0 + math.exp(-xv))


def _python_tile_eval(plan: FusedPlan, wpack, bpack, widths, act_kind, head,
                      dout_real, x):
    """Reference tile loop in numpy; same scratch discipline, used for
    instrumentation and as a slow fallback."""
    from .nn import act_eval
    from scipy.special import expit

    n = x.shape[0]
    out = np.empty((n, dout_real), dtype=np.float32)
    maxw = max(widths)
    va = np.zeros((maxw, TILE_SAMPLES), dtype=np.float32)
    vb = np.zeros((maxw, TILE_SAMPLES), dtype=np.float32)
    wmats = []
    off = 0
    for i in range(plan.layers):
        win, wout = widths[i], widths[i + 1]
        wmats.append(wpack[off : off + win * wout].reshape(wout, win))
        off += win * wout
    boffs = np.concatenate([[0], np.cumsum(widths[1:])]).astype(int)
    for lo in range(0, n, TILE_SAMPLES):
        cnt = min(lo + TILE_SAMPLES, n) - lo
        va[:, :] = 0.0
        va[: x.shape[1], :cnt] = x[lo : lo + cnt].T
        for li in range(plan.layers):
            wout = widths[li + 1] if li < plan.layers - 1 else dout_real
            bias = bpack[boffs[li] : boffs[li] + wout]
            np.matmul(wmats[li][:wout, :], va[: widths[li]], out=vb[:wout])
            vb[:wout] += bias[:, None]
            if li < plan.layers - 1:
                vb[:wout] = act_eval(act_kind, vb[:wout])
            va, vb = vb, va
        block = expit(va[:dout_real, :cnt])
        if head == 1 and dout_real > 3:
            block[3] = np.logaddexp(0.0, va[3, :cnt])
        out[lo : lo + cnt] = block.T
    return out


def fused_eval(plan: FusedPlan, model: FvsrnModel, x: np.ndarray,
               python_tiles: bool = False) -> np.ndarray:
    """Evaluate head(mlp(x)) through the blocked tile path.

    x is a batch of assembled inputs (N, d_in). Returns (N,) for density
    heads and (N, 4) for color heads, matching the naive evaluator to 1e-4.
    """
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != plan.d_in:
        raise ValueError(f"expected assembled inputs (N, {plan.d_in}), got {x.shape}")
    wpack, bpack, widths = _pack(plan, model.params)
    act = _ACT_CODES[model.params.activation]
    head = _HEAD_CODES[model.config.head]
    dout_real = model.config.output_width
    if python_tiles:
        out = _python_tile_eval(plan, wpack, bpack, list(plan.padded_widths),
                                model.params.activation, head, dout_real, x)
    else:
        out = np.empty((x.shape[0], dout_real), dtype=np.float32)
        _fused_kernel(wpack, bpack, widths, plan.layers, act, head, dout_real, x, out)
    return out[:, 0] if model.config.head == "density" else out


def naive_eval_model(model: FvsrnModel, x: np.ndarray) -> np.ndarray:
    """Layer-by-layer full-batch evaluator (the benchmark baseline)."""
    from .model import apply_color_head, apply_density_head
    from .nn import mlp_eval

    raw = mlp_eval(model.params, np.asarray(x, dtype=np.float32))
    if model.config.head == "density":
        return apply_density_head(raw)
    return apply_color_head(raw)


def warmup(plan: FusedPlan, model: FvsrnModel) -> None:
    """Force kernel compilation outside timed regions."""
    fused_eval(plan, model, np.zeros((TILE_SAMPLES, plan.d_in), dtype=np.float32))


def bench_compare(model: FvsrnModel, batch_sizes: list[int], runs: int = 5,
                  seed: int = 0) -> list[dict]:
    """Median throughput of the naive and fused evaluators per batch size.

    Returns one row per (batch, evaluator): {batch, evaluator, samples_per_sec}.
    """
    plan = plan_for_model(model)
    warmup(plan, model)
    rng = np.random.default_rng(seed)
    rows = []
    for batch in batch_sizes:
        x = rng.uniform(-1.0, 1.0, size=(batch, plan.d_in)).astype(np.float32)
        naive_eval_model(model, x)  # warm caches
        for name, fn in (("naive", lambda: naive_eval_model(model, x)),
                         ("fused", lambda: fused_eval(plan, model, x))):
            times = []
            for _ in range(max(runs, 5)):
                t0 = time.perf_counter()
                fn()
                times.append(time.perf_counter() - t0)
            med = sorted(times)[len(times) // 2]
            rows.append({"batch": batch, "evaluator": name,
                         "samples_per_sec": batch / med})
    return rows


def bench_csv(rows: list[dict]) -> str:
    lines = ["batch,evaluator,samples_per_sec"]
    for r in rows:
        lines.append(f"{r['batch']},{r['evaluator']},{r['samples_per_sec']:.1f}")
    return "\n".join(lines) + "\n"
