import json
import math
from pathlib import Path

import numpy as np
import pytest

from keygram.errors import DimMismatch
from keygram.fusion import (
    FusionLayer,
    create_fusion_layer,
    extend_projections,
    fuse,
    fusion_backward,
    fusion_forward,
    gate,
    project,
)

FIXTURES = Path(__file__).parent / "fixtures"

# Scalar sigmoid oracle: logit 2/sqrt(2), independently evaluated.
GATE_ORACLE = 0.8044296825069569


def make_params(rng, d_m, d, span, mode="token", groups=1, dtype=np.float64):
    return FusionLayer(
        layer=0,
        w_k=rng.normal(size=(d_m, d)).astype(dtype) / math.sqrt(d_m),
        w_v=rng.normal(size=(d_m, d)).astype(dtype) / math.sqrt(d_m),
        conv_kernel=(rng.normal(size=(span, d)) * 0.5).astype(dtype),
        conv_mode=mode,
        slot_groups=groups,
    )


def test_project_zero_memory():
    params = create_fusion_layer(0, memory_width=6, model_width=4, span=3, seed=1)
    k_m, v_m = project(np.zeros((2, 6), dtype=np.float32), params)
    assert not k_m.any() and not v_m.any()


def test_project_identity_rows():
    w = np.zeros((2, 2), dtype=np.float32)
    np.fill_diagonal(w, 1.0)
    params = FusionLayer(0, w, w.copy(), np.zeros((1, 2), dtype=np.float32))
    k_m, _ = project(np.array([[1.0, 0.0]], dtype=np.float32), params)
    assert np.array_equal(k_m, [[1.0, 0.0]])


def test_project_dim_mismatch():
    params = create_fusion_layer(0, memory_width=6, model_width=4, span=3, seed=1)
    with pytest.raises(DimMismatch):
        project(np.zeros((2, 5), dtype=np.float32), params)


def test_gate_orthogonal_is_half():
    hidden = np.zeros((1, 3, 2))
    hidden[0, :, 0] = 1.0
    k_m = np.array([[0.0, 2.0]])
    assert np.allclose(gate(hidden, k_m), 0.5)


def test_gate_scalar_oracle():
    hidden = np.array([[[1.0, 0.0]]])
    k_m = np.array([[2.0, 0.0]])
    got = gate(hidden, k_m)[0, 0, 0]
    assert abs(got - GATE_ORACLE) < 1e-4


def test_gate_open_interval():
    rng = np.random.default_rng(0)
    gates = gate(rng.normal(size=(3, 8, 5)) * 5, rng.normal(size=(3, 5)) * 5)
    assert np.all(gates > 0.0) and np.all(gates < 1.0)


def test_fuse_zero_kernel_is_identity():
    rng = np.random.default_rng(1)
    params = create_fusion_layer(0, memory_width=8, model_width=6, span=4, seed=2)
    hidden = rng.normal(size=(2, 5, 6)).astype(np.float32)
    mem = rng.normal(size=(2, 8)).astype(np.float32)
    fused, _ = fusion_forward(params, hidden, mem)
    assert np.array_equal(fused, hidden)


def test_fuse_unit_kernel_span_one():
    rng = np.random.default_rng(2)
    params = make_params(rng, d_m=8, d=6, span=1)
    params.conv_kernel[:] = 1.0
    hidden = rng.normal(size=(2, 5, 6))
    gates = np.clip(rng.random(size=(2, 5, 1)), 0.01, 0.99)
    v_m = rng.normal(size=(2, 6))
    delta, fused = fuse(hidden, gates, v_m, params)
    assert np.array_equal(delta, gates * v_m[:, None, :])
    assert np.array_equal(fused, hidden + delta)


def test_fuse_dim_mismatch():
    params = create_fusion_layer(0, memory_width=8, model_width=6, span=2, seed=3)
    with pytest.raises(DimMismatch):
        fuse(np.zeros((2, 5, 6)), np.zeros((2, 4, 1)), np.zeros((2, 6)), params)


def test_golden_fixture_blobs():
    manifest = json.loads((FIXTURES / "fusion_manifest.json").read_text())

    def read(entry):
        blob = np.fromfile(FIXTURES / entry["file"], dtype="<f8")
        return blob.reshape(entry["shape"])

    for case in manifest["cases"]:
        arrays = {k: read(v) for k, v in case["arrays"].items()}
        params = FusionLayer(0, arrays["w_k"], arrays["w_v"], arrays["kernel"],
                             case["mode"], case["slot_groups"])
        k_m, v_m = project(arrays["memory"], params)
        np.testing.assert_allclose(k_m, arrays["k_m"], rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(v_m, arrays["v_m"], rtol=1e-10, atol=1e-12)
        fused, cache = fusion_forward(params, arrays["hidden"], arrays["memory"])
        gates = gate(arrays["hidden"], k_m)
        delta, _ = fuse(arrays["hidden"], gates, v_m, params)
        np.testing.assert_allclose(delta, arrays["delta"], rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(fused, arrays["fused"], rtol=1e-10, atol=1e-12)


# --- gradient checking -------------------------------------------------------

def loss_for(params, hidden, mem, probe):
    fused, _ = fusion_forward(params, hidden, mem)
    return float((fused * probe).sum())


def fd_grad(f, x, step=1e-5):
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = f()
        flat[i] = keep - step
        down = f()
        flat[i] = keep
        out[i] = (up - down) / (2 * step)
    return grad


def check_case(rng, b, l, d, d_m, span, mode, groups):
    params = make_params(rng, d_m, d, span, mode, groups)
    hidden = rng.normal(size=(b, l, d))
    mem = rng.normal(size=(b, d_m))
    probe = rng.normal(size=(b, l, d))

    fused, cache = fusion_forward(params, hidden, mem)
    grads = fusion_backward(params, cache, probe)

    pairs = [
        (grads.d_hidden, hidden),
        (grads.d_memory, mem),
        (grads.d_w_k, params.w_k),
        (grads.d_w_v, params.w_v),
        (grads.d_kernel, params.conv_kernel),
    ]
    for analytic, tensor in pairs:
        numeric = fd_grad(lambda: loss_for(params, hidden, mem, probe), tensor)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
        rel = np.abs(analytic - numeric) / denom
        assert rel.max() < 1e-4, f"{mode}: rel err {rel.max():.2e}"


def test_gradients_token_mode():
    rng = np.random.default_rng(11)
    check_case(rng, b=2, l=5, d=6, d_m=10, span=3, mode="token", groups=1)
    check_case(rng, b=1, l=6, d=4, d_m=7, span=4, mode="token", groups=1)


def test_gradients_slot_channel_mode():
    rng = np.random.default_rng(12)
    check_case(rng, b=2, l=4, d=6, d_m=9, span=3, mode="slot-channel", groups=3)
    check_case(rng, b=2, l=3, d=8, d_m=6, span=5, mode="slot-channel", groups=4)


def test_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(13)
    params = make_params(rng, d_m=8, d=6, span=3)
    hidden = rng.normal(size=(2, 4, 6))
    mem = rng.normal(size=(2, 8))
    _, cache = fusion_forward(params, hidden, mem)
    grads = fusion_backward(params, cache, np.zeros_like(hidden))
    for g in (grads.d_hidden, grads.d_memory, grads.d_w_k, grads.d_w_v, grads.d_kernel):
        assert not g.any()


def test_gate_monotone_in_alignment():
    rng = np.random.default_rng(14)
    k_m = rng.normal(size=(1, 5))
    hidden = rng.normal(size=(1, 1, 5))
    base = gate(hidden, k_m)[0, 0, 0]
    boosted = gate(hidden + 0.5 * k_m[:, None, :], k_m)[0, 0, 0]
    assert boosted > base


# --- expansion neutrality ----------------------------------------------------

def test_extend_projections_appended_segments():
    rng = np.random.default_rng(15)
    old_labels = [(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0)]
    new_labels = old_labels + [(2, 0, 0), (2, 1, 0)]
    params = make_params(rng, d_m=8, d=4, span=3)  # 4 segments of width 2
    grown = extend_projections(params, old_labels, new_labels)
    assert grown.w_k.shape == (12, 4)
    assert np.array_equal(grown.w_k[:8], params.w_k)
    assert not grown.w_k[8:].any()


def test_extend_projections_inserted_generation():
    rng = np.random.default_rng(16)
    old_labels = [(0, 0, 0), (1, 0, 0)]
    new_labels = [(0, 0, 0), (0, 0, 1), (1, 0, 0)]  # generation inserted mid-layout
    params = make_params(rng, d_m=6, d=4, span=3)  # segment width 3
    grown = extend_projections(params, old_labels, new_labels)
    assert np.array_equal(grown.w_k[0:3], params.w_k[0:3])
    assert not grown.w_k[3:6].any()
    assert np.array_equal(grown.w_k[6:9], params.w_k[3:6])

    hidden = rng.normal(size=(2, 4, 4))
    mem_old = rng.normal(size=(2, 6))
    mem_new = np.concatenate(
        [mem_old[:, :3], rng.normal(size=(2, 3)), mem_old[:, 3:]], axis=1)
    fused_old, _ = fusion_forward(params, hidden, mem_old)
    fused_new, _ = fusion_forward(grown, hidden, mem_new)
    np.testing.assert_array_equal(fused_old, fused_new)


def test_extend_twice_equals_once():
    rng = np.random.default_rng(17)
    l0 = [(0, 0, 0), (1, 0, 0)]
    l1 = l0 + [(2, 0, 0)]
    l2 = l1 + [(3, 0, 0)]
    params = make_params(rng, d_m=4, d=4, span=3)
    once = extend_projections(params, l0, l2)
    twice = extend_projections(extend_projections(params, l0, l1), l1, l2)
    assert np.array_equal(once.w_k, twice.w_k)
    assert np.array_equal(once.w_v, twice.w_v)


def test_gradient_reaches_new_rows_once_memory_nonzero():
    rng = np.random.default_rng(18)
    old_labels = [(0, 0, 0), (1, 0, 0)]
    new_labels = old_labels + [(0, 0, 1)]
    params = make_params(rng, d_m=6, d=4, span=3)
    grown = extend_projections(params, old_labels, new_labels)

    hidden = rng.normal(size=(2, 4, 4))
    mem = rng.normal(size=(2, 9))
    probe = rng.normal(size=(2, 4, 4))
    _, cache = fusion_forward(grown, hidden, mem)
    grads = fusion_backward(grown, cache, probe)
    assert np.abs(grads.d_w_k[6:]).max() > 0
    assert np.abs(grads.d_w_v[6:]).max() > 0
