"""Implicit mouth field: encoding, rectangle sampling and rendering."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipfield import diffcore as dc
from lipfield.field import (
    SPEECH_DIM,
    FieldError,
    FieldParams,
    Region,
    bilinear_weights,
    eval_field,
    positional_encode,
    render_batch,
    render_canonical_mouth,
    sample_continuous,
)

REGION = Region(10, 20, 18, 26)
A = np.random.default_rng(1).standard_normal(SPEECH_DIM).astype(np.float32)


def small_field(**kw):
    return FieldParams(seed=7, hidden=16, depth=2, bands=3, time_bands=2, **kw)


# -- positional encoding ---------------------------------------------------------
def test_encoding_without_bands_is_identity():
    x = np.array([[0.3, -0.2]])
    np.testing.assert_array_equal(positional_encode(x, 0), x)


def test_encoding_at_zero():
    out = positional_encode(np.zeros((1, 1)), 4)[0]
    assert out[0] == 0
    np.testing.assert_allclose(out[1::2], 0, atol=1e-15)  # sin terms
    np.testing.assert_allclose(out[2::2], 1)  # cos terms


def test_encoding_half_one_band():
    out = positional_encode(np.array([[0.5]]), 1)[0]
    np.testing.assert_allclose(out, [0.5, 1.0, 0.0], atol=1e-12)


def test_encoding_dimension_and_layout():
    x = np.array([[0.1, 0.7]])
    L = 3
    out = positional_encode(x, L)[0]
    assert out.shape == (2 * (1 + 2 * L),)
    ref = []
    for c in x[0]:
        ref.append(c)
        for k in range(L):
            ref += [np.sin(2**k * np.pi * c), np.cos(2**k * np.pi * c)]
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_encoding_rejects_negative_bands():
    with pytest.raises(FieldError):
        positional_encode(np.zeros((1, 2)), -1)


# -- evaluation ------------------------------------------------------------------
def test_zero_head_gives_half_grey():
    theta = small_field(zero_last=True)
    x = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    np.testing.assert_array_equal(eval_field(theta, x, A, 0.3).data, 0.5)


def test_eval_is_deterministic_and_bounded():
    theta = FieldParams(seed=3)
    x = np.random.default_rng(0).uniform(-1, 1, (50, 2)).astype(np.float32)
    a = eval_field(theta, x, A, 0.4).data
    b = eval_field(theta, x, A, 0.4).data
    assert a.tobytes() == b.tobytes()
    assert np.all((a >= 0) & (a <= 1))


def test_wrong_feature_size_raises():
    with pytest.raises(FieldError):
        eval_field(small_field(), np.zeros((2, 2)), np.zeros(10), 0.0)


def test_field_parameter_gradient_on_tiny_network():
    theta = FieldParams(seed=2, hidden=8, depth=2, bands=2, time_bands=1, dtype=np.float64)
    x = np.random.default_rng(4).uniform(-1, 1, (6, 2))
    a = A.astype(np.float64)
    w_out = np.linspace(-1, 1, 18).reshape(6, 3)
    for layer in theta.layers + [theta.head]:
        for name in ("weight", "bias"):
            original = getattr(layer, name)

            def f(probe, layer=layer, name=name, original=original):
                setattr(layer, name, probe)
                try:
                    return (eval_field(theta, x, a, 0.25) * w_out).sum()
                finally:
                    setattr(layer, name, original)

            rep = dc.grad_check(f, original.data.copy(), step=1e-4, tolerance=1e-3)
            assert rep.passed, (name, rep.max_rel_error)


# -- rectangle sampling ------------------------------------------------------------
def rect(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]])


def test_corner_query_returns_that_corner():
    theta = small_field()
    r = rect(-0.5, -0.2, 0.3, 0.4)
    corners = eval_field(theta, r, A, 0.1).data
    for k in range(4):
        np.testing.assert_allclose(sample_continuous(theta, r[k], r, A, 0.1).data, corners[k], atol=1e-6)


def test_constant_field_sampling_is_constant():
    theta = small_field(zero_last=True)
    out = sample_continuous(theta, (0.05, 0.1), rect(-0.1, -0.1, 0.2, 0.3), A, 0.0)
    np.testing.assert_allclose(out.data, 0.5)


def test_sample_continuous_matches_bilinear_oracle():
    rng = np.random.default_rng(11)
    theta = small_field()
    for _ in range(10):
        x0, y0 = rng.uniform(-1, 0, 2)
        x1, y1 = x0 + rng.uniform(0.05, 1), y0 + rng.uniform(0.05, 1)
        q = (rng.uniform(x0, x1), rng.uniform(y0, y1))
        r = rect(x0, y0, x1, y1)
        c = eval_field(theta, r, A, 0.5).data.astype(np.float64)
        # independent formula: interpolate along x on both rows, then along y
        s, tt = (q[0] - x0) / (x1 - x0), (q[1] - y0) / (y1 - y0)
        ref = (1 - tt) * ((1 - s) * c[0] + s * c[1]) + tt * ((1 - s) * c[2] + s * c[3])
        np.testing.assert_allclose(sample_continuous(theta, q, r, A, 0.5).data, ref, atol=1e-6)


def test_sample_continuous_errors():
    theta = small_field()
    with pytest.raises(FieldError):
        sample_continuous(theta, (0, 0), rect(0, 0, 0, 1), A, 0)
    with pytest.raises(FieldError):
        sample_continuous(theta, (2, 2), rect(0, 0, 1, 1), A, 0)
    with pytest.raises(FieldError):
        sample_continuous(theta, (0, 0), np.zeros((3, 2)), A, 0)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(-5, 5), st.floats(-5, 5), st.floats(1e-3, 3), st.floats(1e-3, 3),
    st.floats(0, 1), st.floats(0, 1),
)
def test_bilinear_weights_nonnegative_and_sum_to_one(x0, y0, w, h, fx, fy):
    x1, y1 = x0 + w, y0 + h
    ws = bilinear_weights(x0 + fx * w, y0 + fy * h, x0, y0, x1, y1)
    assert min(ws) >= -1e-12
    assert abs(sum(ws) - 1) < 1e-12


# -- rendering ------------------------------------------------------------------------
def test_eval_render_of_zero_head_is_uniform():
    img = render_canonical_mouth(small_field(zero_last=True), REGION, A, 0.2).data
    assert img.shape == (REGION.height, REGION.width, 3)
    np.testing.assert_array_equal(img, 0.5)


def test_train_render_is_seeded():
    theta = small_field()
    a = render_canonical_mouth(theta, REGION, A, 0.2, True, np.random.default_rng(5)).data
    b = render_canonical_mouth(theta, REGION, A, 0.2, True, np.random.default_rng(5)).data
    c = render_canonical_mouth(theta, REGION, A, 0.2, True, np.random.default_rng(6)).data
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_train_render_converges_to_eval_as_rectangles_shrink():
    theta = small_field()
    ev = render_canonical_mouth(theta, REGION, A, 0.2).data
    errs = [np.abs(render_canonical_mouth(theta, REGION, A, 0.2, True, np.random.default_rng(0), r_max=r).data - ev).max()
            for r in (1.0, 0.1, 1e-3)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-4


def test_train_render_requires_rng():
    with pytest.raises(FieldError):
        render_canonical_mouth(small_field(), REGION, A, 0.0, train_mode=True)


def test_batch_render_matches_single_frames():
    theta = small_field()
    feats = np.random.default_rng(2).standard_normal((3, SPEECH_DIM)).astype(np.float32)
    ts = [0.0, 0.5, 1.0]
    batch = render_batch(theta, REGION, feats, ts).data
    for k in range(3):
        np.testing.assert_allclose(batch[k], render_canonical_mouth(theta, REGION, feats[k], ts[k]).data, atol=1e-6)


def test_region_normalisation_spans_unit_square():
    u, v = REGION.grid()
    nu, nv = REGION.normalize(u, v)
    assert nu.min() == -1 and nu.max() == 1 and nv.min() == -1 and nv.max() == 1
