"""Mouth pasting, hole augmentation and the residual blending network."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipfield import diffcore as dc
from lipfield.compose import (
    BlendParams,
    ComposeError,
    MouthPlacement,
    blank_box,
    blend,
    blend_residual,
    hole_augment,
    paste_mouth,
    sample_holes,
)

BOX = (5, 7, 17, 15)  # x0, y0, x1, y1


def frame(seed=0, h=24, w=28):
    return np.random.default_rng(seed).random((h, w, 3)).astype(np.float32)


def checker(h, w):
    v, u = np.mgrid[0:h, 0:w]
    return np.repeat(((u + v) % 2).astype(np.float32)[..., None], 3, -1)


# -- paste ------------------------------------------------------------------------
def test_paste_of_own_content_is_identity():
    f = frame()
    mouth = f[7:15, 5:17].copy()
    np.testing.assert_array_equal(paste_mouth(f, mouth, MouthPlacement(BOX)), f)


def test_paste_with_invalid_mouth_is_noop():
    f = frame()
    out = paste_mouth(f, np.zeros((8, 12, 3)), MouthPlacement(BOX), np.zeros((8, 12), bool))
    np.testing.assert_array_equal(out, f)


def test_checkerboard_paste_is_exact():
    f = np.full((24, 28, 3), 0.3, np.float32)
    out = paste_mouth(f, checker(8, 12), MouthPlacement(BOX))
    np.testing.assert_array_equal(out[7:15, 5:17], checker(8, 12))
    outside = np.ones((24, 28), bool)
    outside[7:15, 5:17] = False
    assert np.all(out[outside] == 0.3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_paste_never_touches_outside_box(seed):
    rng = np.random.default_rng(seed)
    f = frame(seed)
    x0, y0 = int(rng.integers(0, 20)), int(rng.integers(0, 16))
    x1, y1 = x0 + int(rng.integers(1, 28 - x0 + 1)), y0 + int(rng.integers(1, 24 - y0 + 1))
    mouth = rng.random((y1 - y0, x1 - x0, 3))
    valid = rng.random((y1 - y0, x1 - x0)) < 0.5
    out = paste_mouth(f, mouth, MouthPlacement((x0, y0, x1, y1)), valid)
    inside = np.zeros((24, 28), bool)
    inside[y0:y1, x0:x1] = True
    np.testing.assert_array_equal(out[~inside], f[~inside])
    box_out, box_f = out[y0:y1, x0:x1], f[y0:y1, x0:x1]
    np.testing.assert_array_equal(box_out[valid], mouth[valid].astype(box_out.dtype))
    np.testing.assert_array_equal(box_out[~valid], box_f[~valid])


def test_paste_errors():
    f = frame()
    with pytest.raises(ComposeError):
        paste_mouth(f, np.zeros((8, 12, 3)), MouthPlacement((20, 7, 32, 15)))  # off the right edge
    with pytest.raises(ComposeError):
        paste_mouth(f, np.zeros((5, 5, 3)), MouthPlacement(BOX))  # wrong mouth size
    with pytest.raises(ComposeError):
        MouthPlacement(BOX, keypoints=np.array([[0.0, 0.0]] * 4)).check((24, 28))


def test_paste_is_differentiable_in_the_mouth():
    f = frame()
    mouth = dc.Tensor(np.random.default_rng(1).random((8, 12, 3)), requires_grad=True)
    valid = np.ones((8, 12), bool)
    valid[0] = False
    out = paste_mouth(f, mouth, MouthPlacement(BOX), valid)
    dc.backward(out.sum())
    expected = np.repeat(valid[..., None], 3, -1).astype(float)
    np.testing.assert_array_equal(mouth.grad, expected)


def test_blank_box():
    out = blank_box(frame(), BOX)
    assert np.all(out[7:15, 5:17] == 0)
    assert out[0, 0, 0] == frame()[0, 0, 0]


# -- holes -----------------------------------------------------------------------------
def test_probability_zero_is_identity():
    f = frame()
    out, mask = hole_augment(f, 0.0, rng=3)
    assert out is f and not mask.any()


def test_holes_are_seeded_and_black():
    f = frame()
    a, ma = hole_augment(f, 1.0, rng=7)
    b, mb = hole_augment(f, 1.0, rng=7)
    np.testing.assert_array_equal(ma, mb)
    np.testing.assert_array_equal(a, b)
    assert ma.any() and np.all(a[ma] == 0)
    np.testing.assert_array_equal(a[~ma], f[~ma])


def test_hole_probability_validation():
    with pytest.raises(ComposeError):
        hole_augment(frame(), 1.5)


def test_monte_carlo_hole_fractions():
    rng = np.random.default_rng(0)
    h, w = 64, 64
    single = np.array([sample_holes((h, w), rng, count=(1, 1)).mean() for _ in range(1000)])
    # rounding the rectangle to whole pixels moves each area by under 2 px rows/cols
    assert single.min() >= 0.02 * 0.8 and single.max() <= 0.10 * 1.25
    assert 0.05 < single.mean() < 0.07  # uniform on [0.02, 0.10]
    union = np.array([hole_augment(np.ones((h, w, 3)), 1.0, rng)[1].mean() for _ in range(1000)])
    assert union.min() >= 0.02 * 0.8 and union.max() <= 8 * 0.10 * 1.25
    taken = np.array([hole_augment(np.ones((8, 8, 3)), 0.5, rng)[1].any() for _ in range(1000)])
    assert abs(taken.mean() - 0.5) < 0.05


# -- blend -------------------------------------------------------------------------------
def test_zero_head_blend_is_identity():
    x = frame(2, 32, 48)
    p = BlendParams(seed=0, base=8)
    np.testing.assert_array_equal(blend(p, x).data, x)
    np.testing.assert_array_equal(blend_residual(p, x).data, 0)


def test_blend_bounded_and_deterministic():
    p = BlendParams(seed=1, base=8, zero_last=False)
    x = frame(3, 20, 30)  # not a multiple of 16: exercises edge padding
    a = blend(p, x).data
    assert a.shape == x.shape
    assert np.all((a >= 0) & (a <= 1))
    assert a.tobytes() == blend(p, x).data.tobytes()
    r = blend_residual(p, x).data
    assert np.all(np.abs(r) <= 1)


def test_blend_with_mask_channel():
    p = BlendParams(seed=1, base=8, use_mask=True, zero_last=False)
    x = frame(3, 16, 16)
    mask = np.zeros((16, 16), bool)
    mask[4:8, 4:8] = True
    a = blend(p, x, mask).data
    assert a.shape == x.shape


def test_blend_gradient_reaches_parameters_and_input():
    p = BlendParams(seed=2, base=4, zero_last=False)
    x = dc.Tensor(frame(4, 16, 16).astype(np.float64) * 0.8 + 0.1, requires_grad=True)
    dc.backward((blend(p, x) * 1.0).sum())
    assert np.any(x.grad != 0)
    assert all(q.grad is not None for q in p.parameters())


def test_trained_blend_improves_holes(small_corpus):
    """A short hole-augmented training run beats the un-blended input on the holes."""
    frames = [f.image[16:48, 16:48] for f in small_corpus.frames[:40]]
    p = BlendParams(seed=0, base=8)
    opt = dc.Adam(p.parameters(), lr=3e-3)
    for s in range(150):
        rng = np.random.default_rng([5, s])
        gt = frames[int(rng.integers(len(frames)))]
        holed, _ = hole_augment(gt, 1.0, rng)
        loss = ((blend(p, holed) - gt) ** 2).mean()
        opt.zero_grad()
        dc.backward(loss)
        opt.step()
    errs_in, errs_out = [], []
    for k, gt in enumerate(small_corpus.frames[40:50]):
        gt = gt.image[16:48, 16:48]
        holed, mask = hole_augment(gt, 1.0, np.random.default_rng([9, k]))
        out = blend(p, holed).data
        errs_in.append(np.mean((holed[mask] - gt[mask]) ** 2))
        errs_out.append(np.mean((out[mask] - gt[mask]) ** 2))
    assert np.mean(errs_out) < np.mean(errs_in)
