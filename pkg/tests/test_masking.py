"""Mask sampling, photometric augmentation, and class-mix tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from miclab.errors import ConfigError, RangeError, ShapeError
from miclab.masking import (AugParams, apply_mask, class_mix, color_augment,
                            sample_patch_mask)
from miclab.rng import named_stream


# ------------------------------------------------------------ sampling

def test_ratio_zero_keeps_everything():
    m = sample_patch_mask(32, 32, 8, 0.0, named_stream(0, "mask"))
    assert np.array_equal(m.mask, np.ones((32, 32)))


def test_ratio_one_masks_everything():
    m = sample_patch_mask(32, 32, 8, 1.0, named_stream(0, "mask"))
    assert np.array_equal(m.mask, np.zeros((32, 32)))


def test_mask_is_constant_within_every_cell():
    m = sample_patch_mask(64, 48, 16, 0.5, named_stream(3, "mask"))
    for i in range(0, 64, 16):
        for j in range(0, 48, 16):
            cell = m.mask[i:i + 16, j:j + 16]
            assert cell.min() == cell.max()


def test_mask_matches_recorded_cell_draws():
    m = sample_patch_mask(32, 32, 8, 0.7, named_stream(5, "mask"))
    want = np.repeat(np.repeat((m.cell_draws > 0.7).astype(float), 8, 0), 8, 1)
    assert np.array_equal(m.mask, want)


def test_mask_draws_are_row_major_from_stream():
    # replay: the generator fills the cell grid in row-major order
    rng = named_stream(9, "mask")
    ref = named_stream(9, "mask").random((4, 4))
    m = sample_patch_mask(32, 32, 8, 0.5, rng)
    assert np.array_equal(m.cell_draws, ref)


def test_monte_carlo_masked_fraction_within_three_sigma():
    # 10,000 masks of 4x4 cells; aggregate fraction ~ Binomial mean r
    for r in (0.3, 0.5, 0.7):
        rng = named_stream(123, "mask")
        fracs = np.empty(10_000)
        for i in range(10_000):
            m = sample_patch_mask(64, 64, 16, r, rng)
            fracs[i] = 1.0 - m.mask.mean()  # masked fraction
        sigma_aggregate = math.sqrt(r * (1 - r) / 16) / math.sqrt(10_000)
        assert abs(fracs.mean() - r) <= 3 * sigma_aggregate, \
            f"r={r}: {fracs.mean():.5f} vs {r} (3 sigma {3 * sigma_aggregate:.5f})"


def test_mask_validation_errors():
    rng = named_stream(0, "mask")
    with pytest.raises(ConfigError):
        sample_patch_mask(32, 32, 8, 1.5, rng)
    with pytest.raises(ShapeError):
        sample_patch_mask(30, 32, 8, 0.5, rng)
    with pytest.raises(ConfigError):
        sample_patch_mask(32, 32, 0, 0.5, rng)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_mask_values_binary_property(seed, ratio):
    m = sample_patch_mask(16, 16, 4, ratio, np.random.default_rng(seed))
    assert set(np.unique(m.mask)) <= {0.0, 1.0}


# ---------------------------------------------------------- apply_mask

def test_apply_mask_zeroes_and_preserves():
    img = np.random.default_rng(2).random((3, 16, 16))
    before = img.copy()
    m = sample_patch_mask(16, 16, 4, 0.5, named_stream(2, "mask"))
    out = apply_mask(img, m)
    masked = m.mask == 0.0
    assert np.all(out[:, masked] == 0.0)
    assert np.array_equal(out[:, ~masked], img[:, ~masked])  # bit-identical
    assert np.array_equal(img, before)  # input untouched
    with pytest.raises(ShapeError):
        apply_mask(img, np.ones((8, 8)))


def test_apply_mask_idempotent():
    img = np.random.default_rng(3).random((3, 16, 16))
    m = sample_patch_mask(16, 16, 4, 0.7, named_stream(4, "mask"))
    once = apply_mask(img, m)
    twice = apply_mask(once, m)
    assert np.array_equal(once, twice)


# ------------------------------------------------------- color_augment

def test_augment_disabled_is_bit_exact_identity():
    img = np.random.default_rng(5).random((3, 16, 16))
    out = color_augment(img, AugParams(enabled=False), named_stream(0, "aug"))
    assert np.array_equal(out, img)


def test_augment_neutral_ranges_are_bit_exact_identity():
    img = np.random.default_rng(6).random((3, 16, 16))
    neutral = AugParams(brightness=0.0, contrast=(1.0, 1.0), saturation=(1.0, 1.0),
                        hue=0.0, blur_sigma=0.0, blur_prob=0.0)
    out = color_augment(img, neutral, named_stream(1, "aug"))
    assert np.array_equal(out, img)


def test_augment_stays_in_unit_range_and_changes_pixels():
    img = np.random.default_rng(7).random((3, 32, 32))
    out = color_augment(img, AugParams(), named_stream(2, "aug"))
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert out.shape == img.shape
    assert not np.array_equal(out, img)


def test_augment_rejects_out_of_range_input():
    bad = np.full((3, 4, 4), 1.5)
    with pytest.raises(RangeError):
        color_augment(bad, AugParams(), named_stream(0, "aug"))


def test_augment_deterministic_given_stream_state():
    img = np.random.default_rng(8).random((3, 16, 16))
    a = color_augment(img, AugParams(), named_stream(11, "aug"))
    b = color_augment(img, AugParams(), named_stream(11, "aug"))
    assert np.array_equal(a, b)


def test_augment_consumes_six_draws_per_call():
    # two calls on one stream == two calls on streams advanced by 6 draws
    img = np.random.default_rng(9).random((3, 16, 16))
    shared = named_stream(13, "aug")
    color_augment(img, AugParams(), shared)
    second_on_shared = color_augment(img, AugParams(), shared)
    fresh = named_stream(13, "aug")
    fresh.uniform(size=6)
    second_on_fresh = color_augment(img, AugParams(), fresh)
    assert np.array_equal(second_on_shared, second_on_fresh)


def test_augment_brightness_only_shifts_uniformly():
    img = np.full((3, 8, 8), 0.5)
    p = AugParams(brightness=0.2, contrast=(1.0, 1.0), saturation=(1.0, 1.0),
                  hue=0.0, blur_sigma=0.0, blur_prob=0.0)
    rng = named_stream(17, "aug")
    shift = named_stream(17, "aug").uniform(-0.2, 0.2)
    out = color_augment(img, p, rng)
    assert np.allclose(out, np.clip(0.5 + shift, 0, 1), atol=1e-15)


# ----------------------------------------------------------- class_mix

def _mix_fixture():
    rng = np.random.default_rng(21)
    src_img = rng.random((3, 16, 16))
    tgt_img = rng.random((3, 16, 16))
    src_lab = np.zeros((16, 16), dtype=np.int64)
    src_lab[:8, :] = 1
    src_lab[8:, :8] = 2
    src_lab[12:, 12:] = 3
    tgt_pl = np.full((16, 16), 4, dtype=np.int64)
    return src_img, src_lab, tgt_img, tgt_pl


def test_class_mix_scripted_paste_oracle():
    src_img, src_lab, tgt_img, tgt_pl = _mix_fixture()
    q = 0.625
    img, lab, w = class_mix(src_img, src_lab, tgt_img, tgt_pl, q, named_stream(31, "mix"))

    # oracle: replay the single permutation draw, paste with loops
    present = np.unique(src_lab)  # [0,1,2,3]
    chosen = named_stream(31, "mix").permutation(present)[:math.ceil(len(present) / 2)]
    paste = np.isin(src_lab, chosen)
    for i in range(16):
        for j in range(16):
            if paste[i, j]:
                assert np.array_equal(img[:, i, j], src_img[:, i, j])
                assert lab[i, j] == src_lab[i, j]
                assert w[i, j] == 1.0
            else:
                assert np.array_equal(img[:, i, j], tgt_img[:, i, j])
                assert lab[i, j] == tgt_pl[i, j]
                assert w[i, j] == q


def test_class_mix_selects_ceil_half_of_present_classes():
    src_img, src_lab, tgt_img, tgt_pl = _mix_fixture()
    img, lab, w = class_mix(src_img, src_lab, tgt_img, tgt_pl, 0.5, named_stream(33, "mix"))
    pasted_classes = set(np.unique(lab[w == 1.0]))
    assert len(pasted_classes) == math.ceil(len(np.unique(src_lab)) / 2)
    assert pasted_classes <= set(np.unique(src_lab).tolist())


def test_class_mix_shape_mismatch():
    src_img, src_lab, tgt_img, tgt_pl = _mix_fixture()
    with pytest.raises(ShapeError):
        class_mix(src_img, src_lab, tgt_img[:, :8, :8], tgt_pl, 0.5, named_stream(0, "mix"))
