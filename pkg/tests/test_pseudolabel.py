"""Pseudo-label, quality, and label-noise tests."""

import numpy as np
import pytest

from miclab.errors import ConfigError, NumericsError, UnsupportedError
from miclab.pseudolabel import (inject_pl_noise, pseudo_label_seg, quality_cls,
                                quality_seg)
from miclab.rng import named_stream


def test_argmax_ties_take_lowest_class():
    probs = np.full((3, 2, 2), 1.0 / 3.0)
    assert np.array_equal(pseudo_label_seg(probs), np.zeros((2, 2), dtype=np.int64))
    two_way = np.zeros((3, 1, 1))
    two_way[1, 0, 0] = 0.5
    two_way[2, 0, 0] = 0.5
    assert pseudo_label_seg(two_way)[0, 0] == 1


def test_pseudo_label_matches_manual_argmax():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(5, 6, 8, 8))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    assert np.array_equal(pseudo_label_seg(probs), np.argmax(probs, axis=1))


def test_pseudo_label_rejects_unnormalized():
    with pytest.raises(NumericsError):
        pseudo_label_seg(np.full((3, 2, 2), 0.5))


def test_quality_seg_counts_strictly_above_tau():
    # 4x4 image, 2 classes; exactly 5 pixels above 0.75, one exactly at it
    probs = np.zeros((2, 4, 4))
    top = np.full((4, 4), 0.6)
    top.flat[:5] = 0.9
    top.flat[5] = 0.75  # boundary: must NOT count
    probs[0] = top
    probs[1] = 1.0 - top
    assert quality_seg(probs, 0.75) == 5 / 16
    # batch form returns one fraction per image
    batch = np.stack([probs, probs])
    assert np.array_equal(quality_seg(batch, 0.75), np.array([5 / 16, 5 / 16]))


def test_quality_seg_uniform_is_zero_above_chance():
    probs = np.full((4, 8, 8), 0.25)
    assert quality_seg(probs, 0.3) == 0.0
    with pytest.raises(ConfigError):
        quality_seg(probs, 1.0)


def test_quality_cls_is_max_probability():
    assert quality_cls(np.array([0.2, 0.5, 0.3])) == 0.5
    got = quality_cls(np.array([[0.2, 0.8], [0.55, 0.45]]))
    assert np.array_equal(got, np.array([0.8, 0.55]))


def _five_segment_map():
    """8x8 map with exactly 5 four-connected segments (hand-counted):
    background(0) wraps everything=1 segment; two separate 2s (diagonal
    neighbors count separately); one 1-region; one 3-region."""
    lab = np.zeros((8, 8), dtype=np.int64)
    lab[1:3, 1:3] = 2
    lab[3:5, 3:5] = 2   # touches the first 2-block only diagonally
    lab[5:7, 1:3] = 1
    lab[1:3, 5:7] = 3
    return lab


def test_noise_zero_is_identity():
    lab = _five_segment_map()
    out, count = inject_pl_noise(lab, 0.0, 6, named_stream(0, "plnoise"))
    assert count == 0 and np.array_equal(out, lab)


def test_noise_full_changes_every_segment():
    lab = _five_segment_map()
    out, count = inject_pl_noise(lab, 1.0, 6, named_stream(1, "plnoise"))
    assert count == 5
    # every original segment must now carry a different label
    for mask, old in [(lab == 0, 0), ((lab == 1), 1), ((lab == 3), 3)]:
        vals = set(np.unique(out[mask]))
        assert old not in vals
    assert not np.array_equal(out, lab)


def test_noise_count_rounds_half_up():
    lab = _five_segment_map()  # 5 segments; 0.5*5 = 2.5 -> 3
    out, count = inject_pl_noise(lab, 0.5, 6, named_stream(2, "plnoise"))
    assert count == 3
    # 0.1*5 = 0.5 -> rounds half up to 1
    out, count = inject_pl_noise(lab, 0.1, 6, named_stream(3, "plnoise"))
    assert count == 1


def test_noise_diagonal_regions_are_distinct_segments():
    lab = np.zeros((4, 4), dtype=np.int64)
    lab[0, 0] = 1
    lab[1, 1] = 1  # diagonal neighbor: a separate segment under 4-connectivity
    # segments: one 0-background + two 1-cells = 3
    out, count = inject_pl_noise(lab, 1.0, 4, named_stream(4, "plnoise"))
    assert count == 3


def test_noise_rng_replay_oracle():
    """Re-derive the exact output by replaying the documented draw order."""
    lab = _five_segment_map()
    seed_rng = named_stream(7, "plnoise")
    out, count = inject_pl_noise(lab, 0.5, 6, seed_rng)

    from scipy import ndimage
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    segments = []
    for value in np.unique(lab):
        comp, n = ndimage.label(lab == value, structure=four)
        for i in range(1, n + 1):
            segments.append((int(value), comp == i))
    replay = named_stream(7, "plnoise")
    chosen = np.sort(replay.choice(len(segments), size=3, replace=False))
    want = lab.copy()
    for idx in chosen:
        value, mask = segments[idx]
        draw = int(replay.integers(0, 5))
        want[mask] = draw + 1 if draw >= value else draw
    assert np.array_equal(out, want)


def test_noise_rejects_classification_labels():
    with pytest.raises(UnsupportedError):
        inject_pl_noise(np.array([1, 2, 3]), 0.5, 4, named_stream(0, "plnoise"))
    with pytest.raises(ConfigError):
        inject_pl_noise(_five_segment_map(), 1.5, 6, named_stream(0, "plnoise"))
