"""Model builder tests: shapes, determinism, capacity, parameter count."""

import numpy as np
import pytest

from miclab import tensor as T
from miclab.errors import ShapeError
from miclab.models import (ArchSpec, build_classifier, build_discriminator,
                           build_segmenter)
from miclab.rng import named_stream


@pytest.fixture(autouse=True)
def fresh_graph():
    T.reset_graph()
    yield
    T.reset_graph()


def seg_param_count_oracle(widths, in_ch, k, num_classes):
    """Closed-form count: conv layers hold cout*cin*k*k + cout each."""
    total = 0
    cin = in_ch
    for w in widths:
        total += w * cin * k * k + w
        cin = w
    dec = list(widths[::-1][1:]) + [widths[0]]
    for w in dec:
        total += w * cin * k * k + w
        cin = w
    total += num_classes * cin * 1 * 1 + num_classes
    return total


def test_segmenter_output_shape_and_param_count():
    arch = ArchSpec(task="seg", num_classes=6)
    m = build_segmenter(arch, named_stream(0, "init"))
    x = T.Tensor(np.random.default_rng(1).random((2, 3, 32, 32)))
    out = m.forward(x)
    assert out.shape == (2, 6, 32, 32)
    assert m.param_count() == seg_param_count_oracle((16, 32, 64, 64), 3, 3, 6)
    assert m.param_count() == 122950  # frozen for the default architecture


def test_segmenter_rejects_indivisible_input():
    m = build_segmenter(ArchSpec(task="seg"), named_stream(0, "init"))
    with pytest.raises(ShapeError):
        m.forward(T.Tensor(np.zeros((1, 3, 24, 24))))
    with pytest.raises(ShapeError):
        m.forward(T.Tensor(np.zeros((1, 4, 32, 32))))  # wrong channels


def test_builders_are_deterministic_per_seed():
    a = build_segmenter(ArchSpec(task="seg"), named_stream(7, "init"))
    b = build_segmenter(ArchSpec(task="seg"), named_stream(7, "init"))
    c = build_segmenter(ArchSpec(task="seg"), named_stream(8, "init"))
    for (ka, ta), (kb, tb) in zip(a.named(), b.named()):
        assert ka == kb and np.array_equal(ta.data, tb.data)
    assert any(not np.array_equal(ta.data, tc.data)
               for (_, ta), (_, tc) in zip(a.named(), c.named()))


def test_same_input_twice_identical_logits():
    m = build_segmenter(ArchSpec(task="seg"), named_stream(3, "init"))
    x = np.random.default_rng(0).random((1, 3, 32, 32))
    with T.no_grad():
        y1 = m.forward(T.Tensor(x)).data
        y2 = m.forward(T.Tensor(x)).data
    assert np.array_equal(y1, y2)


def test_classifier_shape_and_discriminator_logit():
    cls = build_classifier(ArchSpec(task="cls", num_classes=4), named_stream(0, "init"))
    out = cls.forward(T.Tensor(np.random.default_rng(2).random((5, 3, 32, 32))))
    assert out.shape == (5, 4)
    disc = build_discriminator(6, named_stream(1, "init"))
    probs = np.full((3, 6, 32, 32), 1.0 / 6.0)
    logit = disc.forward(T.Tensor(probs))
    assert logit.shape == (3,)


def test_clone_is_independent_and_gradient_free():
    m = build_segmenter(ArchSpec(task="seg"), named_stream(0, "init"))
    t = m.clone()
    assert all(not p.requires_grad for p in t.params.values())
    first = next(iter(t.params))
    t.params[first].data += 1.0
    assert not np.array_equal(t.params[first].data, m.params[first].data)


def test_state_dict_roundtrip_and_mismatch():
    m = build_segmenter(ArchSpec(task="seg"), named_stream(0, "init"))
    state = m.state_dict()
    m2 = build_segmenter(ArchSpec(task="seg"), named_stream(9, "init"))
    m2.load_state_dict(state)
    for k in state:
        assert np.array_equal(m2.params[k].data, state[k])
    bad = dict(state)
    bad.pop("head.b")
    with pytest.raises(ShapeError):
        m2.load_state_dict(bad)


def test_capacity_fixed_batch_fit():
    """500 plain-SGD steps on one 8-image batch reach 99% pixel accuracy.

    The optimizer here is an in-test loop, independent of the training
    module, so this pins model capacity and gradient quality alone.
    """
    rng = np.random.default_rng(42)
    arch = ArchSpec(task="seg", num_classes=6)
    m = build_segmenter(arch, named_stream(11, "init"))
    # learnable fixed batch: two large grid-aligned rectangles per image,
    # one distinct color per class
    palette = np.array([[0.1, 0.1, 0.1], [0.9, 0.2, 0.2], [0.2, 0.9, 0.2],
                        [0.2, 0.2, 0.9], [0.9, 0.9, 0.2], [0.8, 0.2, 0.9]])
    labels = np.zeros((8, 32, 32), dtype=np.int64)
    images = np.zeros((8, 3, 32, 32))
    for i in range(8):
        lab = np.zeros((32, 32), dtype=np.int64)
        for cls in rng.choice(np.arange(1, 6), size=2, replace=False):
            r0, c0 = 4 * rng.integers(0, 4, size=2)
            hh, ww = 4 * rng.integers(3, 5, size=2)
            lab[r0:r0 + hh, c0:c0 + ww] = int(cls)
        labels[i] = lab
        images[i] = palette[lab].transpose(2, 0, 1) + rng.normal(0, 0.01, (3, 32, 32))
    images = np.clip(images, 0, 1)
    onehot = np.eye(6)[labels].transpose(0, 3, 1, 2)

    vel = {k: np.zeros_like(p.data) for k, p in m.named()}
    for _ in range(500):
        T.reset_graph()
        logits = m.forward(T.Tensor(images))
        loss = T.cross_entropy(T.softmax(logits, axis=1), onehot)
        T.backward(loss)
        for k, p in m.named():
            vel[k] = 0.9 * vel[k] + p.grad
            p.data = p.data - 0.02 * vel[k]
        m.zero_grad()
    with T.no_grad():
        pred = np.argmax(m.forward(T.Tensor(images)).data, axis=1)
    acc = float((pred == labels).mean())
    assert acc >= 0.99, f"train pixel accuracy {acc:.4f} below 0.99"
