"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is define-by-run: every differentiable operation appends one
record to a thread-local tape while it executes, and ``backward`` walks
that tape in exact reverse insertion order.  Because records are appended
in execution order, the reverse walk is always a valid reverse
topological order, and no sorting is needed.

Gradient conventions:

* gradients accumulate: a leaf consumed by several operations receives
  the sum of all contributions, and calling ``backward`` twice without
  zeroing doubles every leaf gradient;
* only leaf tensors (tensors not produced by a recorded operation) keep
  their gradient in ``.grad``; interior gradients are transient;
* all data is coerced to ``float64`` on construction.

The tape grows until ``reset_graph()`` is called, so training loops reset
it once per step.  Forward-only evaluation should run inside
``no_grad()`` which skips recording entirely.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import NumericsError, ShapeError, UnsupportedError

LOG_EPS = 1e-12  # probabilities are clamped to this floor before log()

_tls = threading.local()


class Tape:
    """Ordered record of executed operations (the computation graph)."""

    __slots__ = ("nodes",)

    def __init__(self):
        # each node: (out_tensor, parents_tuple, backward_fn)
        # backward_fn(g_out) -> tuple of parent gradients (or None per parent)
        self.nodes: list[tuple["Tensor", tuple["Tensor", ...], Callable]] = []


def _state():
    if not hasattr(_tls, "tape"):
        _tls.tape = Tape()
        _tls.recording = True
    return _tls


def reset_graph() -> None:
    """Drop all recorded operations. Call once per training step."""
    _state().tape = Tape()


def graph_size() -> int:
    return len(_state().tape.nodes)


class no_grad:
    """Context manager: forward computations inside are not recorded."""

    def __enter__(self):
        st = _state()
        self._prev = st.recording
        st.recording = False
        return self

    def __exit__(self, *exc):
        _state().recording = self._prev
        return False


class Tensor:
    """A float64 array plus an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_interior")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._interior = False  # True when produced by a recorded op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same data, cut from the graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = "param" if (self.requires_grad and not self._interior) else (
            "node" if self._interior else "const")
        return f"Tensor(shape={self.data.shape}, {flag})"

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: tuple, bwd: Callable) -> Tensor:
    """Create an op output and record it when gradients are needed."""
    st = _state()
    req = st.recording and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._interior = True
        st.tape.nodes.append((out, parents, bwd))
    return out


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss over the active tape.

    Leaf tensors accumulate into ``.grad`` (+=); interior gradients are
    held in a scratch dict and freed as soon as their node is processed.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    one = np.ones((), dtype=np.float64)
    loss.grad = one.copy() if loss.grad is None else loss.grad + one
    grads: dict[int, np.ndarray] = {id(loss): one}
    # leaves collect this call's full contribution first and fold it into
    # .grad once at the end, so repeated backward calls add bit-identical
    # amounts (and two calls exactly double every leaf gradient)
    leaf_grads: dict[int, tuple["Tensor", np.ndarray]] = {}
    nodes = _state().tape.nodes
    for out, parents, bwd in reversed(nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        parent_grads = bwd(g)
        for p, gp in zip(parents, parent_grads):
            if gp is None or not p.requires_grad:
                continue
            if p._interior:
                acc = grads.get(id(p))
                grads[id(p)] = gp if acc is None else acc + gp
            else:
                entry = leaf_grads.get(id(p))
                if entry is None:
                    leaf_grads[id(p)] = (p, np.array(gp, dtype=np.float64, copy=True))
                else:
                    np.add(entry[1], gp, out=entry[1])
    for p, total in leaf_grads.values():
        if p.grad is None:
            p.grad = total
        else:
            np.add(p.grad, total, out=p.grad)


# ---------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------

def _check_same_shape(a: Tensor, b: Tensor, opname: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{opname}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} differ")

    def bwd(g):
        ga = g if a.data.shape == g.shape else np.sum(g)
        gb = g if b.data.shape == g.shape else np.sum(g)
        return ga, gb

    return _make(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ShapeError(f"sub: shapes {a.data.shape} and {b.data.shape} differ")

    def bwd(g):
        ga = g if a.data.shape == g.shape else np.sum(g)
        gb = -g if b.data.shape == g.shape else -np.sum(g)
        return ga, gb

    return _make(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} differ")
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g * bd
        gb = g * ad
        if a.data.shape != ga.shape:
            ga = np.sum(ga)
        if b.data.shape != gb.shape:
            gb = np.sum(gb)
        return ga, gb

    return _make(ad * bd, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar constant."""
    a = _as_tensor(a)
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    """Natural log with the input clamped to LOG_EPS from below."""
    a = _as_tensor(a)
    clamped = np.maximum(a.data, LOG_EPS)
    return _make(np.log(clamped), (a,), lambda g: (g / clamped,))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    keep = a.data > 0.0
    return _make(np.where(keep, a.data, 0.0), (a,), lambda g: (g * keep,))


def tsum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    in_shape = a.data.shape
    out = np.sum(a.data, axis=axes, keepdims=keepdims)

    def bwd(g):
        if axes is None:
            return (np.broadcast_to(g, in_shape).copy() if not keepdims else g * np.ones(in_shape),)
        ax = axes if isinstance(axes, tuple) else (axes,)
        gg = g
        if not keepdims:
            shape = list(in_shape)
            for i in ax:
                shape[i % len(in_shape)] = 1
            gg = g.reshape(shape)
        return (np.broadcast_to(gg, in_shape).copy(),)

    return _make(out, (a,), bwd)


def tmean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    in_shape = a.data.shape
    out = np.mean(a.data, axis=axes, keepdims=keepdims)
    if axes is None:
        count = a.data.size
    else:
        ax = axes if isinstance(axes, tuple) else (axes,)
        count = 1
        for i in ax:
            count *= in_shape[i % len(in_shape)]

    def bwd(g):
        gg = g / count
        if axes is None:
            return (np.broadcast_to(gg, in_shape).copy(),)
        ax = axes if isinstance(axes, tuple) else (axes,)
        if not keepdims:
            shape = list(in_shape)
            for i in ax:
                shape[i % len(in_shape)] = 1
            gg = np.asarray(gg).reshape(shape)
        return (np.broadcast_to(gg, in_shape).copy(),)

    return _make(out, (a,), bwd)


def concat0(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along axis 0."""
    parts = [_as_tensor(p) for p in parts]
    base = parts[0].data.shape[1:]
    for p in parts:
        if p.data.shape[1:] != base:
            raise ShapeError("concat0: trailing dims differ")
    sizes = [p.data.shape[0] for p in parts]
    offs = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(g[offs[i]:offs[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bwd)


def slice0(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice along axis 0; backward scatters into a zero tensor."""
    a = _as_tensor(a)
    if not (0 <= start <= stop <= a.data.shape[0]):
        raise ShapeError(f"slice0: [{start}:{stop}] out of range for axis of {a.data.shape[0]}")
    in_shape = a.data.shape

    def bwd(g):
        ga = np.zeros(in_shape, dtype=np.float64)
        ga[start:stop] = g
        return (ga,)

    return _make(a.data[start:stop].copy(), (a,), bwd)


# ---------------------------------------------------------------------
# linear algebra ops
# ---------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x [N,F] @ w [F,G] (+ b [G])."""
    x = _as_tensor(x)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.data.shape} @ {w.data.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        if b.data.shape != (wd.shape[1],):
            raise ShapeError(f"linear: bias shape {b.data.shape} != ({wd.shape[1]},)")
        out = out + b.data

        def bwd(g):
            return g @ wd.T, xd.T @ g, g.sum(axis=0)

        return _make(out, (x, w, b), bwd)

    def bwd(g):
        return g @ wd.T, xd.T @ g

    return _make(out, (x, w), bwd)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW layout, floor output size.

    x: [N, Cin, H, W]; w: [Cout, Cin, k, k]; odd k only.  Output spatial
    size is floor((H + 2p - k) / s) + 1; a kernel larger than the padded
    input is a ShapeError.  Implemented as im2col + GEMM; the backward
    pass reuses the column matrix for the kernel gradient and scatters
    the input gradient with k*k strided slice additions.
    """
    x = _as_tensor(x)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and kernel, got {x.data.shape}, {w.data.shape}")
    n, cin, h, wdt = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {cin} != kernel channels {cin_w}")
    if kh != kw:
        raise ShapeError(f"conv2d: only square kernels supported, got {kh}x{kw}")
    if kh % 2 != 1:
        raise UnsupportedError(f"conv2d: kernel size must be odd, got {kh}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    k, s, p = kh, int(stride), int(padding)
    if h + 2 * p < k or wdt + 2 * p < k:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {(h + 2 * p, wdt + 2 * p)}")
    ho = (h + 2 * p - k) // s + 1
    wo = (wdt + 2 * p - k) // s + 1

    if p > 0:
        xp = np.zeros((n, cin, h + 2 * p, wdt + 2 * p), dtype=np.float64)
        xp[:, :, p:p + h, p:p + wdt] = x.data
    else:
        xp = x.data
    # windows: [N, Cin, ho, wo, k, k]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    # cols: [N*ho*wo, Cin*k*k] (one copy)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * k * k)
    wmat = w.data.reshape(cout, cin * k * k)
    out = cols @ wmat.T
    if b is not None:
        if b.data.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {b.data.shape} != ({cout},)")
        out += b.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def bwd(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gw = (gmat.T @ cols).reshape(cout, cin, k, k)
        gcols = gmat @ wmat  # [N*ho*wo, Cin*k*k]
        gcols = gcols.reshape(n, ho, wo, cin, k, k).transpose(0, 3, 4, 5, 1, 2)
        gxp = np.zeros((n, cin, h + 2 * p, wdt + 2 * p), dtype=np.float64)
        for ki in range(k):
            for kj in range(k):
                gxp[:, :, ki:ki + s * ho:s, kj:kj + s * wo:s] += gcols[:, :, ki, kj]
        gx = gxp[:, :, p:p + h, p:p + wdt] if p > 0 else gxp
        if b is not None:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    parents = (x, w) if b is None else (x, w, b)
    return _make(np.ascontiguousarray(out), parents, bwd)


_UPSAMPLE_MATS: dict[int, np.ndarray] = {}


def _upsample_matrix(size: int) -> np.ndarray:
    """[2*size, size] interpolation matrix, half-pixel-centered bilinear."""
    m = _UPSAMPLE_MATS.get(size)
    if m is None:
        m = np.zeros((2 * size, size), dtype=np.float64)
        for i in range(2 * size):
            src = (i + 0.5) / 2.0 - 0.5
            lo = int(np.floor(src))
            t = src - lo
            i0 = min(max(lo, 0), size - 1)
            i1 = min(max(lo + 1, 0), size - 1)
            m[i, i0] += 1.0 - t
            m[i, i1] += t
        _UPSAMPLE_MATS[size] = m
    return m


def upsample2x(x: Tensor) -> Tensor:
    """Bilinear 2x spatial upsampling (no learned parameters), NCHW."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2x: expected 4-d input, got {x.data.shape}")
    n, c, h, w = x.data.shape
    ah = _upsample_matrix(h)
    aw = _upsample_matrix(w)
    out = np.matmul(np.matmul(ah, x.data), aw.T)

    def bwd(g):
        return (np.matmul(np.matmul(ah.T, g), aw),)

    return _make(out, (x,), bwd)


def global_mean_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C] spatial mean."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"global_mean_pool: expected 4-d input, got {x.data.shape}")
    n, c, h, w = x.data.shape

    def bwd(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape).copy(),)

    return _make(x.data.mean(axis=(2, 3)), (x,), bwd)


# ---------------------------------------------------------------------
# probability ops
# ---------------------------------------------------------------------

def softmax(x: Tensor, axis: int = 1) -> Tensor:
    """Max-subtraction-stabilized softmax along `axis`.

    Raises NumericsError when the input contains NaN/Inf.
    """
    x = _as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise NumericsError("softmax: non-finite input")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bwd(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), bwd)


def _ce_pieces(probs_data, target, weight, region, opname):
    """Shared shape handling for the cross-entropy variants.

    Returns (channel_axis, per-pixel ce map, counted mask, weight map).
    Target rows must be one-hot or all-zero (ignored); spatial maps have
    no channel axis.
    """
    t = np.asarray(target, dtype=np.float64)
    if t.shape != probs_data.shape:
        raise ShapeError(f"{opname}: target shape {t.shape} != probs shape {probs_data.shape}")
    if probs_data.ndim not in (1, 2, 3, 4):
        raise ShapeError(f"{opname}: expected [C], [N,C], [C,H,W] or [N,C,H,W] probs, "
                         f"got {probs_data.shape}")
    # [C] and [C,H,W] carry the channel on axis 0; [N,C] and [N,C,H,W] on axis 1
    caxis = 1 if probs_data.ndim in (2, 4) else 0
    clamped = np.maximum(probs_data, LOG_EPS)
    ce = -(t * np.log(clamped)).sum(axis=caxis)  # spatial map (or scalar/[N])
    counted = t.sum(axis=caxis) > 0.5
    if region is not None:
        r = np.asarray(region)
        if r.shape != counted.shape:
            raise ShapeError(f"{opname}: region shape {r.shape} != spatial shape {counted.shape}")
        counted = counted & (r > 0.5)
    if weight is not None:
        wmap = np.asarray(weight, dtype=np.float64)
        if wmap.shape != counted.shape:
            raise ShapeError(f"{opname}: weight shape {wmap.shape} != spatial shape {counted.shape}")
    else:
        wmap = None
    return caxis, t, clamped, ce, counted, wmap


def cross_entropy(probs: Tensor, target, weight=None, region=None) -> Tensor:
    """Mean-over-counted-pixels cross-entropy from probabilities.

    ``target`` is a one-hot array of the same shape as ``probs``
    (all-zero rows are ignored pixels).  ``region``/"weight" are optional
    spatial maps: region selects which pixels count, weight scales each
    pixel's contribution (the divisor stays the counted-pixel count).
    Probabilities are clamped to LOG_EPS before the log.  An empty
    counted set gives loss 0.
    """
    probs = _as_tensor(probs)
    caxis, t, clamped, ce, counted, wmap = _ce_pieces(
        probs.data, target, weight, region, "cross_entropy")
    denom = float(counted.sum())
    eff = counted if wmap is None else counted * wmap
    val = (ce * eff).sum() / denom if denom > 0 else 0.0

    def bwd(g):
        if denom == 0:
            return (np.zeros_like(probs.data),)
        coef = np.asarray(eff, dtype=np.float64) / denom
        coef = np.expand_dims(coef, caxis) if probs.data.ndim > 1 else coef
        return ((-t / clamped) * coef * g,)

    return _make(np.float64(val), (probs,), bwd)


def cross_entropy_per_image(probs: Tensor, target, weight=None, region=None) -> Tensor:
    """Per-image mean-over-counted-pixels cross-entropy, shape [N].

    Same contract as ``cross_entropy`` but the mean is taken per image,
    so per-image quality factors can scale each entry before the batch
    reduction.  Images with no counted pixels produce 0.
    """
    probs = _as_tensor(probs)
    if probs.data.ndim < 2:
        raise ShapeError("cross_entropy_per_image: expected a leading batch axis")
    caxis, t, clamped, ce, counted, wmap = _ce_pieces(
        probs.data, target, weight, region, "cross_entropy_per_image")
    n = probs.data.shape[0]
    red = tuple(range(1, ce.ndim))
    denom = counted.sum(axis=red).astype(np.float64) if red else counted.astype(np.float64)
    eff = counted if wmap is None else counted * wmap
    num = (ce * eff).sum(axis=red) if red else ce * eff
    safe = np.maximum(denom, 1.0)
    val = np.where(denom > 0, num / safe, 0.0)

    def bwd(g):
        coef = np.asarray(eff, dtype=np.float64) / safe.reshape((n,) + (1,) * (ce.ndim - 1))
        gg = g.reshape((n,) + (1,) * (ce.ndim - 1))
        coef = coef * gg
        coef = np.expand_dims(coef, caxis)
        return ((-t / clamped) * coef,)

    return _make(val, (probs,), bwd)


def bce_with_logits(z: Tensor, target) -> Tensor:
    """Mean binary cross-entropy on raw logits (numerically stable form)."""
    z = _as_tensor(z)
    t = np.broadcast_to(np.asarray(target, dtype=np.float64), z.data.shape)
    zd = z.data
    val = np.maximum(zd, 0.0) - zd * t + np.log1p(np.exp(-np.abs(zd)))
    n = max(zd.size, 1)
    sig = 1.0 / (1.0 + np.exp(-zd))

    def bwd(g):
        return ((sig - t) * (g / n),)

    return _make(np.float64(val.sum() / n), (z,), bwd)


def grad_reverse(x: Tensor, lam: float) -> Tensor:
    """Identity forward; backward multiplies the gradient by -lam."""
    x = _as_tensor(x)
    lam = float(lam)
    if lam < 0:
        raise UnsupportedError(f"grad_reverse: lam must be >= 0, got {lam}")
    return _make(x.data.copy(), (x,), lambda g: (-lam * g,))


# ---------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------

def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor,
                      step: float = 1e-5, coords=None) -> float:
    """Max relative error between reverse-mode and central finite
    differences of the scalar ``f(x)`` with respect to ``x``.

    ``coords`` restricts the check to a list of flat indices (all
    coordinates when None), which keeps large-parameter checks tractable.
    The relative error uses max(|analytic|, |numeric|, 1e-4) as the
    denominator so near-zero gradients are compared absolutely.
    ``x.data`` is restored exactly afterwards.
    """
    saved_tape = _state().tape
    _tls.tape = Tape()
    try:
        x.zero_grad()
        y = f(x)
        if y.data.shape != ():
            raise ShapeError("finite_diff_check: f must return a scalar")
        backward(y)
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    finally:
        _tls.tape = saved_tape
    flat = x.data.reshape(-1)
    aflat = analytic.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f(x).data)
            flat[i] = orig - step
            fm = float(f(x).data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            err = abs(aflat[i] - num) / max(abs(aflat[i]), abs(num), 1e-4)
            if err > worst:
                worst = err
    return float(worst)
