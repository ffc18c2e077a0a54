"""Dense float tensors with reverse-mode automatic differentiation.

This is a deliberately small engine: it implements exactly the operator set
the snow-removal network needs (dilated same-padded convolution, max pooling,
PReLU, channel concatenation, elementwise arithmetic, reductions) on top of
numpy arrays, with a tape of backward closures for gradient accumulation.

Conventions:
  * Image tensors are laid out ``(batch, channels, height, width)``.
  * Storage dtype is float32 by default and all arithmetic runs in the
    storage dtype; that keeps the memory-bound parts (patch gathering,
    pooling, elementwise traffic) fast on one core. Constructing tensors
    with ``dtype=np.float64`` runs the whole graph in float64, which is how
    the gradient-check oracle gets reference-precision values.
  * No broadcasting between tensors except python scalars. The network never
    needs it, and shape mismatches are almost always bugs here.
  * Graphs are ephemeral: every forward pass builds fresh intermediate
    tensors; parameters are long-lived leaves whose ``grad`` the optimizer
    consumes and resets between steps.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

_grad_enabled = True


class no_grad:
    """Disable graph recording inside a ``with`` block (inference paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- autodiff -----------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``grad`` of every reachable tensor.

        ``self`` must be a scalar produced by recorded operations. Gradients
        add up across multiple uses of the same tensor.
        """
        if self.data.shape != ():
            raise ValueError("backward requires a scalar loss tensor")
        if self._backward is None and not self._parents:
            raise ValueError("backward called with no recorded graph")

        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self) -> "Tensor":
        return tensor_sum(self)


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    """Build a tensor from raw data, defaulting to float32 storage."""
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def _recording(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _make(data: np.ndarray, parents: tuple, backward: Optional[Callable]) -> Tensor:
    out = Tensor(data)
    if backward is not None:
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _acc(t: Tensor, g: np.ndarray, owned: bool = False):
    """Add ``g`` into ``t.grad``. ``owned`` means ``g`` is a fresh array the
    caller gives up, so it can be stored without copying."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if owned else g.copy()
    else:
        t.grad += g


def _check_same(a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}")


def assert_finite(t: Tensor, what: str = "tensor"):
    """NaN/Inf anywhere is an error state, not a value to propagate."""
    if not np.isfinite(t.data).all():
        raise FloatingPointError(f"non-finite values in {what}")


# -- elementwise arithmetic ---------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = float(b)
        data = a.data + np.asarray(s, dtype=a.data.dtype)
        if not _recording(a):
            return Tensor(data)

        def bw(g):
            _acc(a, g)

        return _make(data, (a,), bw)
    _check_same(a, b)
    data = a.data + b.data
    if not _recording(a, b):
        return Tensor(data)

    def bw(g):
        _acc(a, g)
        _acc(b, g)

    return _make(data, (a, b), bw)


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _check_same(a, b)
    data = a.data - b.data
    if not _recording(a, b):
        return Tensor(data)

    def bw(g):
        _acc(a, g)
        _acc(b, -g, owned=True)

    return _make(data, (a, b), bw)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = float(b)
        data = a.data * np.asarray(s, dtype=a.data.dtype)
        if not _recording(a):
            return Tensor(data)

        def bw(g):
            _acc(a, g * np.asarray(s, dtype=g.dtype), owned=True)

        return _make(data, (a,), bw)
    _check_same(a, b)
    data = a.data * b.data
    if not _recording(a, b):
        return Tensor(data)

    def bw(g):
        _acc(a, g * b.data, owned=True)
        _acc(b, g * a.data, owned=True)

    return _make(data, (a, b), bw)


def div(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = float(b)
        if s == 0.0:
            raise ValueError("division by zero scalar")
        return mul(a, 1.0 / s)
    _check_same(a, b)
    if np.any(b.data == 0):
        raise ValueError("division by a tensor containing zeros")
    data = a.data / b.data
    if not _recording(a, b):
        return Tensor(data)

    def bw(g):
        _acc(a, g / b.data, owned=True)
        _acc(b, -g * data / b.data, owned=True)

    return _make(data, (a, b), bw)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; on ties the gradient routes to ``a`` (the left
    operand), which is what makes chained maxima deterministic."""
    _check_same(a, b)
    take_b = b.data > a.data
    data = np.where(take_b, b.data, a.data)
    if not _recording(a, b):
        return Tensor(data)

    def bw(g):
        _acc(a, g * ~take_b, owned=True)
        _acc(b, g * take_b, owned=True)

    return _make(data, (a, b), bw)


def tensor_sum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(dtype=np.float64), dtype=a.data.dtype)
    if not _recording(a):
        return Tensor(data)

    def bw(g):
        if a.grad is None:
            a.grad = np.full(a.data.shape, g, dtype=a.data.dtype)
        else:
            a.grad += g

    out = _make(data, (a,), bw)
    return out


# -- activations and clamps ---------------------------------------------------


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    data = np.where(pos, a.data, 0)
    if not _recording(a):
        return Tensor(data)

    def bw(g):
        _acc(a, g * pos, owned=True)

    return _make(data, (a,), bw)


def prelu(a: Tensor, slope: Tensor) -> Tensor:
    """Parametric ReLU with one learnable slope per channel.

    ``a`` is BCHW; ``slope`` has shape (channels,). Negative inputs are scaled
    by their channel's slope.
    """
    if a.data.ndim != 4:
        raise ValueError("prelu expects a BCHW tensor")
    if slope.data.ndim != 1 or slope.data.shape[0] != a.data.shape[1]:
        raise ValueError(
            f"slope has {slope.data.shape} entries, input has {a.data.shape[1]} channels"
        )
    neg = a.data < 0
    s = slope.data.reshape(1, -1, 1, 1)
    data = np.where(neg, a.data * s, a.data)
    if not _recording(a, slope):
        return Tensor(data)

    def bw(g):
        _acc(a, np.where(neg, g * s, g), owned=True)
        gs = (g * np.where(neg, a.data, 0)).sum(axis=(0, 2, 3), dtype=np.float64)
        _acc(slope, gs.astype(slope.data.dtype), owned=True)

    return _make(data, (a, slope), bw)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]. Gradient passes through strictly inside the interval
    and is zero outside (and at the exact boundary)."""
    data = np.clip(a.data, lo, hi)
    if not _recording(a):
        return Tensor(data)
    inside = (a.data > lo) & (a.data < hi)

    def bw(g):
        _acc(a, g * inside, owned=True)

    return _make(data, (a,), bw)


# -- shape ops ----------------------------------------------------------------


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate BCHW tensors along the channel axis, in order."""
    parts = list(parts)
    if not parts:
        raise ValueError("concat_channels needs at least one tensor")
    first = parts[0]
    for p in parts[1:]:
        if p.data.ndim != 4 or first.data.ndim != 4:
            raise ValueError("concat_channels expects BCHW tensors")
        if p.data.shape[0] != first.data.shape[0] or p.data.shape[2:] != first.data.shape[2:]:
            raise ValueError(
                f"spatial/batch mismatch in concat: {p.data.shape} vs {first.data.shape}"
            )
        if p.data.dtype != first.data.dtype:
            raise ValueError("dtype mismatch in concat")
    if len(parts) == 1:
        data = first.data.copy()
    else:
        data = np.concatenate([p.data for p in parts], axis=1)
    if not _recording(*parts):
        return Tensor(data)

    def bw(g):
        c0 = 0
        for p in parts:
            c1 = c0 + p.data.shape[1]
            _acc(p, g[:, c0:c1])
            c0 = c1

    return _make(data, tuple(parts), bw)


def concat_first(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate tensors along axis 0 (used to fuse parallel convolutions
    that share an input into one kernel stack)."""
    parts = list(parts)
    if not parts:
        raise ValueError("concat_first needs at least one tensor")
    for p in parts[1:]:
        if p.data.shape[1:] != parts[0].data.shape[1:]:
            raise ValueError("trailing dims must match in concat_first")
        if p.data.dtype != parts[0].data.dtype:
            raise ValueError("dtype mismatch in concat_first")
    data = np.concatenate([p.data for p in parts], axis=0)
    if not _recording(*parts):
        return Tensor(data)

    def bw(g):
        o0 = 0
        for p in parts:
            o1 = o0 + p.data.shape[0]
            _acc(p, g[o0:o1])
            o0 = o1

    return _make(data, tuple(parts), bw)


def slice_channels(a: Tensor, c0: int, c1: int) -> Tensor:
    """Contiguous channel slab [c0, c1) of a BCHW tensor."""
    if a.data.ndim != 4:
        raise ValueError("slice_channels expects a BCHW tensor")
    if not (0 <= c0 < c1 <= a.data.shape[1]):
        raise ValueError(f"bad channel slab [{c0}, {c1}) for {a.data.shape[1]} channels")
    data = a.data[:, c0:c1].copy()
    if not _recording(a):
        return Tensor(data)

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[:, c0:c1] += g

    return _make(data, (a,), bw)


# -- convolution ---------------------------------------------------------------


def _patch_matrix(xp: np.ndarray, kh: int, kw: int, dil: int, H: int, W: int) -> np.ndarray:
    """Gather dilated kh x kw patches of the padded input ``xp`` (B,C,Hp,Wp)
    into a dense (C*kh*kw, B*H*W) matrix for a single GEMM."""
    B, C = xp.shape[0], xp.shape[1]
    sB, sC, sH, sW = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(C, kh, kw, B, H, W),
        strides=(sC, dil * sH, dil * sW, sB, sH, sW),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(C * kh * kw, B * H * W)


def _weight_gradient(gout2: np.ndarray, cols: np.ndarray) -> np.ndarray:
    # (out, N) x (N, C*kh*kw); split out so tests can sabotage it
    return gout2 @ cols.T


def _pad_input(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    B, C, H, W = x.shape
    if ph == 0 and pw == 0:
        return x
    xp = np.zeros((B, C, H + 2 * ph, W + 2 * pw), dtype=x.dtype)
    xp[:, :, ph : ph + H, pw : pw + W] = x
    return xp


def _conv1x1(x: Tensor, w: Tensor, b: Tensor, fuse_relu: bool) -> Tensor:
    """Pointwise convolution as a batched matmul; no patch gathering and no
    layout changes, which makes 1x1 layers nearly free."""
    B, C, H, W = x.data.shape
    O = w.data.shape[0]
    w2 = w.data.reshape(O, C)
    data = np.matmul(w2, x.data.reshape(B, C, H * W))
    data += b.data[:, None]
    data = data.reshape(B, O, H, W)
    if fuse_relu:
        np.maximum(data, 0, out=data)

    if not _recording(x, w, b):
        return Tensor(data)
    pos = data > 0 if fuse_relu else None

    def bw(g):
        if fuse_relu:
            g = g * pos
        g3 = g.reshape(B, O, H * W)
        if w.requires_grad:
            gw = np.matmul(g3, x.data.reshape(B, C, H * W).transpose(0, 2, 1)).sum(axis=0)
            _acc(w, gw.reshape(w.data.shape), owned=True)
        if b.requires_grad:
            _acc(b, g3.sum(axis=(0, 2)), owned=True)
        if x.requires_grad:
            gx = np.matmul(w2.T, g3).reshape(B, C, H, W)
            _acc(x, gx, owned=True)

    return _make(data, (x, w, b), bw)


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor,
    stride: int = 1,
    dilation: int = 1,
    activation: Optional[str] = None,
) -> Tensor:
    """2-D convolution, zero same-padding, stride 1, optional dilation.

    ``x`` is (B, C, H, W); ``w`` is (out, C, kh, kw) with odd kernel extents;
    ``b`` is (out,). Output keeps H and W exactly. The effective receptive
    field per axis is ``dilation * (k - 1) + 1``. Arithmetic runs in the
    tensor's storage dtype; build the graph in float64 when reference
    precision matters (the finite-difference harness does).

    ``activation="relu"`` applies the rectifier in place and masks the
    incoming gradient accordingly; it exists because a separate activation
    node costs a full extra array pass on the hot path.
    """
    if activation not in (None, "relu"):
        raise ValueError(f"unknown activation {activation!r}")
    fuse_relu = activation == "relu"
    if x.data.ndim != 4:
        raise ValueError("conv2d input must be BCHW")
    if w.data.ndim != 4:
        raise ValueError("conv2d weights must be (out, in, kh, kw)")
    if stride != 1:
        raise ValueError("only stride 1 is supported")
    if dilation < 1:
        raise ValueError("dilation must be a positive integer")
    B, C, H, W = x.data.shape
    O, Cw, kh, kw = w.data.shape
    if Cw != C:
        raise ValueError(f"channel mismatch: input has {C}, weights expect {Cw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("same-padding needs odd kernel extents")
    if b.data.shape != (O,):
        raise ValueError(f"bias must have shape ({O},)")
    if x.data.dtype != w.data.dtype or x.data.dtype != b.data.dtype:
        raise ValueError("conv2d operands must share a dtype")

    if kh == 1 and kw == 1:
        return _conv1x1(x, w, b, fuse_relu)

    ph = dilation * (kh - 1) // 2
    pw = dilation * (kw - 1) // 2

    xp = _pad_input(x.data, ph, pw)
    cols = _patch_matrix(xp, kh, kw, dilation, H, W)
    w2 = w.data.reshape(O, C * kh * kw)
    out2 = w2 @ cols
    out2 += b.data[:, None]
    data = np.ascontiguousarray(out2.reshape(O, B, H, W).transpose(1, 0, 2, 3))
    if fuse_relu:
        np.maximum(data, 0, out=data)

    if not _recording(x, w, b):
        return Tensor(data)
    pos = data > 0 if fuse_relu else None

    def bw(g):
        if fuse_relu:
            g = g * pos
        # cols is kept alive by this closure; regathering would halve memory
        # but costs a second full patch pass per convolution per step
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(O, B * H * W)
        if w.requires_grad:
            gw = _weight_gradient(g2, cols).reshape(w.data.shape)
            _acc(w, gw, owned=True)
        if b.requires_grad:
            _acc(b, g2.sum(axis=1), owned=True)
        if x.requires_grad:
            # input gradient is itself a same-padded dilated correlation of
            # the output gradient with the flipped kernel; this keeps the
            # GEMM inner dimension healthy instead of scattering a k^2-times
            # larger column matrix back into place
            gp = _pad_input(g, ph, pw)
            gcols = _patch_matrix(gp, kh, kw, dilation, H, W)
            wf = np.ascontiguousarray(
                w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            ).reshape(C, O * kh * kw)
            gx2 = wf @ gcols
            gx = np.ascontiguousarray(gx2.reshape(C, B, H, W).transpose(1, 0, 2, 3))
            _acc(x, gx, owned=True)

    return _make(data, (x, w, b), bw)


# -- max pooling ----------------------------------------------------------------


def maxpool2d(x: Tensor, kernel: int, stride: int) -> Tensor:
    """Max pooling in the two configurations the network uses.

    * ``stride == 1``: same-padded sliding window (odd kernel). Border windows
      take the max over in-bounds elements only.
    * ``stride == kernel``: non-overlapping tiles without padding; trailing
      rows/columns that do not fill a tile are dropped.

    Ties route the gradient to the first window position in row-major order.
    """
    if x.data.ndim != 4:
        raise ValueError("maxpool2d input must be BCHW")
    if kernel < 1 or stride < 1:
        raise ValueError("kernel and stride must be >= 1")
    if kernel == 1 and stride == 1:
        data = x.data.copy()
        if not _recording(x):
            return Tensor(data)

        def bw_id(g):
            _acc(x, g)

        return _make(data, (x,), bw_id)

    if stride == 1:
        return _maxpool_same(x, kernel)
    if stride == kernel:
        return _maxpool_tiles(x, kernel)
    raise ValueError("only stride==1 (same-padded) or stride==kernel (tiled) pooling is used")


def _shift_slices(d: int, n: int):
    """Destination and source ranges for pairing out[i] with in[i + d]."""
    if d >= 0:
        return slice(0, n - d), slice(d, n)
    return slice(-d, n), slice(0, n + d)


def _maxpool_same(x: Tensor, k: int) -> Tensor:
    # border windows shrink to their in-bounds part, so no padding value can
    # ever win the max
    if k % 2 == 0:
        raise ValueError("same-padded pooling needs an odd kernel")
    B, C, H, W = x.data.shape
    p = k // 2
    out = x.data.copy()
    for di in range(-p, p + 1):
        for dj in range(-p, p + 1):
            if di == 0 and dj == 0:
                continue
            dh, sh = _shift_slices(di, H)
            dw, sw = _shift_slices(dj, W)
            np.maximum(out[:, :, dh, dw], x.data[:, :, sh, sw], out=out[:, :, dh, dw])
    if not _recording(x):
        return Tensor(out)

    def bw(g):
        gx = np.zeros_like(x.data)
        taken = np.zeros((B, C, H, W), dtype=bool)
        # scan window positions in row-major order so ties route to the
        # first in-window element, matching the documented convention
        for di in range(-p, p + 1):
            for dj in range(-p, p + 1):
                dh, sh = _shift_slices(di, H)
                dw, sw = _shift_slices(dj, W)
                sel = (x.data[:, :, sh, sw] == out[:, :, dh, dw]) & ~taken[:, :, dh, dw]
                gx[:, :, sh, sw] += g[:, :, dh, dw] * sel
                taken[:, :, dh, dw] |= sel
        _acc(x, gx, owned=True)

    return _make(out, (x,), bw)


def _maxpool_tiles(x: Tensor, k: int) -> Tensor:
    B, C, H, W = x.data.shape
    Ho, Wo = H // k, W // k
    if Ho == 0 or Wo == 0:
        raise ValueError(f"kernel {k} larger than input extent {H}x{W}")
    tiles = x.data[:, :, : Ho * k, : Wo * k].reshape(B, C, Ho, k, Wo, k)
    out = tiles.max(axis=(3, 5))
    if not _recording(x):
        return Tensor(out)

    def bw(g):
        # accumulate into a contiguous tile buffer; the cropped slice of the
        # input gradient is not reshape-safe when extents have a remainder
        gtiles = np.zeros((B, C, Ho, k, Wo, k), dtype=x.data.dtype)
        taken = np.zeros((B, C, Ho, Wo), dtype=bool)
        for i in range(k):
            for j in range(k):
                sel = (tiles[:, :, :, i, :, j] == out) & ~taken
                gtiles[:, :, :, i, :, j] += g * sel
                taken |= sel
        gx = np.zeros_like(x.data)
        gx[:, :, : Ho * k, : Wo * k] = gtiles.reshape(B, C, Ho * k, Wo * k)
        _acc(x, gx, owned=True)

    return _make(out, (x,), bw)
