"""Minimal dense-tensor engine with reverse-mode autodiff.

Float64 throughout: the gradient checker works at 1e-4 tolerances that
float32 cannot sustain, and everything here runs at desk scale.

The graph is built eagerly: every op returns a new Tensor that keeps
references to its parents and a closure that scatters the upstream
gradient back to them. ``Tensor.backward()`` runs a topological sweep
from a scalar loss. Raw numpy kernels (``conv1d_same_raw`` etc.) are
exposed separately so benchmark code can time the arithmetic without
graph bookkeeping.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def init_rng(seed):
    """Deterministic generator from a 64-bit unsigned seed."""
    return np.random.Generator(np.random.PCG64(np.uint64(seed)))


def fan_in_uniform(rng, shape, fan_in):
    """Weight init: uniform on +-sqrt(6/fan_in).

    The relu-gain bound keeps activation variance roughly constant
    through stacked conv+relu layers; the plain 1/sqrt(fan_in) bound
    shrinks it ~6x per layer, which starves the deeper normalization
    layers and ruins finite-difference conditioning.
    """
    bound = np.sqrt(6.0 / float(fan_in))
    return rng.uniform(-bound, bound, size=shape)


class Tensor:
    """A float64 ndarray plus optional gradient bookkeeping."""

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward
        self.op = op
        self.id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def assert_finite(self, what="tensor"):
        """NaN/Inf is a contract violation; raise with a location."""
        if not np.all(np.isfinite(self.data)):
            bad = np.argwhere(~np.isfinite(self.data))[0]
            raise FloatingPointError(f"non-finite value in {what} at index {tuple(bad)}")
        return self

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-mode sweep seeded from this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
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
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


@dataclass
class RecordEntry:
    op: str
    input_ids: tuple
    output_id: int
    saves_intermediates: bool  # op retained forward state for its adjoint


@dataclass
class ComputationRecord:
    """Topologically ordered trace of the graph below one tensor."""

    entries: list = field(default_factory=list)

    def is_topologically_ordered(self):
        produced = set()
        for e in self.entries:
            if any(i in (x.output_id for x in self.entries) and i not in produced
                   for i in e.input_ids):
                return False
            produced.add(e.output_id)
        return True


def computation_record(root):
    """Extract the ordered (op, input ids, output id) trace ending at root."""
    topo, seen, stack = [], set(), [(root, False)]
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
    return ComputationRecord(
        [RecordEntry(n.op, tuple(p.id for p in n._parents), n.id, n._backward is not None)
         for n in topo]
    )


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward, op=op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward, "mul")


def square(a):
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (2.0 * a.data))

    return _make(a.data * a.data, (a,), backward, "square")


def relu(a):
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    return _make(out_data, (a,), backward, "relu")


def sigmoid(a):
    a = _as_tensor(a)
    # stable split form: exp() only ever sees non-positive arguments
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward, "sigmoid")


def log(a):
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), backward, "log")


def clamp(a, lo, hi):
    """Clip values; gradient passes through strictly inside (lo, hi)."""
    a = _as_tensor(a)
    out_data = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * inside)

    return _make(out_data, (a,), backward, "clamp")


def tsum(a, axis=None):
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy() if np.ndim(g) == 0
                          else np.full(a.data.shape, g))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _make(out_data, (a,), backward, "sum")


def tmean(a, axis=None):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def reshape(a, shape):
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def take_cells(a, index):
    """Gather a[index] where index is a tuple of integer arrays.

    Backward scatter-adds, so repeated cells accumulate correctly.
    """
    a = _as_tensor(a)
    index = tuple(np.asarray(i) for i in index)

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, index, g)
            a._accumulate(acc)

    return _make(a.data[index], (a,), backward, "take_cells")


# -- convolution kernels (raw numpy, shared by graph ops and benchmarks)

def _pad1d(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p)))


def _im2col1d(x, k):
    """Contiguous [B, C*k, T] patch matrix of the zero-padded input."""
    B, C, T = x.shape
    xp = _pad1d(x, (k - 1) // 2)
    s0, s1, s2 = xp.strides
    col = as_strided(xp, (B, C, k, T), (s0, s1, s2, s2))
    return np.ascontiguousarray(col).reshape(B, C * k, T)


def conv1d_same_raw(x, w, b, col=None):
    """out[b,o,t] = b[o] + sum_{c,j} w[o,c,j] * x_padded[b,c,t+j]."""
    Co, Ci, k = w.shape
    if col is None:
        col = _im2col1d(x, k)
    out = np.matmul(w.reshape(Co, Ci * k), col)
    if b is not None:
        out += b[:, None]
    return out


def _conv1d_same_backward(w, g, col):
    """(grad_x, grad_w, grad_b) given the forward's im2col matrix."""
    Co, Ci, k = w.shape
    # grad wrt input: correlate g with the tap-flipped, channel-swapped kernel
    w_flip = np.ascontiguousarray(w[:, :, ::-1].transpose(1, 0, 2))
    gx = conv1d_same_raw(g, w_flip, None)
    gw = np.matmul(g, col.transpose(0, 2, 1)).sum(axis=0).reshape(Co, Ci, k)
    gb = g.sum(axis=(0, 2))
    return gx, gw, gb


def conv1d_same(x, w, b):
    """'Same'-length 1D cross-correlation with zero padding; odd kernels only."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ValueError("conv1d_same expects x[B,C,T] and w[Cout,Cin,k]")
    Co, Ci, k = w.data.shape
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if Ci != x.data.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.data.shape[1]}, weight expects {Ci}")
    if b.data.shape != (Co,):
        raise ValueError(f"bias must have shape ({Co},), got {b.data.shape}")
    col = _im2col1d(x.data, k)
    out_data = conv1d_same_raw(x.data, w.data, b.data, col)
    if not (_grad_enabled and (x.requires_grad or w.requires_grad or b.requires_grad)):
        return Tensor(out_data, op="conv1d_same")

    def backward(g):
        gx, gw, gb = _conv1d_same_backward(w.data, g, col)
        if x.requires_grad:
            x._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)
        if b.requires_grad:
            b._accumulate(gb)

    return _make(out_data, (x, w, b), backward, "conv1d_same")


def _pad2d(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col2d(x, kh, kw, dilation):
    """Contiguous [B, C*kh*kw, H*W] patch matrix of the padded input."""
    B, C, H, W = x.shape
    p = dilation * (kh - 1) // 2
    xp = _pad2d(x, p)
    s0, s1, s2, s3 = xp.strides
    view = as_strided(xp, (B, C, kh, kw, H, W),
                      (s0, s1, s2 * dilation, s3 * dilation, s2, s3))
    return np.ascontiguousarray(view).reshape(B, C * kh * kw, H * W)


def conv2d_dilated_raw(x, w, b, dilation, col=None):
    """Dilated 'same' 2D cross-correlation, odd square kernels."""
    B, C, H, W = x.shape
    Co, Ci, kh, kw = w.shape
    if kh == 1 and kw == 1:
        out = np.matmul(w.reshape(Co, Ci), x.reshape(B, Ci, H * W))
    else:
        if col is None:
            col = _im2col2d(x, kh, kw, dilation)
        out = np.matmul(w.reshape(Co, Ci * kh * kw), col)
    out = out.reshape(B, Co, H, W)
    if b is not None:
        out += b[:, None, None]
    return out


def _conv2d_dilated_backward(x, w, g, dilation, col=None):
    B, C, H, W = x.shape
    Co, Ci, kh, kw = w.shape
    g2 = g.reshape(B, Co, H * W)
    gb = g.sum(axis=(0, 2, 3))
    if kh == 1 and kw == 1:
        x2 = x.reshape(B, Ci, H * W)
        gw = np.matmul(g2, x2.transpose(0, 2, 1)).sum(axis=0).reshape(Co, Ci, 1, 1)
        gx = np.matmul(w.reshape(Co, Ci).T, g2).reshape(B, Ci, H, W)
        return gx, gw, gb
    if col is None:
        col = _im2col2d(x, kh, kw, dilation)
    gw = np.matmul(g2, col.transpose(0, 2, 1)).sum(axis=0).reshape(Co, Ci, kh, kw)
    gcol = np.matmul(w.reshape(Co, Ci * kh * kw).T, g2)
    gcol = gcol.reshape(B, Ci, kh, kw, H, W)
    p = dilation * (kh - 1) // 2
    gxp = np.zeros((B, Ci, H + 2 * p, W + 2 * p))
    for dy in range(kh):
        for dx in range(kw):
            gxp[:, :, dilation * dy:dilation * dy + H,
                dilation * dx:dilation * dx + W] += gcol[:, :, dy, dx]
    gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
    return gx, gw, gb


def conv2d_dilated(x, w, b, dilation=1):
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    Co, Ci, kh, kw = w.data.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"kernel must be odd and square, got {kh}x{kw}")
    if Ci != x.data.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.data.shape[1]}, weight expects {Ci}")
    needs_grad = _grad_enabled and (x.requires_grad or w.requires_grad or b.requires_grad)
    col = None
    if kh > 1 or kw > 1:
        col = _im2col2d(x.data, kh, kw, dilation)
    out_data = conv2d_dilated_raw(x.data, w.data, b.data, dilation, col)
    if not needs_grad:
        return Tensor(out_data, op="conv2d_dilated")

    def backward(g):
        gx, gw, gb = _conv2d_dilated_backward(x.data, w.data, g, dilation, col)
        if x.requires_grad:
            x._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)
        if b.requires_grad:
            b._accumulate(gb)

    return _make(out_data, (x, w, b), backward, "conv2d_dilated")


# -- map-domain ops ----------------------------------------------------

def repeat_to_map(vec, axis):
    """Broadcast a [B,C,T] sequence to a [B,C,T,T] (start,end) map.

    axis='start': out[b,c,s,e] = vec[b,c,s]; axis='end': out[b,c,s,e] = vec[b,c,e].
    """
    vec = _as_tensor(vec)
    if vec.data.ndim != 3:
        raise ValueError("repeat_to_map expects [B,C,T]")
    if axis not in ("start", "end"):
        raise ValueError(f"axis must be 'start' or 'end', got {axis!r}")
    B, C, T = vec.data.shape
    if axis == "start":
        out_data = np.broadcast_to(vec.data[:, :, :, None], (B, C, T, T)).copy()
    else:
        out_data = np.broadcast_to(vec.data[:, :, None, :], (B, C, T, T)).copy()

    def backward(g):
        if vec.requires_grad:
            vec._accumulate(g.sum(axis=3) if axis == "start" else g.sum(axis=2))

    return _make(out_data, (vec,), backward, "repeat_to_map")


def assemble_band_maps(starts, ends, band_cells, T):
    """Masked band assembly of the proposal feature map.

    starts/ends: per-band [B,C,T] tensors. band_cells: per-band (ss, ee)
    integer arrays listing that band's valid (start, end) cells. Cell
    (s, e) of the output takes the band's start features at position s in
    channels [0, C) and its end features at position e in channels
    [C, 2C). Cells owned by no band (everything below the diagonal)
    stay exactly zero; cells claimed by several bands accumulate.
    """
    starts = [_as_tensor(s) for s in starts]
    ends = [_as_tensor(e) for e in ends]
    B, C, Tv = starts[0].data.shape
    out_data = np.zeros((B, 2 * C, T, T))
    for s_t, e_t, (ss, ee) in zip(starts, ends, band_cells):
        out_data[:, :C, ss, ee] += s_t.data[:, :, ss]
        out_data[:, C:, ss, ee] += e_t.data[:, :, ee]

    def backward(g):
        for s_t, e_t, (ss, ee) in zip(starts, ends, band_cells):
            if s_t.requires_grad:
                acc = np.zeros_like(s_t.data)
                # group cell gradients back onto their start positions
                np.add.at(acc.transpose(2, 0, 1), ss, g[:, :C, ss, ee].transpose(2, 0, 1))
                s_t._accumulate(acc)
            if e_t.requires_grad:
                acc = np.zeros_like(e_t.data)
                np.add.at(acc.transpose(2, 0, 1), ee, g[:, C:, ss, ee].transpose(2, 0, 1))
                e_t._accumulate(acc)

    return _make(out_data, (*starts, *ends), backward, "assemble_band_maps")


class BatchNormState:
    """Running statistics plus learnable per-channel affine."""

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps


def batchnorm_lite(x, state, train):
    """Per-channel normalization over all non-channel axes of [B,C,...].

    Train mode normalizes with biased batch statistics and updates the
    running buffers; eval mode uses the running buffers. Variance gets an
    eps floor, so a zero-variance batch (e.g. B=1 constant) is fine.
    """
    x = _as_tensor(x)
    axes = (0,) + tuple(range(2, x.data.ndim))
    n = x.data.size // x.data.shape[1]
    bshape = (1, -1) + (1,) * (x.data.ndim - 2)
    if train:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)  # biased
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mean
        state.running_var = (1 - m) * state.running_var + m * var
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    x_hat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out_data = state.gamma.data.reshape(bshape) * x_hat + state.beta.data.reshape(bshape)
    gamma, beta = state.gamma, state.beta

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * x_hat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gs = g * gamma.data.reshape(bshape)
            if train:
                gx = (inv_std.reshape(bshape) / n) * (
                    n * gs
                    - gs.sum(axis=axes).reshape(bshape)
                    - x_hat * (gs * x_hat).sum(axis=axes).reshape(bshape)
                )
            else:
                gx = gs * inv_std.reshape(bshape)
            x._accumulate(gx)

    return _make(out_data, (x, gamma, beta), backward, "batchnorm_lite")


# -- verification and optimization ------------------------------------

def grad_check(fn, inputs, eps=1e-4):
    """Max relative error between analytic and central-difference gradients.

    fn maps the tensor list to a scalar Tensor. The relative error per
    coordinate uses max(|analytic|, |numeric|, 1e-8) in the denominator.
    """
    for t in inputs:
        t.zero_grad()
    loss = fn(inputs)
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn(inputs).item()
            flat[i] = orig - eps
            down = fn(inputs).item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(a.reshape(-1)[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(a.reshape(-1)[i] - numeric) / denom)
    return worst


class AdamState:
    """First/second moment buffers and the shared step counter."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        """One bias-corrected Adam update from the accumulated .grad fields."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        """Flat list of (name, array) pairs for checkpointing."""
        out = [("adam_step", np.array([float(self.step_count)]))]
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out.append((f"adam_m{i}", m))
            out.append((f"adam_v{i}", v))
        return out

    def load_state_arrays(self, arrays):
        self.step_count = int(arrays["adam_step"][0])
        for i in range(len(self.params)):
            self.m[i][...] = arrays[f"adam_m{i}"]
            self.v[i][...] = arrays[f"adam_v{i}"]
