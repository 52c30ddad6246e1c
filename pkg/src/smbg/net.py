"""Network blocks for the sparse multilevel boundary generator.

The model maps a per-video feature sequence [B, N0, T] to

  * start/end boundary probability sequences [B, T], and
  * a classification + regression confidence map pair [B, T, T] over
    (start index, end index) cells, valid on the upper triangle e >= s.

The proposal feature map is assembled from per-duration-band 1D
convolutions evaluated only at the start and end positions of each cell,
which is what makes the layer cheap compared with dense boundary-matching
sampling. A BMN-style sampling generator is included purely as the
efficiency baseline for the cost model and benchmarks.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as t


@dataclass
class BandSpec:
    """Duration bands and their per-band 1D kernel sizes.

    edges: ascending [0, l1, l2, ..., T]; band i covers durations
    (e - s) in [edges[i], edges[i+1]). kernel_sizes has one odd entry
    per band.
    """

    edges: list
    kernel_sizes: list

    def __post_init__(self):
        self.edges = [int(e) for e in self.edges]
        self.kernel_sizes = [int(k) for k in self.kernel_sizes]

    @property
    def num_bands(self):
        return len(self.edges) - 1

    def validate(self, T):
        if len(self.edges) < 2:
            raise ValueError("need at least one band")
        if self.edges[0] != 0:
            raise ValueError(f"first band edge must be 0, got {self.edges[0]}")
        if self.edges[-1] != T:
            raise ValueError(f"band edges must reach T={T}, got {self.edges[-1]} "
                             "(cells past the last edge would be unmasked)")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError(f"band edges must be strictly ascending, got {self.edges}")
        if len(self.kernel_sizes) != self.num_bands:
            raise ValueError(f"{self.num_bands} bands need {self.num_bands} kernel sizes, "
                             f"got {len(self.kernel_sizes)}")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ValueError(f"kernel sizes must be odd positive, got {self.kernel_sizes}")
        return self


def default_band_spec(T=100):
    """The stock four-band layout; kernel size tracks the band's duration range."""
    if T == 100:
        return BandSpec([0, 17, 33, 57, 100], [17, 33, 57, 99])
    # scale the stock edges to other T, keeping them ascending and valid
    edges = sorted({0, T} | {max(1, min(T - 1, round(e * T / 100))) for e in (17, 33, 57)})
    kernels = [min(2 * T - 1, 2 * (edges[i + 1] - 1) + 1) | 1 for i in range(len(edges) - 1)]
    return BandSpec(edges, kernels)


def build_masks(T, spec, mode="duration"):
    """Per-band binary (start, end) masks.

    duration mode: cell (s, e) belongs to band i iff edges[i] <= e - s <
    edges[i+1]; the masks exactly partition the upper triangle. literal
    mode instead keeps both endpoints inside one band interval
    (edges[i] <= s <= e < edges[i+1]); bands are then disjoint but cells
    spanning an edge belong to no band.
    """
    spec.validate(T)
    if mode not in ("duration", "literal"):
        raise ValueError(f"unknown mask mode {mode!r}")
    ss, ee = np.meshgrid(np.arange(T), np.arange(T), indexing="ij")
    valid = ee >= ss
    masks = []
    for i in range(spec.num_bands):
        lo, hi = spec.edges[i], spec.edges[i + 1]
        if mode == "duration":
            m = valid & (ee - ss >= lo) & (ee - ss < hi)
        else:
            m = valid & (ss >= lo) & (ee < hi)
        masks.append(m.astype(np.float64))
    return masks


def band_cells(masks):
    """(start_indices, end_indices) arrays of each band's active cells."""
    return [tuple(np.nonzero(m)) for m in masks]


@dataclass
class ModelConfig:
    """Shapes of every block; serialized into checkpoints."""

    in_channels: int = 400
    temporal_length: int = 100
    base_hidden: int = 256
    base_channels: int = 128          # N, the f_b channel count
    band_channels: int = 0            # per-branch band conv output width; 0 -> N
    boundary_hidden: int = 0          # 0 -> N // 2
    sec_hidden: int = 128
    dilation: int = 7
    band_spec: BandSpec = field(default_factory=default_band_spec)
    mask_mode: str = "duration"

    def __post_init__(self):
        if isinstance(self.band_spec, dict):
            self.band_spec = BandSpec(**self.band_spec)
        if self.temporal_length < 1:
            raise ValueError(f"temporal length must be >= 1, got {self.temporal_length}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if not self.band_channels:
            self.band_channels = self.base_channels
        if not self.boundary_hidden:
            self.boundary_hidden = max(1, self.base_channels // 2)
        self.band_spec.validate(self.temporal_length)

    def to_dict(self):
        return asdict(self)


class Conv1d:
    def __init__(self, rng, cin, cout, k):
        self.w = t.Tensor(t.fan_in_uniform(rng, (cout, cin, k), cin * k), requires_grad=True)
        self.b = t.Tensor(np.zeros(cout), requires_grad=True)

    def __call__(self, x):
        return t.conv1d_same(x, self.w, self.b)


class Conv2d:
    def __init__(self, rng, cin, cout, k, dilation=1):
        self.w = t.Tensor(t.fan_in_uniform(rng, (cout, cin, k, k), cin * k * k), requires_grad=True)
        self.b = t.Tensor(np.zeros(cout), requires_grad=True)
        self.dilation = dilation

    def __call__(self, x):
        return t.conv2d_dilated(x, self.w, self.b, self.dilation)


def select_channel(x, c):
    """x[:, c] of a [B,C,...] tensor, keeping the graph connected."""
    def backward(g):
        if x.requires_grad:
            acc = np.zeros_like(x.data)
            acc[:, c] = g
            x._accumulate(acc)

    return t._make(x.data[:, c], (x,), backward, "select_channel")


class SmbgNet:
    """Base module, boundary head, multilevel band layer and confidence head."""

    def __init__(self, config, seed=0):
        self.config = config
        rng = t.init_rng(seed)
        c = config
        n = c.base_channels
        self.base1 = Conv1d(rng, c.in_channels, c.base_hidden, 3)
        self.base2 = Conv1d(rng, c.base_hidden, n, 3)
        self.start1 = Conv1d(rng, n, c.boundary_hidden, 3)
        self.start2 = Conv1d(rng, c.boundary_hidden, 1, 1)
        self.end1 = Conv1d(rng, n, c.boundary_hidden, 3)
        self.end2 = Conv1d(rng, c.boundary_hidden, 1, 1)
        self.band_starts = [Conv1d(rng, n, c.band_channels, k) for k in c.band_spec.kernel_sizes]
        self.band_ends = [Conv1d(rng, n, c.band_channels, k) for k in c.band_spec.kernel_sizes]
        self.sec_dil = Conv2d(rng, 2 * c.band_channels, c.sec_hidden, 3, dilation=c.dilation)
        self.sec_bn1 = t.BatchNormState(c.sec_hidden)
        self.sec_c1 = Conv2d(rng, c.sec_hidden, c.sec_hidden, 1)
        self.sec_bn2 = t.BatchNormState(c.sec_hidden)
        self.sec_c2 = Conv2d(rng, c.sec_hidden, c.sec_hidden, 1)
        self.sec_bn3 = t.BatchNormState(c.sec_hidden)
        self.sec_c3 = Conv2d(rng, c.sec_hidden, 2, 1)
        self.masks = build_masks(c.temporal_length, c.band_spec, c.mask_mode)
        self.cells = band_cells(self.masks)

    # -- parameter plumbing --------------------------------------------
    def named_parameters(self):
        """(name, Tensor) pairs in a fixed declaration order."""
        out = []
        for name in ("base1", "base2", "start1", "start2", "end1", "end2"):
            layer = getattr(self, name)
            out += [(f"{name}.w", layer.w), (f"{name}.b", layer.b)]
        for i, (s, e) in enumerate(zip(self.band_starts, self.band_ends)):
            out += [(f"band{i}.start.w", s.w), (f"band{i}.start.b", s.b),
                    (f"band{i}.end.w", e.w), (f"band{i}.end.b", e.b)]
        for name in ("sec_dil", "sec_c1", "sec_c2", "sec_c3"):
            layer = getattr(self, name)
            out += [(f"{name}.w", layer.w), (f"{name}.b", layer.b)]
        for name in ("sec_bn1", "sec_bn2", "sec_bn3"):
            bn = getattr(self, name)
            out += [(f"{name}.gamma", bn.gamma), (f"{name}.beta", bn.beta)]
        return out

    def named_buffers(self):
        out = []
        for name in ("sec_bn1", "sec_bn2", "sec_bn3"):
            bn = getattr(self, name)
            out += [(f"{name}.running_mean", bn.running_mean),
                    (f"{name}.running_var", bn.running_var)]
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    # -- forward pieces --------------------------------------------------
    def base_module(self, x):
        if x.data.ndim != 3:
            raise ValueError("expected features [B, C, T]")
        if x.data.shape[2] != self.config.temporal_length:
            raise ValueError(f"temporal length mismatch: model expects "
                             f"{self.config.temporal_length}, input has {x.data.shape[2]}")
        return t.relu(self.base2(t.relu(self.base1(x))))

    def boundary_head(self, f_b):
        p_s = t.sigmoid(self.start2(t.relu(self.start1(f_b))))
        p_e = t.sigmoid(self.end2(t.relu(self.end1(f_b))))
        B, _, T = f_b.data.shape
        return t.reshape(p_s, (B, T)), t.reshape(p_e, (B, T))

    def mpfg_forward(self, f_b):
        starts = [conv(f_b) for conv in self.band_starts]
        ends = [conv(f_b) for conv in self.band_ends]
        return t.assemble_band_maps(starts, ends, self.cells, self.config.temporal_length)

    def sec_head(self, f_p, train=False):
        h = t.batchnorm_lite(t.relu(self.sec_dil(f_p)), self.sec_bn1, train)
        h = t.batchnorm_lite(t.relu(self.sec_c1(h)), self.sec_bn2, train)
        h = t.batchnorm_lite(t.relu(self.sec_c2(h)), self.sec_bn3, train)
        out = t.sigmoid(self.sec_c3(h))
        return select_channel(out, 0), select_channel(out, 1)

    def forward(self, x, train=False):
        """Full pass: features -> (P_s, P_e, P_c, P_r)."""
        f_b = self.base_module(x)
        p_s, p_e = self.boundary_head(f_b)
        f_p = self.mpfg_forward(f_b)
        p_c, p_r = self.sec_head(f_p, train=train)
        return {"f_b": f_b, "f_p": f_p, "P_s": p_s, "P_e": p_e, "P_c": p_c, "P_r": p_r}


def mpfg_naive_oracle(f_b, spec, net, mask_mode="duration"):
    """Cell-by-cell reference for the multilevel band layer.

    For every active cell (s, e) of every band the two 1D convolution
    outputs are computed directly as dot products over the padded input
    window. Independent of the vectorized assembly path.
    """
    x = f_b.data if isinstance(f_b, t.Tensor) else np.asarray(f_b, dtype=np.float64)
    B, N, T = x.shape
    C = net.config.band_channels
    masks = build_masks(T, spec, mask_mode)
    out = np.zeros((B, 2 * C, T, T))
    for i in range(spec.num_bands):
        k = spec.kernel_sizes[i]
        p = (k - 1) // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
        ws = net.band_starts[i].w.data.reshape(C, N * k)
        bs = net.band_starts[i].b.data
        we = net.band_ends[i].w.data.reshape(C, N * k)
        be = net.band_ends[i].b.data
        ss, ee = np.nonzero(masks[i])
        for s_idx, e_idx in zip(ss, ee):
            for b in range(B):
                win_s = xp[b, :, s_idx:s_idx + k].reshape(-1)
                win_e = xp[b, :, e_idx:e_idx + k].reshape(-1)
                out[b, :C, s_idx, e_idx] += ws @ win_s + bs
                out[b, C:, s_idx, e_idx] += we @ win_e + be
    return out


@dataclass
class BmnConfig:
    """Shape of the boundary-matching baseline; echoed into cost reports."""

    channels: int = 128
    temporal_length: int = 100
    sample_count: int = 32
    expansion: float = 0.25
    hidden_3d: int = 512
    hidden_2d: int = 128
    out_channels: int = 2

    def to_dict(self):
        return asdict(self)


class BmnPfgReference:
    """Dense boundary-matching feature generator (the efficiency baseline).

    Every (s, e) cell samples `sample_count` bilinearly interpolated
    points over its duration-expanded span, realized as one matrix
    product with a precomputed [T, S*T*T] mask. ``forward_block`` chains
    the conventional 3D + 2D convolution stack that turns the samples
    into a 2-channel map, matching the widths of the public reference
    architecture. Not part of the proposal model; used for cost and
    speed comparisons only.
    """

    def __init__(self, config=None, seed=0):
        self.config = config or BmnConfig()
        c = self.config
        rng = t.init_rng(seed)
        self.sampling_mask = self._build_sampling_mask(c.temporal_length, c.sample_count,
                                                       c.expansion)
        n_in3d = c.channels * c.sample_count
        self.w3d = t.fan_in_uniform(rng, (c.hidden_3d, n_in3d), n_in3d)
        self.w1 = t.fan_in_uniform(rng, (c.hidden_2d, c.hidden_3d, 1, 1), c.hidden_3d)
        self.w2 = t.fan_in_uniform(rng, (c.hidden_2d, c.hidden_2d, 3, 3), c.hidden_2d * 9)
        self.w3 = t.fan_in_uniform(rng, (c.hidden_2d, c.hidden_2d, 3, 3), c.hidden_2d * 9)
        self.w4 = t.fan_in_uniform(rng, (c.out_channels, c.hidden_2d, 1, 1), c.hidden_2d)

    @staticmethod
    def sample_positions(s, e, sample_count, expansion, T):
        """Clamped sample positions over the expanded span of cell (s, e)."""
        lo, hi = float(s), float(e + 1)
        margin = expansion * (hi - lo)
        pts = np.linspace(lo - margin, hi + margin, sample_count)
        return np.clip(pts, 0.0, T - 1.0)

    @classmethod
    def _build_sampling_mask(cls, T, sample_count, expansion):
        mask = np.zeros((T, sample_count * T * T))
        for s in range(T):
            for e in range(s, T):
                pts = cls.sample_positions(s, e, sample_count, expansion, T)
                base = np.floor(pts).astype(int)
                frac = pts - base
                hi = np.minimum(base + 1, T - 1)
                for q in range(sample_count):
                    col = q * T * T + s * T + e
                    mask[base[q], col] += 1.0 - frac[q]
                    mask[hi[q], col] += frac[q]
        return mask

    def sample(self, x):
        """x [B,N,T] -> sampled features [B,N,S,T,T]."""
        B, N, T = x.shape
        c = self.config
        out = np.matmul(x, self.sampling_mask)
        return out.reshape(B, N, c.sample_count, T, T)

    def sample_loop_oracle(self, x):
        """Direct per-point interpolation; oracle for sample()."""
        B, N, T = x.shape
        c = self.config
        out = np.zeros((B, N, c.sample_count, T, T))
        for s in range(T):
            for e in range(s, T):
                pts = self.sample_positions(s, e, c.sample_count, c.expansion, T)
                for q, p in enumerate(pts):
                    i0 = int(np.floor(p))
                    i1 = min(i0 + 1, T - 1)
                    f = p - i0
                    out[:, :, q, s, e] = (1.0 - f) * x[:, :, i0] + f * x[:, :, i1]
        return out

    def forward_block(self, x):
        """Sampling plus the 3D/2D convolution stack; streams over the batch."""
        B, N, T = x.shape
        c = self.config
        outs = []
        for b in range(B):
            samp = np.matmul(x[b], self.sampling_mask)          # [N, S*T*T]
            samp = samp.reshape(N, c.sample_count, T * T)
            h = self.w3d @ samp.reshape(N * c.sample_count, T * T)
            h = np.maximum(h, 0.0).reshape(1, c.hidden_3d, T, T)
            h = np.maximum(t.conv2d_dilated_raw(h, self.w1, None, 1), 0.0)
            h = np.maximum(t.conv2d_dilated_raw(h, self.w2, None, 1), 0.0)
            h = np.maximum(t.conv2d_dilated_raw(h, self.w3, None, 1), 0.0)
            outs.append(t.conv2d_dilated_raw(h, self.w4, None, 1)[0])
        return np.stack(outs)


def _diagonal_view(maps, d):
    """Writable view of cells (s, s+d) of [B, C, T, T] maps, shape [B, C, T-d]."""
    B, C, T, _ = maps.shape
    s0, s1, s2, s3 = maps.strides
    return np.lib.stride_tricks.as_strided(maps[:, :, :, d:], (B, C, T - d),
                                           (s0, s1, s2 + s3))


def mpfg_block_forward(net, x):
    """Raw-numpy forward of just the band layer (benchmark counterpart).

    Same arithmetic as SmbgNet.mpfg_forward minus graph bookkeeping; x is
    the base feature map f_b as a plain [B,N,T] array. Duration bands are
    contiguous diagonal ranges of the map, so the masked assembly reduces
    to strided per-diagonal copies. Requires duration mask mode.
    """
    if net.config.mask_mode != "duration":
        raise ValueError("fast block forward assumes duration-band masks")
    C = net.config.band_channels
    T = net.config.temporal_length
    B = x.shape[0]
    edges = net.config.band_spec.edges
    out = np.zeros((B, 2 * C, T, T))
    for i, (conv_s, conv_e) in enumerate(zip(net.band_starts, net.band_ends)):
        k = conv_s.w.data.shape[2]
        col = t._im2col1d(x, k)
        w_cat = np.concatenate([conv_s.w.data.reshape(C, -1),
                                conv_e.w.data.reshape(C, -1)])
        feat = np.matmul(w_cat, col)
        feat[:, :C] += conv_s.b.data[:, None]
        feat[:, C:] += conv_e.b.data[:, None]
        for d in range(edges[i], min(edges[i + 1], T)):
            view = _diagonal_view(out, d)
            view[:, :C] = feat[:, :C, :T - d]
            view[:, C:] = feat[:, C:, d:]
    return out


# -- checkpoint container ----------------------------------------------

_MAGIC = b"SMBG\x01"


def save_arrays(path, header, arrays):
    """One-file binary container: JSON header + float64 LE arrays in order."""
    manifest = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    head = json.dumps({"header": header, "arrays": manifest}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_arrays(path):
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint container (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(hlen).decode())
        out = {}
        for entry in meta["arrays"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * n)
            out[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return meta["header"], out


def save_checkpoint(path, net, extra_header=None, optimizer=None):
    header = {"model_config": net.config.to_dict()}
    if extra_header:
        header.update(extra_header)
    arrays = [(n, p.data) for n, p in net.named_parameters()]
    arrays += net.named_buffers()
    if optimizer is not None:
        arrays += optimizer.state_arrays()
    save_arrays(path, header, arrays)


def load_checkpoint(path, optimizer=None):
    """Rebuild a SmbgNet (and optionally optimizer state) from a container."""
    header, arrays = load_arrays(path)
    config = ModelConfig(**header["model_config"])
    net = SmbgNet(config, seed=0)
    for name, p in net.named_parameters():
        if name not in arrays:
            raise ValueError(f"checkpoint {path} is missing parameter {name!r}")
        if arrays[name].shape != p.data.shape:
            raise ValueError(f"checkpoint shape mismatch for {name!r}: "
                             f"file {arrays[name].shape} vs model {p.data.shape}")
        p.data[...] = arrays[name]
    for name, buf in net.named_buffers():
        buf[...] = arrays[name]
    if optimizer is not None:
        optimizer.load_state_arrays(arrays)
    return net, header
