"""End-to-end drivers: data, synthetic benchmark, training, inference,
noise probing and hyperparameter sweeps.

A dataset is a dict: video_id -> {"features": [C, T_raw] float array,
"duration_seconds": float, "instances": [ActionInstance]}. Real feature
files are CSV (rows = time steps, columns = channels) or the binary
container; the synthetic generator stands in for the multi-gigabyte
two-stream features of the public benchmarks while preserving the
structural task (boundary localization in noisy sequences).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import evalkit, losses, postprocess, tensor as t
from .labels import ActionInstance, TemporalGrid, build_label_set, load_annotations, save_annotations
from .net import (BandSpec, ModelConfig, SmbgNet, default_band_spec, load_arrays,
                  load_checkpoint, save_arrays, save_checkpoint)


@dataclass
class SyntheticSpec:
    """Reproducible synthetic corpus: same spec -> identical bytes.

    direction_seed fixes the channel directions carrying the action and
    boundary signals; train/eval splits must share it (real feature
    channels mean the same thing in every video) while differing in
    `seed` so the videos themselves are disjoint.
    """

    num_videos: int = 200
    duration_range: tuple = (80, 160)      # seconds; features at 1 Hz
    instances_range: tuple = (1, 3)
    channels: int = 16
    snr: float = 6.0
    seed: int = 0
    direction_seed: int = 0
    instance_fraction_range: tuple = (0.08, 0.30)
    name_prefix: str = "video"

    def to_dict(self):
        return asdict(self)


@dataclass
class RunConfig:
    """Everything a run needs; round-trips losslessly through JSON."""

    temporal_length: int = 100
    window_mode: bool = False
    window_length: int = 128
    window_overlap: float = 0.5
    band_spec: dict = None
    dilation: int = 7
    mask_mode: str = "duration"
    map_label_mode: str = "iou"
    # model widths (desk-scale defaults; see costmodel for the full published-scale block)
    in_channels: int = 16
    base_hidden: int = 32
    base_channels: int = 16
    band_channels: int = 0
    boundary_hidden: int = 0
    sec_hidden: int = 16
    # objective
    confidence_lambda: float = losses.CONFIDENCE_LAMBDA
    guidance_beta: float = losses.GUIDANCE_BETA
    negative_ratio: int = 5
    positive_threshold: float = 0.5
    sample_classification: bool = True
    sample_regression: bool = True
    # optimization
    batch_size: int = 16
    learning_rate: float = 1e-3
    epochs: int = 10
    seed: int = 0
    # post-processing
    snms_sigma: float = postprocess.SOFT_NMS_SIGMA
    snms_floor: float = postprocess.SCORE_FLOOR
    max_proposals: int = postprocess.MAX_PROPOSALS
    # paths
    features_dir: str = ""
    annotations_path: str = ""
    checkpoint_dir: str = "checkpoints"
    out_dir: str = "out"
    workers: int = 1
    synthetic: dict = None

    def __post_init__(self):
        if self.band_spec is None:
            self.band_spec = asdict(default_band_spec(self.model_temporal_length))

    @property
    def model_temporal_length(self):
        return self.window_length if self.window_mode else self.temporal_length

    def model_config(self):
        return ModelConfig(
            in_channels=self.in_channels,
            temporal_length=self.model_temporal_length,
            base_hidden=self.base_hidden,
            base_channels=self.base_channels,
            band_channels=self.band_channels,
            boundary_hidden=self.boundary_hidden,
            sec_hidden=self.sec_hidden,
            dilation=self.dilation,
            band_spec=BandSpec(**self.band_spec),
            mask_mode=self.mask_mode,
        )

    def sampling_config(self, rng_seed=0):
        return losses.SamplingConfig(
            negative_ratio=self.negative_ratio,
            positive_threshold=self.positive_threshold,
            rng_seed=rng_seed,
            sample_classification=self.sample_classification,
            sample_regression=self.sample_regression,
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**dict(d))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


# -- feature files -------------------------------------------------------

def save_features_csv(path, features):
    """Rows = time steps, columns = channels, exact-repr floats."""
    C, T = features.shape
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"c{i}" for i in range(C)])
        for ti in range(T):
            w.writerow([repr(float(v)) for v in features[:, ti]])


def save_features_bin(path, features):
    save_arrays(path, {"kind": "features"}, [("features", features)])


def load_features(path):
    """[channels, T_raw] matrix from CSV or the binary container."""
    if path.endswith(".csv"):
        rows = []
        with open(path, newline="") as f:
            reader = csv.reader(f)
            for li, row in enumerate(reader):
                if not row:
                    continue
                if li == 0:
                    try:
                        [float(v) for v in row]
                    except ValueError:
                        continue  # header line
                rows.append((li, row))
        if not rows:
            raise ValueError(f"{path}: empty feature file")
        width = len(rows[0][1])
        data = np.empty((len(rows), width))
        for out_i, (li, row) in enumerate(rows):
            if len(row) != width:
                raise ValueError(f"{path}: ragged row {li + 1} "
                                 f"(expected {width} columns, got {len(row)})")
            for ci, v in enumerate(row):
                try:
                    x = float(v)
                except ValueError:
                    raise ValueError(f"{path}: non-numeric cell at row {li + 1}, "
                                     f"column {ci + 1}: {v!r}") from None
                if not np.isfinite(x):
                    raise ValueError(f"{path}: non-finite cell at row {li + 1}, "
                                     f"column {ci + 1}")
                data[out_i, ci] = x
        return data.T.copy()
    header, arrays = load_arrays(path)
    feats = arrays["features"]
    if not np.all(np.isfinite(feats)):
        raise ValueError(f"{path}: non-finite values in feature container")
    return feats


def rescale_linear(features, length):
    """Resample each channel at `length` uniform points over [0, T_raw - 1]."""
    C, T_raw = features.shape
    if T_raw < 2:
        raise ValueError(f"need at least 2 time steps to rescale, got {T_raw}")
    xs = np.linspace(0.0, T_raw - 1.0, length)
    grid = np.arange(T_raw, dtype=np.float64)
    return np.stack([np.interp(xs, grid, features[c]) for c in range(C)])


def sliding_windows(features, length, overlap):
    """[(window [C, length], start offset, valid length)] covering the video.

    Stride is length * (1 - overlap); the last window is right-aligned to
    cover the tail, and short videos give one zero-padded window.
    """
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    C, T_raw = features.shape
    stride = max(1, int(round(length * (1.0 - overlap))))
    offsets = []
    o = 0
    while o + length <= T_raw:
        offsets.append(o)
        o += stride
    if not offsets:
        offsets = [0]
    elif offsets[-1] + length < T_raw:
        offsets.append(T_raw - length)
    out = []
    for o in offsets:
        chunk = features[:, o:o + length]
        valid = chunk.shape[1]
        if valid < length:
            chunk = np.pad(chunk, ((0, 0), (0, length - valid)))
        out.append((chunk, o, valid))
    return out


# -- synthetic data -------------------------------------------------------

def _place_instances(rng, duration, count, frac_range, max_tries=200):
    for _ in range(max_tries):
        lengths = rng.uniform(frac_range[0], frac_range[1], size=count) * duration
        starts = rng.uniform(0.0, duration - lengths)
        ivs = sorted(zip(starts, starts + lengths))
        if all(b0 - a1 >= 1.0 for (_, a1), (b0, _) in zip(ivs, ivs[1:])):
            return [ActionInstance(float(a), float(b)) for a, b in ivs]
    raise ValueError(f"could not pack {count} non-overlapping instances into "
                     f"{duration:.1f}s after {max_tries} tries")


def synth_dataset(spec):
    """(dataset dict, annotations dict), fully determined by the SyntheticSpec."""
    dir_rng = t.init_rng(np.random.SeedSequence([spec.direction_seed, 0xD1, 7]).generate_state(1)[0])
    dir_action = dir_rng.standard_normal(spec.channels)
    dir_action /= np.linalg.norm(dir_action)
    dir_edge = dir_rng.standard_normal(spec.channels)
    dir_edge -= dir_edge @ dir_action * dir_action
    dir_edge /= np.linalg.norm(dir_edge)
    dataset = {}
    for v in range(spec.num_videos):
        rng = t.init_rng(np.random.SeedSequence([spec.seed, 0xA5, v]).generate_state(1)[0])
        t_raw = int(rng.integers(spec.duration_range[0], spec.duration_range[1] + 1))
        duration = float(t_raw)
        count = int(rng.integers(spec.instances_range[0], spec.instances_range[1] + 1))
        instances = _place_instances(rng, duration, count, spec.instance_fraction_range) \
            if count else []
        frames = np.arange(t_raw, dtype=np.float64)
        indicator = np.zeros(t_raw)
        edges = np.zeros(t_raw)
        for inst in instances:
            overlap = np.minimum(frames + 1.0, inst.t_end) - np.maximum(frames, inst.t_start)
            indicator += np.clip(overlap, 0.0, 1.0)
            for tb in (inst.t_start, inst.t_end):
                edges += np.exp(-0.5 * ((frames + 0.5 - tb) / 1.5) ** 2)
        smooth = np.convolve(indicator, np.array([0.25, 0.5, 0.25]), mode="same")
        amp = np.sqrt(spec.snr)
        signal = amp * (np.outer(dir_action, smooth) + np.outer(dir_edge, edges))
        feats = signal + rng.standard_normal((spec.channels, t_raw))
        vid = f"{spec.name_prefix}_{v:04d}"
        dataset[vid] = {"features": feats, "duration_seconds": duration,
                        "instances": instances}
    annotations = {vid: {"duration_seconds": d["duration_seconds"],
                         "instances": d["instances"]} for vid, d in dataset.items()}
    return dataset, annotations


def write_dataset(dataset, out_dir):
    """Features as CSV plus annotations.json; returns the annotation path."""
    feat_dir = os.path.join(out_dir, "features")
    os.makedirs(feat_dir, exist_ok=True)
    for vid in sorted(dataset):
        save_features_csv(os.path.join(feat_dir, f"{vid}.csv"), dataset[vid]["features"])
    ann_path = os.path.join(out_dir, "annotations.json")
    save_annotations(ann_path, {vid: {"duration_seconds": d["duration_seconds"],
                                      "instances": d["instances"]}
                                for vid, d in dataset.items()})
    return ann_path


def read_dataset(features_dir, annotations_path):
    annotations = load_annotations(annotations_path)
    dataset = {}
    for vid, entry in annotations.items():
        csv_path = os.path.join(features_dir, f"{vid}.csv")
        bin_path = os.path.join(features_dir, f"{vid}.bin")
        path = csv_path if os.path.exists(csv_path) else bin_path
        dataset[vid] = {"features": load_features(path),
                        "duration_seconds": entry["duration_seconds"],
                        "instances": entry["instances"]}
    return dataset


# -- training samples ------------------------------------------------------

def _rescale_samples(dataset, config):
    """One training sample per video: rescaled features plus labels."""
    T = config.temporal_length
    samples = []
    for vid in sorted(dataset):
        d = dataset[vid]
        grid = TemporalGrid(T, d["duration_seconds"])
        x = rescale_linear(d["features"], T)
        g_s, g_e, g_c = build_label_set(d["instances"], grid, config.map_label_mode)
        samples.append({"video": vid, "x": x, "g_s": g_s, "g_e": g_e, "g_c": g_c})
    return samples


def _window_samples(dataset, config):
    """One training sample per sliding window, instances clipped per window."""
    L = config.window_length
    samples = []
    for vid in sorted(dataset):
        d = dataset[vid]
        t_raw = d["features"].shape[1]
        dt_raw = d["duration_seconds"] / t_raw
        for chunk, offset, valid in sliding_windows(d["features"], L, config.window_overlap):
            w_lo = offset * dt_raw
            w_hi = (offset + L) * dt_raw
            local = []
            for inst in d["instances"]:
                a = max(inst.t_start, w_lo)
                b = min(inst.t_end, w_hi)
                if b - a > dt_raw:  # ignore slivers shorter than one grid cell
                    local.append(ActionInstance(a - w_lo, b - w_lo))
            grid = TemporalGrid(L, L * dt_raw)
            g_s, g_e, g_c = build_label_set(local, grid, config.map_label_mode)
            samples.append({"video": vid, "x": chunk, "g_s": g_s, "g_e": g_e,
                            "g_c": g_c, "offset": offset, "valid": valid})
    return samples


def build_samples(dataset, config):
    return _window_samples(dataset, config) if config.window_mode \
        else _rescale_samples(dataset, config)


def _step_seed(seed, step):
    return int(np.random.SeedSequence([seed, 0x5EED, step]).generate_state(1)[0])


@dataclass
class TrainResult:
    checkpoints: list
    epoch_mean_loss: list
    steps: int
    log_path: str


def train(config, dataset, resume=None):
    """Mini-batch Adam on the full objective; checkpoint per epoch.

    Fixed (config, seed) gives an identical loss trajectory and identical
    checkpoint bytes; resuming from an epoch checkpoint continues it
    exactly. Halts with the offending step on a non-finite loss.
    """
    os.makedirs(config.checkpoint_dir, exist_ok=True)
    samples = build_samples(dataset, config)
    if not samples:
        raise ValueError("training needs at least one sample")
    start_epoch = 0
    global_step = 0
    if resume is None:
        net = SmbgNet(config.model_config(), seed=config.seed)
        opt = t.AdamState(net.parameters(), lr=config.learning_rate)
    else:
        net, header = load_checkpoint(resume)
        opt = t.AdamState(net.parameters(), lr=config.learning_rate)
        _, arrays = load_arrays(resume)
        opt.load_state_arrays(arrays)
        start_epoch = int(header["epoch"])
        global_step = int(header["global_step"])

    log_path = os.path.join(config.checkpoint_dir, "loss_log.jsonl")
    checkpoints = []
    if resume is None:
        init_path = os.path.join(config.checkpoint_dir, "init.ckpt")
        save_checkpoint(init_path, net, {"epoch": 0, "global_step": 0,
                                         "run_config": config.to_dict()}, opt)
        checkpoints.append(init_path)

    epoch_means = []
    mode = "w" if resume is None else "a"
    with open(log_path, mode) as log:
        for epoch in range(start_epoch, config.epochs):
            order_seed = _step_seed(config.seed, 0xE70C + epoch)
            order = t.init_rng(order_seed).permutation(len(samples))
            epoch_losses = []
            for lo in range(0, len(order), config.batch_size):
                idx = order[lo:lo + config.batch_size]
                batch = [samples[i] for i in idx]
                x = t.Tensor(np.stack([b["x"] for b in batch]))
                g_s = np.stack([b["g_s"] for b in batch])
                g_e = np.stack([b["g_e"] for b in batch])
                g_c = np.stack([b["g_c"] for b in batch])
                outputs = net.forward(x, train=True)
                cfg = config.sampling_config(rng_seed=_step_seed(config.seed, global_step))
                loss, breakdown = losses.total_loss(outputs, g_s, g_e, g_c, cfg,
                                                    beta=config.guidance_beta,
                                                    lam=config.confidence_lambda)
                if not np.isfinite(breakdown.total):
                    log.write(json.dumps({"step": global_step, "error": "non-finite loss"}) + "\n")
                    raise RuntimeError(f"training diverged: non-finite loss at step {global_step}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                log.write(json.dumps({"step": global_step, "L_B": breakdown.boundary,
                                      "L_C": breakdown.confidence, "L_G": breakdown.guidance,
                                      "total": breakdown.total, "seed": breakdown.seed},
                                     sort_keys=True) + "\n")
                epoch_losses.append(breakdown.total)
                global_step += 1
            epoch_means.append(float(np.mean(epoch_losses)))
            ck = os.path.join(config.checkpoint_dir, f"epoch_{epoch + 1:03d}.ckpt")
            save_checkpoint(ck, net, {"epoch": epoch + 1, "global_step": global_step,
                                      "run_config": config.to_dict()}, opt)
            checkpoints.append(ck)
    return TrainResult(checkpoints=checkpoints, epoch_mean_loss=epoch_means,
                       steps=global_step, log_path=log_path)


# -- inference --------------------------------------------------------------

def _forward_arrays(net, x_batch):
    with t.no_grad():
        out = net.forward(t.Tensor(x_batch), train=False)
    return (out["P_s"].data, out["P_e"].data, out["P_c"].data, out["P_r"].data)


def infer(config, checkpoint_path, dataset, out_path=None):
    """Forward + fuse + Soft-NMS per video; top proposals as {vid: [...]}."""
    net, header = load_checkpoint(checkpoint_path)
    want = net.config.in_channels
    vids = sorted(dataset)
    for vid in vids:
        have = dataset[vid]["features"].shape[0]
        if have != want:
            raise ValueError(f"feature/checkpoint shape mismatch for {vid}: features have "
                             f"{have} channels, checkpoint expects {want}")
    proposals = {}
    if not config.window_mode:
        T = net.config.temporal_length
        for lo in range(0, len(vids), config.batch_size):
            chunk = vids[lo:lo + config.batch_size]
            x = np.stack([rescale_linear(dataset[v]["features"], T) for v in chunk])
            p_s, p_e, p_c, p_r = _forward_arrays(net, x)
            for j, vid in enumerate(chunk):
                grid = TemporalGrid(T, dataset[vid]["duration_seconds"])
                proposals[vid] = postprocess.proposals_for_video(
                    p_s[j], p_e[j], p_c[j], p_r[j], grid, config.snms_sigma,
                    config.snms_floor, config.max_proposals)
    else:
        L = net.config.temporal_length
        for vid in vids:
            d = dataset[vid]
            t_raw = d["features"].shape[1]
            dt_raw = d["duration_seconds"] / t_raw
            wins = sliding_windows(d["features"], L, config.window_overlap)
            x = np.stack([w[0] for w in wins])
            p_s, p_e, p_c, p_r = _forward_arrays(net, x)
            all_ts, all_te, all_sc = [], [], []
            for j, (_, offset, valid) in enumerate(wins):
                grid = TemporalGrid(L, L * dt_raw)
                ss, ee, ts, te, sc = postprocess.fuse_scores(p_s[j], p_e[j], p_c[j], p_r[j], grid)
                keep = (ss < valid) & (ee < valid)
                all_ts.append(ts[keep] + offset * dt_raw)
                all_te.append(te[keep] + offset * dt_raw)
                all_sc.append(sc[keep])
            ts = np.concatenate(all_ts)
            te = np.concatenate(all_te)
            sc = np.concatenate(all_sc)
            ts, te, sc = postprocess.merge_window_duplicates(ts, te, sc)
            k_ts, k_te, k_sc = postprocess.soft_nms(ts, te, sc, config.snms_sigma,
                                                    config.snms_floor, config.max_proposals)
            grid = TemporalGrid(t_raw, d["duration_seconds"])
            proposals[vid] = [
                postprocess.ScoredProposal(int(round(a / grid.dt)),
                                           max(0, int(round(b / grid.dt)) - 1),
                                           float(a), float(b), float(s))
                for a, b, s in zip(k_ts, k_te, k_sc)
            ]
    if out_path:
        postprocess.save_proposals(out_path, proposals)
    return proposals


def evaluate_proposals(proposals, annotations, workers=1, an_grid=None, thresholds=None):
    gts = {vid: [(i.t_start, i.t_end) for i in entry["instances"]]
           for vid, entry in annotations.items()}
    flat = {vid: [(p.t_start, p.t_end, p.score) for p in props] if props and
            isinstance(props[0], postprocess.ScoredProposal) else props
            for vid, props in proposals.items()}
    return evalkit.evaluate(flat, gts,
                            an_grid=an_grid if an_grid is not None else evalkit.DEFAULT_AN_GRID,
                            thresholds=thresholds if thresholds is not None
                            else evalkit.DEFAULT_THRESHOLDS,
                            workers=workers)


# -- noise probe -------------------------------------------------------------

def _gt_cell(inst, grid):
    """Map cell whose candidate interval best matches the instance."""
    s = int(round(inst.t_start / grid.dt))
    e = int(round(inst.t_end / grid.dt)) - 1
    s = min(max(s, 0), grid.length - 1)
    e = min(max(e, s), grid.length - 1)
    return s, e


def noise_probe(config, checkpoint_path, dataset, video_id,
                fractions=(0.2, 0.4, 0.6), trials=20, out_dir=None, seed=0):
    """Replace the central part of each instance's feature span with noise.

    For each fraction, reports the mean classification-map confidence at
    the ground-truth cells against the clean run, averaged over `trials`
    noise draws matched to the feature matrix's global mean/std. Writes
    per-fraction map snapshots as CSV grids when out_dir is given.
    """
    net, _ = load_checkpoint(checkpoint_path)
    d = dataset[video_id]
    if not d["instances"]:
        raise ValueError(f"{video_id} has no annotated instances to probe")
    feats = d["features"]
    T = net.config.temporal_length
    t_raw = feats.shape[1]
    dt_raw = d["duration_seconds"] / t_raw
    grid = TemporalGrid(T, d["duration_seconds"])
    mean, std = float(feats.mean()), float(feats.std())

    def run(f_mat):
        p_s, p_e, p_c, p_r = _forward_arrays(net, rescale_linear(f_mat, T)[None])
        return p_c[0], p_r[0]

    clean_c, clean_r = run(feats)
    cells, skipped = [], []
    for inst in d["instances"]:
        lo = int(np.floor(inst.t_start / dt_raw))
        hi = int(np.ceil(inst.t_end / dt_raw))
        if hi - lo < 3:
            skipped.append({"instance": [inst.t_start, inst.t_end],
                            "note": "span shorter than 3 grid cells; skipped"})
            continue
        cells.append((inst, lo, hi, _gt_cell(inst, grid)))
    if not cells:
        raise ValueError(f"{video_id}: every instance is shorter than 3 grid cells")

    report = {"video": video_id, "fractions": list(fractions), "trials": trials,
              "skipped": skipped, "clean_confidence": {}, "per_fraction": []}
    for inst, lo, hi, (cs, ce) in cells:
        report["clean_confidence"][f"{inst.t_start:.2f}-{inst.t_end:.2f}"] = \
            float(clean_c[cs, ce])
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        np.savetxt(os.path.join(out_dir, "map_clean.csv"), clean_c, delimiter=",", fmt="%.6f")
    for fi, frac in enumerate(fractions):
        deltas = np.zeros((trials, len(cells)))
        conf = np.zeros((trials, len(cells)))
        last_map = clean_c
        for trial in range(trials):
            rng = t.init_rng(np.random.SeedSequence([seed, fi, trial]).generate_state(1)[0])
            noisy = feats.copy()
            for ci, (inst, lo, hi, _) in enumerate(cells):
                span = hi - lo
                n_rep = int(round(frac * span))
                if n_rep > 0:
                    c0 = lo + (span - n_rep) // 2
                    noisy[:, c0:c0 + n_rep] = rng.normal(mean, std, (feats.shape[0], n_rep))
            p_c, _ = run(noisy)
            last_map = p_c
            for ci, (_, _, _, (cs, ce)) in enumerate(cells):
                conf[trial, ci] = p_c[cs, ce]
                deltas[trial, ci] = p_c[cs, ce] - clean_c[cs, ce]
        report["per_fraction"].append({
            "fraction": frac,
            "mean_confidence": float(conf.mean()),
            "mean_delta": float(deltas.mean()),
        })
        if out_dir:
            np.savetxt(os.path.join(out_dir, f"map_f{int(round(frac * 100)):03d}.csv"),
                       last_map, delimiter=",", fmt="%.6f")
    if out_dir:
        with open(os.path.join(out_dir, "probe_report.json"), "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    return report


# -- sweeps -------------------------------------------------------------------

def sweep(config, axis, values, train_dataset, eval_dataset, eval_annotations,
          out_csv=None):
    """Train + evaluate once per axis value; rows of AR@{5,10,100} and AUC."""
    if axis not in ("kernel_sizes", "r_d"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    rows = []
    for vi, value in enumerate(values):
        cfg = RunConfig.from_dict(config.to_dict())
        if axis == "r_d":
            cfg.dilation = int(value)
            label = str(value)
        else:
            cfg.band_spec = dict(value)
            label = "/".join(str(k) for k in value["kernel_sizes"])
        cfg.checkpoint_dir = os.path.join(config.checkpoint_dir, f"sweep_{axis}_{vi}")
        result = train(cfg, train_dataset)
        props = infer(cfg, result.checkpoints[-1], eval_dataset)
        report = evaluate_proposals(props, eval_annotations, workers=cfg.workers)
        rows.append({
            "axis": axis, "value": label,
            "ar_at_5": report.ar_at_an[5], "ar_at_10": report.ar_at_an[10],
            "ar_at_100": report.ar_at_an[100], "auc": report.auc,
        })
    if out_csv:
        with open(out_csv, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)
    return rows


# -- one-shot pipeline ---------------------------------------------------------

def make_benchmark_datasets(seed=0, n_train=200, n_eval=50, channels=16):
    """Seeded train/eval synthetic corpora for the toy benchmark."""
    train_spec = SyntheticSpec(num_videos=n_train, channels=channels, seed=seed,
                               direction_seed=seed, name_prefix="train")
    eval_spec = SyntheticSpec(num_videos=n_eval, channels=channels, seed=seed + 1,
                              direction_seed=seed, name_prefix="eval")
    train_ds, train_ann = synth_dataset(train_spec)
    eval_ds, eval_ann = synth_dataset(eval_spec)
    return train_ds, train_ann, eval_ds, eval_ann


def run_pipeline(config, out_dir, n_train=200, n_eval=50):
    """synth -> train -> infer -> eval, everything written under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = RunConfig.from_dict(config.to_dict())
    cfg.checkpoint_dir = os.path.join(out_dir, "checkpoints")
    train_ds, _, eval_ds, eval_ann = make_benchmark_datasets(
        cfg.seed, n_train=n_train, n_eval=n_eval, channels=cfg.in_channels)
    write_dataset(eval_ds, os.path.join(out_dir, "eval_data"))
    result = train(cfg, train_ds)
    proposals_path = os.path.join(out_dir, "proposals.json")
    props = infer(cfg, result.checkpoints[-1], eval_ds, proposals_path)
    report = evaluate_proposals(props, eval_ann, workers=cfg.workers)
    report_path = os.path.join(out_dir, "eval_report.json")
    evalkit.save_report(report_path, report)
    cfg.save(os.path.join(out_dir, "run_config.json"))
    return {"train": result, "proposals_path": proposals_path,
            "report_path": report_path, "report": report}
