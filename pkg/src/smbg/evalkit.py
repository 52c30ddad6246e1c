"""Proposal-quality metrics: recall at IoU thresholds, AR@AN and AUC."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .labels import iou

DEFAULT_THRESHOLDS = np.round(np.arange(0.5, 0.951, 0.05), 10)
DEFAULT_AN_GRID = np.arange(1, 101)


def _match_ranks(proposals, gts, tiou):
    """Greedy one-to-one matching in rank order.

    For each ground-truth instance, the 1-based rank of the proposal that
    claims it (IoU >= tiou, best unmatched instance first), or 0 for
    never matched. Truncating the list to the top AN proposals matches
    exactly the instances with 0 < rank <= AN, because greedy decisions
    only depend on earlier proposals.
    """
    ranks = np.zeros(len(gts), dtype=int)
    if not proposals or not gts:
        return ranks
    taken = np.zeros(len(gts), dtype=bool)
    for rank, (t0, t1, _) in enumerate(proposals, start=1):
        best_j, best_v = -1, -1.0
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            v = iou((t0, t1), g)
            if v >= tiou and v > best_v:
                best_j, best_v = j, v
        if best_j >= 0:
            taken[best_j] = True
            ranks[best_j] = rank
        if taken.all():
            break
    return ranks


def _sorted_proposals(proposals):
    return sorted(proposals, key=lambda p: (-p[2], p[0], p[1]))


def recall_at(proposals_by_video, gts_by_video, an, tiou):
    """Pooled instance recall keeping the top `an` proposals per video."""
    hit = total = 0
    for vid, gts in gts_by_video.items():
        if not gts:
            continue
        props = _sorted_proposals(proposals_by_video.get(vid, []))[: int(an)]
        ranks = _match_ranks(props, gts, tiou)
        hit += int((ranks > 0).sum())
        total += len(gts)
    return hit / total if total else 0.0


def average_recall(proposals_by_video, gts_by_video, an, thresholds=DEFAULT_THRESHOLDS):
    thresholds = list(thresholds)
    if not thresholds:
        raise ValueError("need at least one IoU threshold")
    vals = [recall_at(proposals_by_video, gts_by_video, an, th) for th in thresholds]
    return float(np.mean(vals))


@dataclass
class EvalReport:
    ar_at_an: dict
    auc: float
    recall_table: dict = field(default_factory=dict)  # tiou -> [recall per AN]
    an_grid: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)

    def to_dict(self):
        return {
            "auc": self.auc,
            "ar_at_an": {str(k): v for k, v in self.ar_at_an.items()},
            "an_grid": [int(a) for a in self.an_grid],
            "thresholds": [float(t) for t in self.thresholds],
            "recall_table": {str(k): v for k, v in self.recall_table.items()},
        }


def evaluate(proposals_by_video, gts_by_video, an_grid=DEFAULT_AN_GRID,
             thresholds=DEFAULT_THRESHOLDS, workers=1):
    """Full AR-vs-AN sweep and its area.

    Match ranks are computed once per (video, threshold); every AN cutoff
    is then a thresholded count, which keeps the sweep linear. AUC is the
    trapezoidal integral of AR(AN) over the AN grid, normalized by the
    grid span, in percent.
    """
    an_grid = np.asarray(list(an_grid), dtype=int)
    thresholds = list(thresholds)
    videos = [(vid, gts) for vid, gts in gts_by_video.items() if gts]
    total = sum(len(gts) for _, gts in videos)

    def ranks_for(args):
        vid, gts, tiou = args
        props = _sorted_proposals(proposals_by_video.get(vid, []))
        return _match_ranks(props, gts, tiou)

    jobs = [(vid, gts, th) for th in thresholds for vid, gts in videos]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            all_ranks = list(pool.map(ranks_for, jobs))
    else:
        all_ranks = [ranks_for(j) for j in jobs]

    recall_table = {}
    per_threshold = []
    i = 0
    for th in thresholds:
        ranks = np.concatenate(all_ranks[i:i + len(videos)]) if videos else np.zeros(0, int)
        i += len(videos)
        hits = np.array([((ranks > 0) & (ranks <= an)).sum() for an in an_grid])
        rec = hits / total if total else np.zeros(len(an_grid))
        recall_table[float(th)] = rec.tolist()
        per_threshold.append(rec)
    ar = np.mean(per_threshold, axis=0) if per_threshold else np.zeros(len(an_grid))
    if len(an_grid) > 1:
        auc = float(np.trapezoid(ar, an_grid) / (an_grid[-1] - an_grid[0]) * 100.0)
    else:
        auc = float(ar[0] * 100.0)
    ar_at_an = {int(an): float(v) * 100.0 for an, v in zip(an_grid, ar)}
    return EvalReport(ar_at_an=ar_at_an, auc=auc, recall_table=recall_table,
                      an_grid=an_grid.tolist(), thresholds=[float(t) for t in thresholds])


def save_report(path, report):
    with open(path, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def save_curve_csv(path, report):
    """AN, AR rows for plotting."""
    with open(path, "w") as f:
        f.write("an,average_recall\n")
        for an in report.an_grid:
            f.write(f"{an},{report.ar_at_an[int(an)] / 100.0!r}\n")
