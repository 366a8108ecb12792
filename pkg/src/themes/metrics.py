"""Evaluation metrics and report generation.

Classification metrics target binary actions with action 1 as the positive
class; AUC is the rank statistic with tied scores averaged. Segmentation is
scored by the adjusted Rand index and a Hungarian-aligned macro F1.
Aggregates are formatted as mean(std) in the style ".867(.012)".
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata


def classification_metrics(y_true, probs, threshold: float = 0.5) -> dict:
    """Accuracy, recall, precision, F1, AUC, Jaccard for binary actions.

    probs may be P(action = 1) as an (n,) array or an (n, A) matrix whose
    column 1 is used. Ratios with a zero denominator are reported as 0.0;
    AUC is None when only one class is present.
    """
    y = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 2:
        p = p[:, 1]
    if p.shape != y.shape:
        raise ValueError(f"probs shape {p.shape} does not match labels {y.shape}")
    pred = (p >= threshold).astype(np.int64)
    tp = int(((pred == 1) & (y == 1)).sum())
    fp = int(((pred == 1) & (y == 0)).sum())
    fn = int(((pred == 0) & (y == 1)).sum())
    tn = int(((pred == 0) & (y == 0)).sum())
    n = y.shape[0]
    acc = (tp + tn) / n if n else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    prec = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    jac = tp / (tp + fp + fn) if tp + fp + fn else 0.0
    n_pos = int((y == 1).sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        auc = None
    else:
        ranks = rankdata(p)  # average ranks on ties
        auc = float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
    return {"acc": acc, "rec": rec, "prec": prec, "f1": f1, "auc": auc, "jaccard": jac}


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ua.size, ub.size), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected pair-counting agreement between two labelings."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise ValueError("labelings must have equal length")
    n = a.shape[0]
    table = _contingency(a, b)
    comb2 = lambda x: x * (x - 1) / 2.0
    sum_ij = comb2(table.astype(np.float64)).sum()
    sum_a = comb2(table.sum(axis=1).astype(np.float64)).sum()
    sum_b = comb2(table.sum(axis=0).astype(np.float64)).sum()
    total = comb2(float(n))
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0  # both labelings are constant or fully fragmented the same way
    return float((sum_ij - expected) / (max_index - expected))


def aligned_macro_f1(labels_true, labels_pred) -> float:
    """Macro F1 after Hungarian-matching predicted clusters to true ones."""
    t = np.asarray(labels_true).ravel()
    p = np.asarray(labels_pred).ravel()
    if t.shape != p.shape:
        raise ValueError("labelings must have equal length")
    table = _contingency(t, p).astype(np.float64)
    nt, npred = table.shape
    size = max(nt, npred)
    padded = np.zeros((size, size))
    padded[:nt, :npred] = table
    rows, cols = linear_sum_assignment(-padded)
    mapping = {c: r for r, c in zip(rows, cols)}
    f1s = []
    for r in range(nt):
        matched = [c for c in range(npred) if mapping.get(c) == r]
        tp = sum(table[r, c] for c in matched)
        fp = sum(table[:, c].sum() for c in matched) - tp
        fn = table[r].sum() - tp
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return float(np.mean(f1s))


def segmentation_metrics(labels_true, labels_pred) -> dict:
    return {
        "ari": adjusted_rand_index(labels_true, labels_pred),
        "aligned_macro_f1": aligned_macro_f1(labels_true, labels_pred),
    }


def format_mean_std(mean: float, std: float) -> str:
    """Three-decimal mean(std) with the leading zero dropped: .867(.012)."""
    def fmt(v: float) -> str:
        s = f"{v:.3f}"
        if s.startswith("0."):
            s = s[1:]
        elif s.startswith("-0."):
            s = "-" + s[2:]
        return s
    return f"{fmt(mean)}({fmt(std)})"


def aggregate_runs(per_run: list) -> dict:
    """Mean and std per metric across runs; None values are dropped per metric."""
    if not per_run:
        raise ValueError("no runs to aggregate")
    keys = sorted({k for run in per_run for k in run})
    out = {}
    for k in keys:
        vals = [run[k] for run in per_run if run.get(k) is not None]
        if not vals:
            out[k] = {"mean": None, "std": None, "display": "n/a", "n": 0}
            continue
        arr = np.asarray(vals, dtype=np.float64)
        mean, std = float(arr.mean()), float(arr.std())
        out[k] = {"mean": mean, "std": std, "display": format_mean_std(mean, std),
                  "n": int(arr.size)}
    return out


def write_report_csv(path, table: dict) -> None:
    """table: method name -> aggregated metrics (from aggregate_runs)."""
    methods = list(table)
    keys = sorted({k for agg in table.values() for k in agg})
    lines = ["method," + ",".join(keys)]
    for name in methods:
        row = [table[name].get(k, {}).get("display", "n/a") for k in keys]
        lines.append(name + "," + ",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_report_json(path, table: dict, per_run: dict) -> None:
    doc = {"schema_version": 1, "aggregates": table, "runs": per_run}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)


def write_svg_bars(path, table: dict, metric: str = "f1") -> None:
    """Static bar chart of one metric across methods. Self-contained SVG."""
    methods = [name for name in table if table[name].get(metric, {}).get("mean") is not None]
    if not methods:
        raise ValueError(f"no method reports metric {metric!r}")
    width, height, pad = 480, 240, 40
    bar_w = (width - 2 * pad) / max(1, len(methods))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{pad}" y="20" font-size="14">{metric} (mean, std whiskers)</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
    ]
    for i, name in enumerate(methods):
        mean = table[name][metric]["mean"]
        std = table[name][metric]["std"] or 0.0
        x = pad + i * bar_w + bar_w * 0.15
        h = max(0.0, min(1.0, mean)) * (height - 2 * pad)
        y = height - pad - h
        cx = x + bar_w * 0.35
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w * 0.7:.1f}" '
                     f'height="{h:.1f}" fill="#4878a8"/>')
        whisk = std * (height - 2 * pad)
        parts.append(f'<line x1="{cx:.1f}" y1="{max(pad, y - whisk):.1f}" x2="{cx:.1f}" '
                     f'y2="{min(height - pad, y + whisk):.1f}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{height - pad + 16}" font-size="11">{name}</text>')
        parts.append(f'<text x="{x:.1f}" y="{y - 4:.1f}" font-size="11">'
                     f'{format_mean_std(mean, std)}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
