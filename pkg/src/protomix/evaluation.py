"""Test-set evaluation: KNN prediction on learned features, overall/average
accuracy and the kappa coefficient, the boundary-patch subset, and
classification-map rendering.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, NumericError
from .model import ModelParams, embed_patches


@dataclass
class Metrics:
    oa: float
    aa: float
    kappa: float


@dataclass
class EvalResult:
    metrics: Metrics
    per_class: dict  # class id -> recall (nan when the class has no test samples)
    confusion: np.ndarray
    class_ids: list
    predictions: np.ndarray
    boundary_metrics: Metrics | None
    boundary_count: int


def knn_predict(test_features, reference_features, reference_labels, k):
    """Majority label among the k nearest references by Euclidean distance.

    Ties are broken by the smaller mean distance within the tied classes,
    then by the smaller class id.
    """
    reference_features = np.asarray(reference_features, dtype=np.float64)
    reference_labels = np.asarray(reference_labels)
    test_features = np.asarray(test_features, dtype=np.float64)
    n_ref = reference_features.shape[0]
    if n_ref == 0:
        raise EvaluationError("knn_predict needs a non-empty reference set")
    if not 1 <= k <= n_ref:
        raise EvaluationError(f"k={k} must lie in [1, {n_ref}]")
    predictions = np.empty(test_features.shape[0], dtype=reference_labels.dtype)
    # keep the (chunk, n_ref, dim) difference block around 2e6 doubles
    chunk = max(1, int(2e6 // max(n_ref * reference_features.shape[1], 1)))
    for start in range(0, test_features.shape[0], chunk):
        block = test_features[start:start + chunk]
        diff = block[:, None, :] - reference_features[None, :, :]
        dist2 = np.einsum("ijk,ijk->ij", diff, diff)
        order = np.argsort(dist2, axis=1, kind="stable")[:, :k]
        for row, neighbors in enumerate(order):
            labels = reference_labels[neighbors]
            distances = dist2[row, neighbors]
            candidates, counts = np.unique(labels, return_counts=True)
            best = candidates[counts == counts.max()]
            if best.size > 1:
                means = np.array([distances[labels == c].mean() for c in best])
                best = best[means == means.min()]
            predictions[start + row] = best.min()
    return predictions


def confusion_matrix(true_labels, predicted_labels, class_ids):
    """Counts with rows = true class, cols = predicted class."""
    index = {cid: i for i, cid in enumerate(class_ids)}
    cm = np.zeros((len(class_ids), len(class_ids)), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        cm[index[int(t)], index[int(p)]] += 1
    return cm


def compute_metrics(cm):
    """Overall accuracy, mean per-class recall, and Cohen's kappa."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise EvaluationError("confusion matrix is empty")
    oa = np.trace(cm) / total
    row_sums = cm.sum(axis=1)
    col_sums = cm.sum(axis=0)
    present = row_sums > 0
    recalls = np.diag(cm)[present] / row_sums[present]
    aa = recalls.mean()
    p_e = float(row_sums @ col_sums) / (total * total)
    if p_e == 1.0:
        if oa == 1.0:
            return Metrics(oa=1.0, aa=float(aa), kappa=1.0)
        raise NumericError("kappa undefined: expected agreement is 1 but observed is not")
    kappa = (oa - p_e) / (1.0 - p_e)
    return Metrics(oa=float(oa), aa=float(aa), kappa=float(kappa))


def per_class_accuracy(cm, class_ids):
    cm = np.asarray(cm, dtype=np.float64)
    row_sums = cm.sum(axis=1)
    out = {}
    for i, cid in enumerate(class_ids):
        out[cid] = float(np.diag(cm)[i] / row_sums[i]) if row_sums[i] > 0 else float("nan")
    return out


def evaluate(params: ModelParams, test_samples, reference_samples, k=5,
             domain="target", class_ids=None, batch_size=256):
    """Extract features for the test and reference pools, KNN-predict, and
    compute metrics overall and on the boundary-flagged test subset."""
    if not reference_samples:
        raise EvaluationError("evaluate needs a non-empty reference set")
    if not test_samples:
        raise EvaluationError("evaluate needs a non-empty test set")
    ref_labels = np.array([s.label for s in reference_samples])
    true_labels = np.array([s.label for s in test_samples])
    if class_ids is None:
        class_ids = sorted(set(ref_labels.tolist()) | set(true_labels.tolist()))
    ref_features = embed_patches([s.pixels for s in reference_samples], domain, params, batch_size)
    test_features = embed_patches([s.pixels for s in test_samples], domain, params, batch_size)
    predictions = knn_predict(test_features, ref_features, ref_labels, k)
    cm = confusion_matrix(true_labels, predictions, class_ids)
    boundary = np.array([s.is_boundary for s in test_samples], dtype=bool)
    boundary_metrics = None
    if boundary.any():
        boundary_cm = confusion_matrix(true_labels[boundary], predictions[boundary], class_ids)
        boundary_metrics = compute_metrics(boundary_cm)
    return EvalResult(
        metrics=compute_metrics(cm),
        per_class=per_class_accuracy(cm, class_ids),
        confusion=cm,
        class_ids=list(class_ids),
        predictions=predictions,
        boundary_metrics=boundary_metrics,
        boundary_count=int(boundary.sum()),
    )


# ---------------------------------------------------------------------------
# classification-map rendering


def default_palette(n_classes):
    """Deterministic list of n visually distinct RGB colors."""
    palette = []
    for i in range(n_classes):
        r, g, b = colorsys.hsv_to_rgb(i / max(n_classes, 1), 1.0, 1.0 if i % 2 == 0 else 0.72)
        palette.append((int(round(r * 255)), int(round(g * 255)), int(round(b * 255))))
    return palette


def prediction_grid(centers, predictions, shape):
    """Scatter per-center predictions into a (height, width) class grid."""
    grid = np.zeros(shape, dtype=np.uint16)
    for (row, col), label in zip(centers, predictions):
        grid[row, col] = label
    return grid


def render_map(class_grid, palette):
    """Render a class grid as a binary portable pixmap (P6).

    Unlabeled pixels (0) are black; class c uses palette[c - 1].
    """
    class_grid = np.asarray(class_grid)
    top = int(class_grid.max())
    if top > len(palette):
        raise EvaluationError(f"palette has {len(palette)} colors but class {top} occurs")
    lut = np.zeros((top + 1, 3), dtype=np.uint8)
    for c in range(1, top + 1):
        lut[c] = palette[c - 1]
    rgb = lut[class_grid]
    header = f"P6\n{class_grid.shape[1]} {class_grid.shape[0]}\n255\n".encode("ascii")
    return header + rgb.tobytes()


# ---------------------------------------------------------------------------
# report formatting


def format_report(result: EvalResult, extra=None):
    """Key: value metrics report, with a per-class accuracy table."""
    lines = [
        f"samples: {int(result.confusion.sum())}",
        f"oa: {result.metrics.oa:.6f}",
        f"aa: {result.metrics.aa:.6f}",
        f"kappa: {result.metrics.kappa:.6f}",
        f"boundary_samples: {result.boundary_count}",
    ]
    if result.boundary_metrics is None:
        lines.append("boundary_oa: n/a")
    else:
        lines.append(f"boundary_oa: {result.boundary_metrics.oa:.6f}")
    for cid in result.class_ids:
        acc = result.per_class[cid]
        lines.append(f"class_{cid}_accuracy: " + ("n/a" if np.isnan(acc) else f"{acc:.6f}"))
    if extra:
        lines.extend(extra)
    return "\n".join(lines) + "\n"


def format_multi_seed_report(seed_results):
    """Aggregate {seed: EvalResult} into mean/std lines plus per-seed detail."""
    seeds = sorted(seed_results)
    oa = np.array([seed_results[s].metrics.oa for s in seeds])
    aa = np.array([seed_results[s].metrics.aa for s in seeds])
    kappa = np.array([seed_results[s].metrics.kappa for s in seeds])
    boundary = [
        seed_results[s].boundary_metrics.oa
        for s in seeds
        if seed_results[s].boundary_metrics is not None
    ]
    lines = [
        f"seeds: {','.join(str(s) for s in seeds)}",
        f"oa_mean: {oa.mean():.6f}",
        f"oa_std: {oa.std():.6f}",
        f"aa_mean: {aa.mean():.6f}",
        f"aa_std: {aa.std():.6f}",
        f"kappa_mean: {kappa.mean():.6f}",
        f"kappa_std: {kappa.std():.6f}",
    ]
    if boundary:
        arr = np.array(boundary)
        lines.append(f"boundary_oa_mean: {arr.mean():.6f}")
        lines.append(f"boundary_oa_std: {arr.std():.6f}")
    else:
        lines.append("boundary_oa_mean: n/a")
    for s in seeds:
        lines.append(f"seed_{s}_oa: {seed_results[s].metrics.oa:.6f}")
    return "\n".join(lines) + "\n"
