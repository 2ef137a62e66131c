"""
Classification and segmentation metrics, fold aggregation and subgroup
tables.
"""
from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np
import pandas as pd
from scipy import ndimage
from sklearn.metrics import (
    accuracy_score,
    confusion_matrix,
    f1_score,
    precision_score,
    recall_score,
    roc_auc_score,
)

from .exceptions import MetricError


logger = logging.getLogger(__name__)


CLASSIFICATION_FIELDS = ('acc', 'f1', 'recall', 'precision', 'auc')
SEGMENTATION_FIELDS = ('dice', 'iou', 'hd95')
REPORT_FIELDS = CLASSIFICATION_FIELDS + SEGMENTATION_FIELDS

AGE_BANDS = (
    ('<40', 0.0, 40.0),
    ('40-60', 40.0, 60.0),
    ('>60', 60.0, math.inf),
)


@dataclasses.dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclasses.dataclass(frozen=True)
class ClassificationResult:
    counts: ConfusionCounts
    acc: float
    f1: float
    recall: float
    precision: float


@dataclasses.dataclass(frozen=True)
class MetricsReport:
    acc: float = math.nan
    f1: float = math.nan
    recall: float = math.nan
    precision: float = math.nan
    auc: float = math.nan
    dice: float = math.nan
    iou: float = math.nan
    hd95: float = math.nan

    def as_dict(self):
        return dataclasses.asdict(self)


def _as_vectors(probs, labels):
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if probs.size == 0:
        raise MetricError("Metrics need at least one sample")
    if probs.size != labels.size:
        raise MetricError("probs and labels differ in length", probs=probs.size, labels=labels.size)
    if np.any((labels != 0) & (labels != 1)):
        raise MetricError("Labels must be 0 or 1")
    return probs, labels


def classification_metrics(probs, labels, threshold=0.5):
    """
    Confusion counts plus accuracy, F1, recall and precision of ``probs >=
    threshold``.  Ratios with a zero denominator are reported as 0.
    """
    probs, labels = _as_vectors(probs, labels)
    predicted = (probs >= threshold).astype(np.int64)
    tn, fp, fn, tp = confusion_matrix(labels, predicted, labels=[0, 1]).ravel()
    return ClassificationResult(
        counts=ConfusionCounts(tp=int(tp), fp=int(fp), tn=int(tn), fn=int(fn)),
        acc=float(accuracy_score(labels, predicted)),
        f1=float(f1_score(labels, predicted, zero_division=0)),
        recall=float(recall_score(labels, predicted, zero_division=0)),
        precision=float(precision_score(labels, predicted, zero_division=0)),
    )


def roc_auc(probs, labels):
    probs, labels = _as_vectors(probs, labels)
    if np.unique(labels).size < 2:
        raise MetricError("AUC needs both classes", label=int(labels[0]))
    return float(roc_auc_score(labels, probs))


def _binary_pair(pred_mask, true_mask):
    pred_mask = np.asarray(pred_mask).astype(bool)
    true_mask = np.asarray(true_mask).astype(bool)
    if pred_mask.shape != true_mask.shape:
        raise MetricError("Mask shapes differ", pred=pred_mask.shape, true=true_mask.shape)
    return pred_mask, true_mask


def dice_iou(pred_mask, true_mask):
    pred_mask, true_mask = _binary_pair(pred_mask, true_mask)
    overlap = int(np.count_nonzero(pred_mask & true_mask))
    union = int(np.count_nonzero(pred_mask | true_mask))
    total = int(np.count_nonzero(pred_mask)) + int(np.count_nonzero(true_mask))
    if total == 0:
        return 1.0, 1.0
    return 2.0 * overlap / total, overlap / union


def surface(mask):
    """
    Mask voxels with at least one six-connected background neighbour; the
    volume border counts as background.
    """
    mask = np.asarray(mask).astype(bool)
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    eroded = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~eroded


def surface_distances(pred_mask, true_mask, spacing=1.0):
    pred_mask, true_mask = _binary_pair(pred_mask, true_mask)
    for side, mask in (('pred', pred_mask), ('true', true_mask)):
        if not mask.any():
            raise MetricError("Surface distance of an empty mask", side=side)
    pred_surface, true_surface = surface(pred_mask), surface(true_mask)
    to_true = ndimage.distance_transform_edt(~true_surface, sampling=spacing)
    to_pred = ndimage.distance_transform_edt(~pred_surface, sampling=spacing)
    return np.concatenate([to_true[pred_surface], to_pred[true_surface]])


def hd95(pred_mask, true_mask, spacing=1.0):
    return float(np.percentile(surface_distances(pred_mask, true_mask, spacing), 95))


def segmentation_metrics(prob_volumes, true_masks, spacing=1.0, threshold=0.5):
    """
    Mean Dice, IoU and HD95 of thresholded probability volumes.  HD95 skips
    empty predictions; the number skipped is returned as ``hd95_skipped``.
    """
    dices, ious, distances = [], [], []
    skipped = 0
    for prob, truth in zip(prob_volumes, true_masks):
        predicted = np.asarray(prob) >= threshold
        dice, iou = dice_iou(predicted, truth)
        dices.append(dice)
        ious.append(iou)
        if predicted.any() and np.asarray(truth).any():
            distances.append(hd95(predicted, truth, spacing))
        else:
            skipped += 1
    if not dices:
        raise MetricError("Segmentation metrics need at least one volume")
    if skipped:
        logger.debug("HD95 skipped for %d empty predictions", skipped)
    return {
        'dice': float(np.mean(dices)),
        'iou': float(np.mean(ious)),
        'hd95': float(np.mean(distances)) if distances else math.nan,
        'hd95_skipped': skipped,
    }


def classification_report(probs, labels, threshold=0.5):
    result = classification_metrics(probs, labels, threshold)
    try:
        auc = roc_auc(probs, labels)
    except MetricError:
        auc = math.nan
    return {
        'acc': result.acc,
        'f1': result.f1,
        'recall': result.recall,
        'precision': result.precision,
        'auc': auc,
    }


def reports_frame(reports):
    return pd.DataFrame([report.as_dict() for report in reports], columns=list(REPORT_FIELDS))


def summarize(reports):
    """
    ``{metric: {'mean': .., 'std': ..}}`` over fold reports, population std.
    """
    if not reports:
        raise MetricError("Nothing to summarize")
    frame = reports_frame(reports)
    means = frame.mean(axis=0)
    stds = frame.std(axis=0, ddof=0)
    return {
        field: {'mean': float(means[field]), 'std': float(stds[field])}
        for field in REPORT_FIELDS
    }


def _age_band(age):
    for name, low, high in AGE_BANDS:
        if low <= age < high:
            return name
    raise MetricError("Age outside every band", age=age)


SUBGROUPS = {
    'age': lambda record, label: _age_band(record.age),
    'gender': lambda record, label: record.gender,
    'stone_type': lambda record, label: 'infectious' if label else 'non_infectious',
    'stone_location': lambda record, label: record.stone_location,
}


def subgroup_metrics(probs, labels, records, threshold=0.5):
    """
    Classification metrics per subgroup value, one row per (group, value)
    with its sample count.  AUC is NaN where a subgroup holds one class.
    """
    probs, labels = _as_vectors(probs, labels)
    if len(records) != labels.size:
        raise MetricError("One clinical record per sample is required", records=len(records))
    rows = []
    for group, key in SUBGROUPS.items():
        values = np.array([key(record, label) for record, label in zip(records, labels)])
        for value in sorted(set(values.tolist())):
            selected = values == value
            row = {'group': group, 'value': value, 'n': int(selected.sum())}
            row.update(classification_report(probs[selected], labels[selected], threshold))
            rows.append(row)
    return pd.DataFrame(rows, columns=['group', 'value', 'n'] + list(CLASSIFICATION_FIELDS))
