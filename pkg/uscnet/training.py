"""
Fold training, evaluation and cross-validation.
"""
from __future__ import annotations

import collections
import concurrent.futures
import dataclasses
import logging
import math
import os

import numpy as np
import pandas as pd

from . import tensor_core as tc
from .data_synth import (
    labels_of,
    stratified_kfold,
    window_normalize,
)
from .exceptions import (
    TrainingError,
    USCNetError,
)
from .losses import (
    bce_loss,
    dice_loss,
    fixed_weights,
    focal_loss,
    reallocate,
    schedule_weights,
    total_loss,
)
from .metrics import (
    MetricsReport,
    classification_report,
    dice_iou,
    reports_frame,
    segmentation_metrics,
    summarize,
)
from .model import (
    forward,
    init_params,
    restore,
    snapshot,
)
from .optim import (
    OptimizerState,
    PlateauState,
    adam_step,
    reduce_lr_on_plateau,
)
from .storage import save_checkpoint
from .utils.filesystem import (
    ensure_path_exists,
    write_json,
)
from .vtt import EhrStats


logger = logging.getLogger(__name__)


EPOCH_LOG_COLUMNS = (
    'fold', 'epoch', 'lr', 'w_dice', 'w_bce', 'w_focal',
    'train_dice_loss', 'train_bce_loss', 'train_focal_loss', 'train_total_loss',
    'val_dice_loss', 'val_bce_loss', 'val_focal_loss', 'val_total_loss',
    'val_dice', 'val_acc', 'val_auc', 'selection',
)
TRAJECTORY_COLUMNS = ('fold', 'epoch', 's_dice', 'w_dice', 'w_bce', 'w_focal')
LOSS_NAMES = ('dice', 'bce', 'focal', 'total')

Prepared = collections.namedtuple('Prepared', ['volume', 'mask', 'record', 'label'])


@dataclasses.dataclass
class FoldResult:
    fold: int
    params: dict
    report: MetricsReport
    epoch_log: pd.DataFrame
    weights_trajectory: pd.DataFrame
    stats: object
    train_indices: tuple
    val_indices: tuple
    best_epoch: int


@dataclasses.dataclass
class CVResult:
    folds: list
    summary: dict

    @property
    def fold_table(self):
        frame = reports_frame([fold.report for fold in self.folds])
        frame.insert(0, 'fold', [fold.fold for fold in self.folds])
        frame['best_epoch'] = [fold.best_epoch for fold in self.folds]
        return frame

    @property
    def epoch_log(self):
        return pd.concat([fold.epoch_log for fold in self.folds], ignore_index=True)

    @property
    def weights_trajectory(self):
        return pd.concat([fold.weights_trajectory for fold in self.folds], ignore_index=True)


def prepare(samples, train_config):
    return [
        Prepared(
            volume=window_normalize(sample.volume, train_config.window_lo, train_config.window_hi),
            mask=np.asarray(sample.mask, dtype=np.float64)[np.newaxis],
            record=sample.ehr,
            label=int(sample.label),
        )
        for sample in samples
    ]


def fold_weights(model_config, train_config, s_dice=None):
    if not model_config.use_ct:
        # without a segmentation branch the whole weight goes to classification
        weights = fixed_weights(1.0, train_config.lambda_, train_config.gamma, train_config.alpha)
        return reallocate(weights, train_config.use_bce, train_config.use_focal)
    return schedule_weights(train_config, s_dice)


def _mean(terms):
    total = terms[0]
    for term in terms[1:]:
        total = tc.add(total, term)
    return tc.mul(total, 1.0 / len(terms))


def batch_losses(outputs, batch, weights, train_config):
    """
    ``{'dice', 'bce', 'focal', 'total'}`` of a batch: Dice averaged over
    samples, BCE and focal over the batch of class probabilities.  Absent
    components are ``None``.
    """
    dice_terms = [
        dice_loss(output.seg_prob, item.mask)
        for output, item in zip(outputs, batch)
        if output.seg_logits is not None
    ]
    probs = tc.concat([output.class_prob for output in outputs], axis=0)
    labels = np.array([item.label for item in batch], dtype=np.float64)
    losses = {
        'dice': _mean(dice_terms) if dice_terms else None,
        'bce': bce_loss(probs, labels) if train_config.use_bce else None,
        'focal': (
            focal_loss(probs, labels, weights.gamma, weights.alpha)
            if train_config.use_focal else None
        ),
    }
    losses['total'] = total_loss(losses['dice'], losses['bce'], losses['focal'], weights)
    return losses


def _value(loss):
    return math.nan if loss is None else loss.item()


def run_inference(params, prepared, stats, model_config):
    """
    Forward passes without a tape.
    """
    return [
        forward(params, item.volume, item.record, stats, model_config)
        for item in prepared
    ]


def _validate(params, prepared, stats, model_config, train_config, weights):
    outputs = run_inference(params, prepared, stats, model_config)
    losses = batch_losses(outputs, prepared, weights, train_config)
    probs = np.array([output.class_prob.item() for output in outputs])
    labels = np.array([item.label for item in prepared])
    result = {name: _value(losses[name]) for name in LOSS_NAMES}
    result.update(classification_report(probs, labels))
    if model_config.use_ct:
        result['s_dice'] = float(np.mean([
            dice_iou(output.seg_prob.data >= 0.5, item.mask)[0]
            for output, item in zip(outputs, prepared)
        ]))
    else:
        result['s_dice'] = math.nan
    return result


def selection_score(validation, model_config):
    if model_config.use_ct:
        return 0.5 * (validation['acc'] + validation['s_dice'])
    return validation['acc']


def evaluate(params, model_config, train_config, samples, stats):
    """
    Metrics of ``params`` on ``samples`` in inference mode, plus the class
    probability of every sample.
    """
    prepared = prepare(samples, train_config)
    outputs = run_inference(params, prepared, stats, model_config)
    probs = np.array([output.class_prob.item() for output in outputs])
    labels = np.array([item.label for item in prepared])
    values = classification_report(probs, labels)
    if model_config.use_ct:
        seg = segmentation_metrics(
            [output.seg_prob.data[0] for output in outputs],
            [item.mask[0] for item in prepared],
            spacing=train_config.spacing,
        )
        values.update(dice=seg['dice'], iou=seg['iou'], hd95=seg['hd95'])
    return MetricsReport(**values), probs


def train_fold(split, model_config, train_config, samples, fold=0):
    """
    Train one fold and keep the epoch with the best validation selection
    score.  ``split`` is a ``(train_indices, val_indices)`` pair.
    """
    train_indices, val_indices = (np.asarray(part, dtype=np.int64) for part in split)
    train_samples = [samples[index] for index in train_indices]
    val_samples = [samples[index] for index in val_indices]
    stats = None
    if model_config.use_ehr:
        stats = EhrStats.from_records([sample.ehr for sample in train_samples])

    train_set = prepare(train_samples, train_config)
    val_set = prepare(val_samples, train_config)
    params = init_params(model_config, seed=[train_config.seed, fold])
    shuffle_rng = np.random.default_rng([train_config.seed, fold, 1])
    optimizer = OptimizerState()
    plateau = PlateauState(lr=train_config.lr)

    weights = fold_weights(model_config, train_config)
    if model_config.use_ct and train_config.weighting == 'dynamic':
        logger.info(
            "Fold %d starts from loss weights dice=%.2f bce=%.2f focal=%.2f; "
            "the Dice-driven schedule applies from epoch 2",
            fold, weights.w_dice, weights.w_bce, weights.w_focal,
        )
    logger.info("Fold %d: %d train / %d validation samples", fold, len(train_set), len(val_set))

    best_params = snapshot(params)
    best_epoch, best_score = 0, -math.inf
    previous_dice = None
    log_rows, trajectory_rows = [], []

    for epoch in range(1, train_config.epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        sums = dict.fromkeys(LOSS_NAMES, 0.0)
        for batch_number, start in enumerate(range(0, len(order), train_config.batch_size), 1):
            batch = [train_set[index] for index in order[start:start + train_config.batch_size]]
            with tc.Tape() as tape:
                outputs = [
                    forward(params, item.volume, item.record, stats, model_config)
                    for item in batch
                ]
                losses = batch_losses(outputs, batch, weights, train_config)
            total = losses['total'].item()
            if not math.isfinite(total):
                raise TrainingError("Non-finite loss", fold=fold, epoch=epoch, batch=batch_number)
            grads = tc.backward(tape, losses['total'])
            named = {name: grads[param] for name, param in params.items() if param in grads}
            adam_step(params, named, optimizer, train_config, lr=plateau.lr)
            for name in LOSS_NAMES:
                sums[name] += _value(losses[name]) * len(batch)

        validation = _validate(params, val_set, stats, model_config, train_config, weights)
        score = selection_score(validation, model_config)
        log_rows.append({
            'fold': fold,
            'epoch': epoch,
            'lr': plateau.lr,
            'w_dice': weights.w_dice,
            'w_bce': weights.w_bce,
            'w_focal': weights.w_focal,
            'train_dice_loss': sums['dice'] / len(train_set),
            'train_bce_loss': sums['bce'] / len(train_set),
            'train_focal_loss': sums['focal'] / len(train_set),
            'train_total_loss': sums['total'] / len(train_set),
            'val_dice_loss': validation['dice'],
            'val_bce_loss': validation['bce'],
            'val_focal_loss': validation['focal'],
            'val_total_loss': validation['total'],
            'val_dice': validation['s_dice'],
            'val_acc': validation['acc'],
            'val_auc': validation['auc'],
            'selection': score,
        })
        trajectory_rows.append({
            'fold': fold,
            'epoch': epoch,
            's_dice': math.nan if previous_dice is None else previous_dice,
            'w_dice': weights.w_dice,
            'w_bce': weights.w_bce,
            'w_focal': weights.w_focal,
        })
        logger.info(
            "Fold %d epoch %d: train %.4f val %.4f acc %.3f dice %.3f lr %.1e",
            fold, epoch, log_rows[-1]['train_total_loss'], validation['total'],
            validation['acc'], validation['s_dice'], plateau.lr,
        )

        if score > best_score:
            best_score, best_epoch = score, epoch
            best_params = snapshot(params)

        reduce_lr_on_plateau(validation['total'], plateau, train_config)
        if model_config.use_ct:
            previous_dice = validation['s_dice']
            weights = fold_weights(model_config, train_config, previous_dice)

    report, _ = evaluate(restore(best_params), model_config, train_config, val_samples, stats)
    logger.info("Fold %d finished, best epoch %d", fold, best_epoch)
    return FoldResult(
        fold=fold,
        params=best_params,
        report=report,
        epoch_log=pd.DataFrame(log_rows, columns=list(EPOCH_LOG_COLUMNS)),
        weights_trajectory=pd.DataFrame(trajectory_rows, columns=list(TRAJECTORY_COLUMNS)),
        stats=stats,
        train_indices=tuple(int(index) for index in train_indices),
        val_indices=tuple(int(index) for index in val_indices),
        best_epoch=best_epoch,
    )


def _train_fold_job(fold, split, model_config, train_config, samples):
    try:
        return train_fold(split, model_config, train_config, samples, fold=fold)
    except USCNetError as err:
        if isinstance(err, TrainingError) and 'fold' in err.context:
            raise
        raise TrainingError("Fold failed: {0}".format(err), fold=fold)


def run_cv(model_config, train_config, samples, k=None):
    """
    Stratified ``k``-fold training (``train_config.folds`` by default).
    Folds run in worker processes when ``train_config.workers > 1``; results
    are always ordered by fold.
    """
    k = train_config.folds if k is None else k
    splits = stratified_kfold(labels_of(samples), k, seed=train_config.seed)
    jobs = [(fold, split, model_config, train_config, samples) for fold, split in enumerate(splits)]
    if train_config.workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=train_config.workers) as pool:
            futures = [pool.submit(_train_fold_job, *job) for job in jobs]
            folds = [future.result() for future in futures]
    else:
        folds = [_train_fold_job(*job) for job in jobs]
    summary = summarize([fold.report for fold in folds])
    return CVResult(folds=folds, summary=summary)


def write_cv_outputs(result, run_config, out_dir):
    ensure_path_exists(out_dir)
    result.epoch_log.to_csv(os.path.join(out_dir, 'epochlog.csv'), index=False)
    result.fold_table.to_csv(os.path.join(out_dir, 'fold_metrics.csv'), index=False)
    result.weights_trajectory.to_csv(os.path.join(out_dir, 'weights_trajectory.csv'), index=False)
    for fold in result.folds:
        save_checkpoint(
            os.path.join(out_dir, 'fold_{0}'.format(fold.fold)),
            fold.params,
            run_config,
            fold.stats,
            fold=fold.fold,
            val_indices=fold.val_indices,
            epoch=fold.best_epoch,
        )
    write_json(os.path.join(out_dir, 'summary.json'), {
        'folds': len(result.folds),
        'best_epochs': [fold.best_epoch for fold in result.folds],
        'metrics': result.summary,
    })
    return out_dir
