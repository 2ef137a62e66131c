"""
Synthetic stone cohort and the preprocessing applied before training.

Every sample draws from its own generator seeded with ``(seed, index)``, so
a sample depends only on the config and its position in the cohort.
"""
from __future__ import annotations

import dataclasses
import logging

import numpy as np
from sklearn.model_selection import (
    StratifiedKFold,
    train_test_split,
)

from .exceptions import (
    DataError,
    DomainError,
    ShapeError,
)
from .vtt import (
    EhrRecord,
    LOCATIONS,
)


logger = logging.getLogger(__name__)


BACKGROUND_HU = (40.0, 20.0)
STONE_HU = 1200.0
STONE_NOISE = 60.0
INFECTIOUS_DROP = 500.0
SHELL_AMPLITUDE = 300.0
SHELL_COUNT = 3
RADIUS_RANGE = (1.5, 4.0)
HOLDOUT_FRACTION = 0.2

# non-infectious stones sit mostly in the kidney, infectious ones drift downwards
LOCATION_WEIGHTS = np.array([0.10, 0.10, 0.05, 0.20, 0.20, 0.15, 0.10, 0.10])
INFECTIOUS_LOCATION_SHIFT = np.array([0.05, 0.05, 0.05, -0.10, -0.10, -0.05, 0.05, 0.05])


@dataclasses.dataclass(frozen=True)
class PatientSample:
    sample_id: str
    volume: np.ndarray
    mask: np.ndarray
    ehr: EhrRecord
    label: int


def sample_id_for(index):
    return 's{0:05d}'.format(index)


def sample_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def draw_ehr(rng, label, signal_strength):
    shift = signal_strength * label
    location_weights = LOCATION_WEIGHTS + shift * INFECTIOUS_LOCATION_SHIFT
    location_weights = location_weights / location_weights.sum()
    female_share = 0.5 + 0.2 * shift
    return EhrRecord(
        age=round(float(np.clip(rng.normal(50.0, 12.0), 18.0, 90.0)), 1),
        gender='female' if rng.random() < female_share else 'male',
        blood_leukocyte=float(max(rng.normal(7.0 + 2.0 * shift, 1.5), 0.0)),
        serum_creatinine=float(max(rng.normal(80.0 + 20.0 * shift, 15.0), 0.0)),
        urine_leukocyte=float(max(rng.normal(20.0 + 60.0 * shift, 15.0), 0.0)),
        urine_ph=float(np.clip(rng.normal(6.0 + 1.5 * shift, 0.4), 4.0, 9.0)),
        stone_location=LOCATIONS[int(rng.choice(len(LOCATIONS), p=location_weights))],
    )


def _draw_stone(rng, config):
    side = config.canvas_side
    margin = RADIUS_RANGE[1] + 1.0
    centre = rng.uniform(margin, side - 1.0 - margin, size=3)
    radii = rng.uniform(RADIUS_RANGE[0], RADIUS_RANGE[1], size=3)
    grid = np.indices((side,) * 3, dtype=np.float64)
    scaled = [(axis - c) / r for axis, c, r in zip(grid, centre, radii)]
    rho = np.sqrt(scaled[0] ** 2 + scaled[1] ** 2 + scaled[2] ** 2)
    return rho <= 1.0, rho


def _draw_volume(rng, label, config):
    """
    Place a stone on the canvas, crop the cube around it and paint
    intensities into the cube.  Stones whose cropped mask is smaller than
    ``min_volume`` are redrawn.
    """
    for attempt in range(1, config.max_retries + 1):
        mask, rho = _draw_stone(rng, config)
        rho, mask = crop_stone_cube(rho, mask, config.volume_side)
        if np.count_nonzero(mask) >= config.min_volume:
            break
        logger.debug("Stone of %d voxels rejected (attempt %d)", np.count_nonzero(mask), attempt)
    else:
        raise DataError(
            "No stone reached the minimum volume",
            min_volume=config.min_volume,
            retries=config.max_retries,
        )

    shape = mask.shape
    volume = rng.normal(BACKGROUND_HU[0], BACKGROUND_HU[1], size=shape)
    stone = STONE_HU + rng.normal(0.0, STONE_NOISE, size=shape)
    if label:
        s = config.signal_strength
        shells = np.cos(2.0 * np.pi * SHELL_COUNT * rho)
        stone = stone - INFECTIOUS_DROP * s + SHELL_AMPLITUDE * s * shells
    volume = np.where(mask, stone, volume)
    volume = np.clip(volume, config.hu_lo, config.hu_hi)
    return volume, mask, attempt


def generate_dataset(config):
    """
    ``config.sample_count`` samples with exactly ``round(balance * n)``
    infectious cases in a seed-determined order.
    """
    config.validate()
    count = config.sample_count
    positives = int(round(config.class_balance * count))
    master = np.random.default_rng(config.seed)
    labels = master.permutation(np.array([1] * positives + [0] * (count - positives)))

    samples = []
    retries = 0
    for index, label in enumerate(labels):
        rng = sample_rng(config.seed, index)
        volume, mask, attempts = _draw_volume(rng, int(label), config)
        retries += attempts - 1
        samples.append(PatientSample(
            sample_id=sample_id_for(index),
            # stored as float32, kept identical in memory
            volume=volume.astype(np.float32).astype(np.float64),
            mask=mask.astype(np.uint8),
            ehr=draw_ehr(rng, int(label), config.signal_strength),
            label=int(label),
        ))
    logger.info(
        "Generated %d samples (%d infectious, %d stone redraws)",
        count, positives, retries,
    )
    return samples


def window_normalize(volume, lo=-400.0, hi=2000.0):
    if lo >= hi:
        raise DomainError("Window bounds must satisfy lo < hi", lo=lo, hi=hi)
    volume = np.asarray(volume, dtype=np.float64)
    return (np.clip(volume, lo, hi) - lo) / (hi - lo)


def crop_stone_cube(volume, mask, side):
    """
    Cube of ``side`` voxels centred on the mask centroid, shifted to stay
    inside the volume.
    """
    volume, mask = np.asarray(volume), np.asarray(mask)
    if volume.shape != mask.shape:
        raise ShapeError("Volume and mask shapes differ", volume=volume.shape, mask=mask.shape)
    if any(side > extent for extent in volume.shape):
        raise ShapeError("Cube side exceeds the volume", side=side, shape=volume.shape)
    coords = np.argwhere(mask)
    if not coords.size:
        raise DataError("Cannot centre a crop on an empty mask")
    centroid = coords.mean(axis=0)
    starts = [
        int(np.clip(int(np.floor(c + 0.5)) - side // 2, 0, extent - side))
        for c, extent in zip(centroid, volume.shape)
    ]
    window = tuple(slice(start, start + side) for start in starts)
    return volume[window].copy(), mask[window].copy()


def stratified_kfold(labels, k=5, seed=0):
    """
    ``k`` ``(train, val)`` index pairs with class proportions kept per fold.
    ``k == 1`` is a single stratified holdout.
    """
    labels = np.asarray(labels).reshape(-1)
    classes, counts = np.unique(labels, return_counts=True)
    needed = max(k, 2)
    if classes.size < 2:
        raise DataError("Stratified splitting needs both classes")
    for value, count in zip(classes, counts):
        if count < needed:
            raise DataError(
                "Class has fewer samples than folds",
                label=int(value),
                count=int(count),
                folds=k,
            )
    indices = np.arange(labels.size)
    if k == 1:
        train, val = train_test_split(
            indices,
            test_size=HOLDOUT_FRACTION,
            stratify=labels,
            random_state=seed,
        )
        return [(np.sort(train), np.sort(val))]
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    return [(train, val) for train, val in splitter.split(indices, labels)]


def labels_of(samples):
    return np.array([sample.label for sample in samples], dtype=np.int64)
