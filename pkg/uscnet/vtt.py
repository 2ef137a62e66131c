"""
Visual and textual transformation: volumes become patch tokens, clinical
records become one token per field.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from . import tensor_core as tc
from .exceptions import (
    DataError,
    ShapeError,
)


GENDERS = ('male', 'female')
LOCATIONS = (
    'left_ureter',
    'right_ureter',
    'ureter',
    'left_kidney',
    'right_kidney',
    'kidney',
    'bladder',
    'urethra',
)
CONTINUOUS_FIELDS = (
    'age',
    'blood_leukocyte',
    'serum_creatinine',
    'urine_leukocyte',
    'urine_ph',
)
# token order of an encoded record
EHR_FIELDS = (
    'age',
    'gender',
    'blood_leukocyte',
    'serum_creatinine',
    'urine_leukocyte',
    'urine_ph',
    'stone_location',
)
CATEGORIES = {
    'gender': GENDERS,
    'stone_location': LOCATIONS,
}
TOKEN_KINDS = ('vision', 'ehr', 'segmentation')


def feature_width(field):
    return len(CATEGORIES[field]) if field in CATEGORIES else 1


@dataclasses.dataclass(frozen=True)
class EhrRecord:
    age: float
    gender: str
    blood_leukocyte: float
    serum_creatinine: float
    urine_leukocyte: float
    urine_ph: float
    stone_location: str

    def validate(self):
        for field, choices in CATEGORIES.items():
            if getattr(self, field) not in choices:
                raise DataError(
                    "Unknown {0} {1!r}.  Must be one of {2}".format(
                        field,
                        getattr(self, field),
                        ', '.join(choices),
                    )
                )
        if not 4.0 <= self.urine_ph <= 9.0:
            raise DataError("urine_ph outside [4, 9]", urine_ph=self.urine_ph)
        for field in ('age', 'blood_leukocyte', 'serum_creatinine', 'urine_leukocyte'):
            if getattr(self, field) < 0:
                raise DataError("Negative clinical value", field=field, value=getattr(self, field))
        return self

    def as_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload):
        try:
            record = cls(**{field: payload[field] for field in EHR_FIELDS})
        except KeyError as err:
            raise DataError("Clinical record is missing a field", field=err.args[0])
        return record.validate()


@dataclasses.dataclass(frozen=True)
class EhrStats:
    """
    Mean and population standard deviation of every continuous field, taken
    over a training split.
    """
    means: tuple
    stds: tuple

    @classmethod
    def from_records(cls, records):
        if not records:
            raise DataError("Cannot standardize an empty record set")
        values = np.array([
            [getattr(record, field) for field in CONTINUOUS_FIELDS]
            for record in records
        ], dtype=np.float64)
        means = values.mean(axis=0)
        stds = values.std(axis=0)
        for field, std in zip(CONTINUOUS_FIELDS, stds):
            if not std > 0.0:
                raise DataError("Zero variance clinical field", field=field, records=len(records))
        return cls(tuple(float(m) for m in means), tuple(float(s) for s in stds))

    def standardize(self, record):
        return {
            field: (getattr(record, field) - mean) / std
            for field, mean, std in zip(CONTINUOUS_FIELDS, self.means, self.stds)
        }

    def as_dict(self):
        return {
            field: {'mean': mean, 'std': std}
            for field, mean, std in zip(CONTINUOUS_FIELDS, self.means, self.stds)
        }

    @classmethod
    def from_dict(cls, payload):
        try:
            return cls(
                tuple(float(payload[field]['mean']) for field in CONTINUOUS_FIELDS),
                tuple(float(payload[field]['std']) for field in CONTINUOUS_FIELDS),
            )
        except (KeyError, TypeError):
            raise DataError("Malformed standardization statistics")


@dataclasses.dataclass(frozen=True)
class TokenSequence:
    tokens: tc.Tensor
    kind: str

    def __post_init__(self):
        if self.kind not in TOKEN_KINDS:
            raise ShapeError(
                "Unknown token kind {0!r}.  Must be one of {1}".format(
                    self.kind, ', '.join(TOKEN_KINDS),
                )
            )
        if self.tokens.ndim != 2:
            raise ShapeError("Tokens must be [count, E]", shape=self.tokens.shape)
        if self.kind == 'ehr' and self.tokens.shape[0] != len(EHR_FIELDS):
            raise ShapeError(
                "Clinical sequences carry one token per field",
                shape=self.tokens.shape,
            )

    @property
    def count(self):
        return self.tokens.shape[0]

    @property
    def width(self):
        return self.tokens.shape[1]


def token_tensor(value):
    if isinstance(value, TokenSequence):
        return value.tokens
    return tc.as_tensor(value)


def _grid_side(side, patch_side):
    if patch_side < 1 or side % patch_side:
        raise ShapeError(
            "Volume side {0} is not divisible by patch side {1}".format(side, patch_side)
        )
    return side // patch_side


def patch_count(side, patch_side):
    return _grid_side(side, patch_side) ** 3


def patchify(volume, patch_side):
    """
    Split a cubic ``[S, S, S]`` volume into ``[N, P**3]`` rows, one per patch,
    ordered lexicographically over the patch grid.
    """
    volume = tc.as_tensor(volume)
    if volume.ndim != 3 or len(set(volume.shape)) != 1:
        raise ShapeError("Expected a cubic [S, S, S] volume", shape=volume.shape)
    grid = _grid_side(volume.shape[0], patch_side)
    blocks = tc.reshape(volume, (grid, patch_side) * 3)
    blocks = tc.transpose(blocks, (0, 2, 4, 1, 3, 5))
    return tc.reshape(blocks, (grid ** 3, patch_side ** 3))


def unpatchify(patches, side, patch_side):
    patches = tc.as_tensor(patches)
    grid = _grid_side(side, patch_side)
    if patches.shape != (grid ** 3, patch_side ** 3):
        raise ShapeError(
            "Patches do not tile the volume",
            shape=patches.shape,
            side=side,
            patch_side=patch_side,
        )
    blocks = tc.reshape(patches, (grid,) * 3 + (patch_side,) * 3)
    blocks = tc.transpose(blocks, (0, 3, 1, 4, 2, 5))
    return tc.reshape(blocks, (side, side, side))


def tokens_to_grid(tokens, grid_side):
    """
    ``[N, E]`` tokens back to an ``[E, g, g, g]`` feature grid using the patch
    order of :func:`patchify`.
    """
    tokens = token_tensor(tokens)
    if tokens.ndim != 2 or tokens.shape[0] != grid_side ** 3:
        raise ShapeError(
            "Token count does not match the grid",
            shape=tokens.shape,
            grid_side=grid_side,
        )
    channels_first = tc.transpose(tokens, (1, 0))
    return tc.reshape(channels_first, (tokens.shape[1],) + (grid_side,) * 3)


def embed_patches(patches, projection, pos):
    patches, projection, pos = tc.as_tensor(patches), tc.as_tensor(projection), tc.as_tensor(pos)
    if pos.shape != (patches.shape[0], projection.shape[-1]):
        raise ShapeError(
            "Positional embedding must be [N, E]",
            patches=patches.shape,
            projection=projection.shape,
            pos=pos.shape,
        )
    return TokenSequence(tc.add(tc.matmul(patches, projection), pos), 'vision')


def ehr_feature_vectors(record, stats):
    """
    Standardized continuous values and one-hot categorical indicators, as one
    row vector per field.
    """
    record.validate()
    standardized = stats.standardize(record)
    vectors = {}
    for field in EHR_FIELDS:
        if field in CATEGORIES:
            row = np.zeros((1, feature_width(field)))
            row[0, CATEGORIES[field].index(getattr(record, field))] = 1.0
        else:
            row = np.array([[standardized[field]]])
        vectors[field] = row
    return vectors


def encode_ehr(record, stats, embeddings):
    """
    Seven ``[1, E]`` tokens, each the feature vector of one field times that
    field's ``[d_f, E]`` embedding.  No bias, no nonlinearity.
    """
    vectors = ehr_feature_vectors(record, stats)
    tokens = []
    for field in EHR_FIELDS:
        embedding = tc.as_tensor(embeddings[field])
        if embedding.ndim != 2 or embedding.shape[0] != feature_width(field):
            raise ShapeError(
                "Embedding for {0} must be [{1}, E]".format(field, feature_width(field)),
                shape=embedding.shape,
            )
        tokens.append(tc.matmul(vectors[field], embedding))
    return TokenSequence(tc.concat(tokens, axis=0), 'ehr')
