import pytest

import numpy as np

from uscnet.config import (
    GeneratorConfig,
    ModelConfig,
    RunConfig,
    TrainConfig,
)
from uscnet.data_synth import generate_dataset
from uscnet.storage import save_dataset
from uscnet.vtt import (
    EhrRecord,
    EhrStats,
)


TINY_MODEL = ModelConfig(
    volume_side=8,
    patch_side=2,
    embed_dim=8,
    encoder_layers=2,
    tap_indices=(1, 1, 2, 2),
    heads=2,
    decoder_channels=(4,),
)
TINY_TRAIN = TrainConfig(
    epochs=2,
    batch_size=4,
    folds=2,
    plateau_patience=1,
)
TINY_DATA = GeneratorConfig(
    sample_count=12,
    volume_side=8,
    canvas_side=16,
    seed=3,
    min_volume=4,
)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_model_config():
    return TINY_MODEL.validate()


@pytest.fixture(scope="session")
def deep_model_config():
    # two decoder stages, so one skip path comes from a tap
    return ModelConfig(
        volume_side=8,
        patch_side=4,
        embed_dim=8,
        encoder_layers=2,
        tap_indices=(1, 1, 2, 2),
        heads=2,
        decoder_channels=(4, 2),
    ).validate()


@pytest.fixture(scope="session")
def tiny_train_config():
    return TINY_TRAIN.validate()


@pytest.fixture(scope="session")
def tiny_data_config():
    return TINY_DATA.validate()


@pytest.fixture(scope="session")
def tiny_run_config():
    return RunConfig(model=TINY_MODEL, train=TINY_TRAIN, data=TINY_DATA).validate()


@pytest.fixture(scope="session")
def tiny_samples():
    return generate_dataset(TINY_DATA)


@pytest.fixture()
def dataset_dir(tmpdir, tiny_samples):
    path = str(tmpdir.mkdir("dataset"))
    save_dataset(tiny_samples, TINY_DATA, path)
    return path


@pytest.fixture()
def records():
    return [
        EhrRecord(45.0, 'male', 6.5, 78.0, 15.0, 5.8, 'left_kidney'),
        EhrRecord(62.0, 'female', 9.1, 96.0, 70.0, 7.4, 'bladder'),
        EhrRecord(38.0, 'female', 7.7, 85.0, 35.0, 6.6, 'ureter'),
    ]


@pytest.fixture()
def stats(records):
    return EhrStats.from_records(records)
