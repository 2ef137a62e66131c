import pickle

import pytest

from uscnet.exceptions import (
    ConfigError,
    DataError,
    MetricError,
    ShapeError,
    TrainingError,
    USCNetError,
)


def test_default_message():
    assert str(DataError()) == "Invalid or inconsistent dataset"


def test_context_is_rendered_sorted():
    err = ShapeError("Inner dimensions differ", right=(4, 2), left=(2, 3))

    assert str(err) == "Inner dimensions differ (left=(2, 3), right=(4, 2))"


def test_as_record_is_a_single_line():
    err = TrainingError("Non-finite loss\nin batch", fold=2, epoch=7)

    assert err.as_record() == 'error=TrainingError message="Non-finite loss in batch" epoch=7 fold=2'


@pytest.mark.parametrize("error_class", (ShapeError, ConfigError, MetricError))
def test_value_errors(error_class):
    assert issubclass(error_class, ValueError)
    assert issubclass(error_class, USCNetError)


def test_errors_survive_pickling():
    err = TrainingError("Fold failed", fold=3)

    restored = pickle.loads(pickle.dumps(err))

    assert isinstance(restored, TrainingError)
    assert restored.context == {'fold': 3}
    assert str(restored) == str(err)
