import os

import pytest

import numpy as np

from uscnet.utils.filesystem import (
    ensure_path_exists,
    read_json,
    read_raw,
    write_json,
    write_raw,
)
from uscnet.utils.types import (
    is_integer,
    to_bool,
    to_int_tuple,
    to_text,
)


def test_ensure_path_exists(tmpdir):
    path = str(tmpdir.join('a', 'b'))

    assert ensure_path_exists(path) is True
    assert ensure_path_exists(path) is False
    assert os.path.isdir(path)


def test_raw_buffers_are_little_endian(tmpdir):
    path = str(tmpdir.join('values.f32raw'))

    write_raw(path, np.array([1.0, 2.0]), 'f32')

    with open(path, 'rb') as raw_file:
        assert raw_file.read() == np.array([1.0, 2.0], dtype='<f4').tobytes()
    assert read_raw(path, 'f32', (2,)).tolist() == [1.0, 2.0]


def test_read_raw_checks_the_size(tmpdir):
    path = str(tmpdir.join('mask.u8raw'))
    write_raw(path, np.ones(5), 'u8')

    with pytest.raises(ValueError):
        read_raw(path, 'u8', (2, 2))


def test_json_round_trip(tmpdir):
    path = str(tmpdir.join('nested', 'payload.json'))

    write_json(path, {'b': 1, 'a': [1, 2]})

    assert read_json(path) == {'a': [1, 2], 'b': 1}


@pytest.mark.parametrize(
    "text,expected",
    (('yes', True), ('TRUE', True), (' off ', False), ('0', False)),
)
def test_to_bool(text, expected):
    assert to_bool(text) is expected


def test_to_bool_rejects_other_words():
    with pytest.raises(ValueError):
        to_bool('maybe')


def test_to_int_tuple():
    assert to_int_tuple('2, 4,6,') == (2, 4, 6)


@pytest.mark.parametrize(
    "value,expected",
    (
        (True, 'true'),
        (3, '3'),
        (0.001, '0.001'),
        ('attention', 'attention'),
        (('z_a', 'z_last'), 'z_a,z_last'),
    ),
)
def test_to_text(value, expected):
    assert to_text(value) == expected


def test_booleans_are_not_integers():
    assert not is_integer(True)
    assert is_integer(np.int64(3))
