import json
import os

import numpy as np


# raw buffers are always little-endian regardless of the host
RAW_DTYPES = {
    'f32': np.dtype('<f4'),
    'f64': np.dtype('<f8'),
    'u8': np.dtype('u1'),
}


def ensure_path_exists(dir_path):
    """
    Make sure that a path exists
    """
    if not os.path.exists(dir_path):
        os.makedirs(dir_path)
        return True
    return False


def ensure_parent_dir_exists(path):
    parent = os.path.dirname(path)
    if parent:
        ensure_path_exists(parent)


def write_raw(path, array, kind):
    ensure_parent_dir_exists(path)
    data = np.ascontiguousarray(array, dtype=RAW_DTYPES[kind])
    with open(path, 'wb') as raw_file:
        raw_file.write(data.tobytes(order='C'))


def read_raw(path, kind, shape):
    dtype = RAW_DTYPES[kind]
    with open(path, 'rb') as raw_file:
        payload = raw_file.read()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise ValueError(
            "{0} holds {1} bytes, expected {2}".format(path, len(payload), expected)
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def write_json(path, payload):
    ensure_parent_dir_exists(path)
    with open(path, 'w', encoding='utf8') as json_file:
        json.dump(payload, json_file, sort_keys=True, indent=2)
        json_file.write('\n')


def read_json(path):
    with open(path, 'r', encoding='utf8') as json_file:
        return json.load(json_file)
