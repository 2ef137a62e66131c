import numbers
from collections import abc


TRUE_WORDS = ('true', 'yes', 'on', '1')
FALSE_WORDS = ('false', 'no', 'off', '0')


def is_integer(value):
    return isinstance(value, numbers.Integral) and not isinstance(value, bool)


def is_number(value):
    return isinstance(value, numbers.Real) and not isinstance(value, bool)


def is_boolean(value):
    return isinstance(value, bool)


def is_text(value):
    return isinstance(value, str)


def is_list_like(obj):
    return not is_text(obj) and isinstance(obj, abc.Sequence)


def to_bool(text):
    lowered = text.strip().lower()
    if lowered in TRUE_WORDS:
        return True
    elif lowered in FALSE_WORDS:
        return False
    raise ValueError("Not a boolean: {0!r}".format(text))


def to_int(text):
    text = text.strip()
    try:
        return int(text, 10)
    except ValueError:
        raise ValueError("Not an integer: {0!r}".format(text))


def to_float(text):
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        raise ValueError("Not a number: {0!r}".format(text))


def to_int_tuple(text):
    return tuple(to_int(part) for part in text.split(',') if part.strip())


def to_str_tuple(text):
    return tuple(part.strip() for part in text.split(',') if part.strip())


def to_text(value):
    """
    Inverse of the ``to_*`` parsers: renders a python value as config text.
    """
    if is_boolean(value):
        return 'true' if value else 'false'
    elif is_integer(value):
        return str(int(value))
    elif is_number(value):
        return repr(float(value))
    elif is_text(value):
        return value
    elif is_list_like(value):
        return ','.join(to_text(item) for item in value)
    raise TypeError("Unsupported type: {0}".format(type(value)))
