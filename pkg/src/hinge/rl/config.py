"""
Flat ``key = value`` run configuration files.
"""
import ast
import configparser
import hashlib

from hinge.rl.errors import ConfigurationError

_SECTION = "run"


def _interpret(text):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config(text):
    """
    Parse configuration text into a *dict*.
    Values that are Python literals (numbers, booleans, tuples, ...) are converted, anything else is kept as a string.

    :param text: The configuration text, one ``key = value`` entry per line.
    :return: A *dict* of parameters.
    """
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as e:
        raise ConfigurationError(f"Malformed configuration: {e}")

    return {key: _interpret(value.strip()) for key, value in parser.items(_SECTION)}


def read_config(filename):
    try:
        with open(filename, 'r') as f:
            text = f.read()
    except IOError as e:
        raise ConfigurationError(f"Failed to read configuration file {filename}: {e}")

    return parse_config(text)


def format_config(parameters):
    return "".join(f"{key} = {parameters[key]!r}\n" for key in sorted(parameters))


def write_config(filename, parameters):
    with open(filename, 'w') as f:
        f.write(format_config(parameters))


def config_hash(parameters):
    """
    SHA-256 of the canonical (sorted) configuration text.
    """
    return hashlib.sha256(format_config(parameters).encode("utf-8")).hexdigest()


def pick(parameters, cls, prefix=""):
    """
    Select the entries of *parameters* that name fields of the dataclass *cls*.

    :param parameters: A *dict* of parameters, possibly containing keys for other configurations.
    :param cls: The dataclass type.
    :param prefix: Optional key prefix, stripped before matching field names.
    :return: A *dict* suitable for ``cls(**result)``.
    """
    names = set(cls.__dataclass_fields__)
    picked = {}
    for key, value in parameters.items():
        if prefix:
            if not key.startswith(prefix):
                continue
            key = key[len(prefix):]
        if key in names:
            picked[key] = value

    return picked
