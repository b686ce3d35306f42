"""
The environment parameter domain: sixteen values describing one cabinet door, their ranges,
uniform sampling for domain randomisation and the normalisation used for network inputs.
"""
import hashlib
import math

from dataclasses import dataclass, fields, astuple

import numpy as np
from scipy.spatial.transform import Rotation

from hinge.rl.config import parse_config
from hinge.rl.errors import EnvDomainError, ConfigurationError

_RANGE_TOLERANCE = 1e-9


@dataclass
class EnvParams:
    """
    One door instance. Field order is the fixed order of every 16-vector used for network I/O.
    The quaternion components are stored as sampled, use :meth:`orientation` for the unit quaternion.
    """
    length: float
    width: float
    height: float
    thickness: float
    density: float
    damping: float
    friction: float
    position_x: float
    position_y: float
    position_z: float
    quaternion_w: float
    quaternion_x: float
    quaternion_y: float
    quaternion_z: float
    theta_init: float
    target_speed: float

    def __post_init__(self):
        for f in fields(self):
            value = float(getattr(self, f.name))
            if not math.isfinite(value):
                raise EnvDomainError(f"Environment parameter {f.name} must be finite, got {value}.")
            setattr(self, f.name, value)

    def to_vector(self):
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_vector(cls, values):
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.shape != (len(FIELD_NAMES),):
            raise EnvDomainError(f"Environment parameter vector needs {len(FIELD_NAMES)} values, got {values.shape}.")
        return cls(*values.tolist())

    def orientation(self):
        """
        Cabinet orientation as a unit quaternion ordered (w, x, y, z).
        """
        q = np.array([self.quaternion_w, self.quaternion_x, self.quaternion_y, self.quaternion_z])
        norm = np.linalg.norm(q)
        if norm == 0.0:
            raise EnvDomainError("Quaternion of zero length cannot describe an orientation.")
        return q / norm

    def rotation_matrix(self):
        w, x, y, z = self.orientation()
        return Rotation.from_quat([x, y, z, w]).as_matrix()


FIELD_NAMES = tuple(f.name for f in fields(EnvParams))


@dataclass
class ParamRanges:
    bounds: dict

    def __post_init__(self):
        missing = [name for name in FIELD_NAMES if name not in self.bounds]
        if missing:
            raise EnvDomainError(f"Parameter ranges missing for: {', '.join(missing)}.")
        for name in FIELD_NAMES:
            lo, hi = self.bounds[name]
            if not lo < hi:
                raise EnvDomainError(f"Parameter range for {name} must satisfy lo < hi, got ({lo}, {hi}).")

    def lows(self):
        return np.array([self.bounds[name][0] for name in FIELD_NAMES], dtype=float)

    def highs(self):
        return np.array([self.bounds[name][1] for name in FIELD_NAMES], dtype=float)

    def contains(self, e):
        v = e.to_vector()
        return bool(np.all(v >= self.lows() - _RANGE_TOLERANCE) and np.all(v <= self.highs() + _RANGE_TOLERANCE))


PARAM_RANGES = ParamRanges({
    "length": (0.28, 0.32),
    "width": (0.2, 0.85),
    "height": (0.2, 0.4),
    "thickness": (0.01, 0.03),
    "density": (300.0, 3000.0),
    "damping": (0.01, 0.08),
    "friction": (0.001, 0.02),
    "position_x": (0.45, 0.55),
    "position_y": (-0.05, 0.05),
    "position_z": (-0.05, 0.05),
    "quaternion_w": (-0.1284, 1.0),
    "quaternion_x": (-0.0489, 0.0489),
    "quaternion_y": (-0.0489, 0.0489),
    "quaternion_z": (0.989, 1.0),
    "theta_init": (-0.3, 0.3),
    "target_speed": (-0.3, -0.05),
})


def narrow_ranges(ranges=PARAM_RANGES, **field_bounds):
    """
    Restrict some rows of *ranges* to a sub-interval.

    :param ranges: The ParamRanges to restrict.
    :param field_bounds: Field name to (lo, hi) pairs, each inside the existing interval.
    :return: A new ParamRanges.
    """
    bounds = dict(ranges.bounds)
    for name, (lo, hi) in field_bounds.items():
        if name not in bounds:
            raise EnvDomainError(f"Unknown environment parameter {name}.")
        old_lo, old_hi = bounds[name]
        if lo < old_lo or hi > old_hi:
            raise EnvDomainError(f"Range ({lo}, {hi}) for {name} is outside ({old_lo}, {old_hi}).")
        bounds[name] = (lo, hi)

    return ParamRanges(bounds)


def sample_env(rng, ranges=PARAM_RANGES):
    """
    Draw every field uniformly and independently from its range.

    :param rng: A seeded numpy Generator, one per worker.
    :param ranges: The ParamRanges to sample from.
    :return: EnvParams.
    """
    return EnvParams(*[rng.uniform(*ranges.bounds[name]) for name in FIELD_NAMES])


def mean_env(ranges=PARAM_RANGES):
    return EnvParams(*[(ranges.bounds[name][0] + ranges.bounds[name][1]) / 2.0 for name in FIELD_NAMES])


def normalize(e, ranges=PARAM_RANGES):
    """
    Map every field affinely from its (lo, hi) range onto (-1, 1).
    """
    v = e.to_vector()
    lows, highs = ranges.lows(), ranges.highs()
    outside = (v < lows - _RANGE_TOLERANCE) | (v > highs + _RANGE_TOLERANCE)
    if np.any(outside):
        names = [name for name, flag in zip(FIELD_NAMES, outside) if flag]
        raise EnvDomainError(f"Environment parameters out of range: {', '.join(names)}.")

    return 2.0 * (v - lows) / (highs - lows) - 1.0


def denormalize(values, ranges=PARAM_RANGES):
    values = np.asarray(values, dtype=float).reshape(-1)
    lows, highs = ranges.lows(), ranges.highs()
    return EnvParams.from_vector(lows + (values + 1.0) / 2.0 * (highs - lows))


def format_envparams(e):
    return "".join(f"{name} = {getattr(e, name)!r}\n" for name in FIELD_NAMES)


def parse_envparams(text):
    try:
        values = parse_config(text)
    except ConfigurationError as e:
        raise EnvDomainError(f"Malformed environment parameters: {e}")

    missing = [name for name in FIELD_NAMES if name not in values]
    if missing:
        raise EnvDomainError(f"Environment parameters missing: {', '.join(missing)}.")
    unknown = sorted(set(values) - set(FIELD_NAMES))
    if unknown:
        raise EnvDomainError(f"Unknown environment parameters: {', '.join(unknown)}.")

    return EnvParams(**{name: values[name] for name in FIELD_NAMES})


def read_envparams(filename):
    try:
        with open(filename, 'r') as f:
            return parse_envparams(f.read())
    except IOError as e:
        raise EnvDomainError(f"Failed to read environment parameters {filename}: {e}")


def write_envparams(filename, e):
    with open(filename, 'w') as f:
        f.write(format_envparams(e))


def env_hash(e):
    return hashlib.sha256(format_envparams(e).encode("utf-8")).hexdigest()
