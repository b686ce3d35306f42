"""
Frames, twists and wrenches of a gripper holding a door on a revolute joint.

Frames are the world frame {w}, the door frame {d} whose z-axis is the hinge axis and whose y-axis points
from the hinge towards the grasp, and the gripper frame {g}.
Six-vectors are always laid out as ``[linear(3), angular(3)]`` for twists and ``[force(3), torque(3)]`` for wrenches.
"""
import enum
import math

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from hinge.rl.errors import KinematicsError

THETA_LIMIT = math.pi / 2.0 - 1e-3


class Frame(enum.Enum):
    WORLD = "w"
    DOOR = "d"
    GRIPPER = "g"


def _three_vector(values, name):
    vector = np.asarray(values, dtype=float).reshape(-1)
    if vector.shape != (3,):
        raise KinematicsError(f"{name} must have three components, got {vector.shape}.")
    if not np.all(np.isfinite(vector)):
        raise KinematicsError(f"{name} has non-finite components.")
    return vector


@dataclass
class Twist:
    linear: np.ndarray
    angular: np.ndarray
    frame: Frame

    def __post_init__(self):
        self.linear = _three_vector(self.linear, "Twist linear part")
        self.angular = _three_vector(self.angular, "Twist angular part")
        if not isinstance(self.frame, Frame):
            raise KinematicsError("Twist frame must be a Frame.")

    def vector(self):
        return np.concatenate([self.linear, self.angular])

    @classmethod
    def from_vector(cls, values, frame):
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.shape != (6,):
            raise KinematicsError(f"A twist needs six components, got {values.shape}.")
        return cls(values[:3], values[3:], frame)

    @classmethod
    def zero(cls, frame):
        return cls(np.zeros(3), np.zeros(3), frame)


@dataclass
class Wrench:
    force: np.ndarray
    torque: np.ndarray
    frame: Frame

    def __post_init__(self):
        self.force = _three_vector(self.force, "Wrench force")
        self.torque = _three_vector(self.torque, "Wrench torque")
        if not isinstance(self.frame, Frame):
            raise KinematicsError("Wrench frame must be a Frame.")

    def vector(self):
        return np.concatenate([self.force, self.torque])

    @classmethod
    def from_vector(cls, values, frame):
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.shape != (6,):
            raise KinematicsError(f"A wrench needs six components, got {values.shape}.")
        return cls(values[:3], values[3:], frame)

    @classmethod
    def zero(cls, frame):
        return cls(np.zeros(3), np.zeros(3), frame)


@dataclass
class GraspGeometry:
    r: float
    theta: float
    z_dg: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        _check_finite(r=self.r, theta=self.theta, z_dg=self.z_dg, omega=self.omega)
        if self.r <= 0.0:
            raise KinematicsError(f"Grasp radius must be positive, got {self.r}.")


@dataclass
class Pose:
    position: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def quaternion(self):
        """
        Orientation as a unit quaternion ordered (w, x, y, z).
        """
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        return np.array([w, x, y, z])


def _check_finite(**values):
    for name, value in values.items():
        if not math.isfinite(value):
            raise KinematicsError(f"{name} must be finite, got {value}.")


def clamp_theta(theta):
    return min(max(theta, -THETA_LIMIT), THETA_LIMIT)


def hat(w):
    x, y, z = w
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def rotation_about_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0],
                     [s, c, 0.0],
                     [0.0, 0.0, 1.0]])


def rotation_door_to_gripper(theta):
    """
    Rotation of the gripper frame with respect to the door frame for grasp angle *theta*.
    """
    s, c = math.sin(theta), math.cos(theta)
    return np.array([[-1.0, 0.0, 0.0],
                     [0.0, -s, -c],
                     [0.0, -c, s]])


def grasp_from_rotation(rotation_dg):
    """
    Recover the grasp angle from a door-to-gripper rotation, the inverse of :func:`rotation_door_to_gripper`.
    """
    r = rotation_dg
    return math.atan2(r[2, 2] - r[1, 1], -(r[1, 2] + r[2, 1]))


def twist_from_action(r, theta, omega):
    """
    Gripper twist, in the gripper frame, that keeps the gripper fixed to a door turning at *omega*
    when the grasp sits at radius *r* and angle *theta*.

    :param r: Distance from the gripper centre to the hinge axis (m).
    :param theta: Grasp angle (rad).
    :param omega: Door angular speed (rad/s).
    :return: Twist in the gripper frame.
    """
    _check_finite(r=r, theta=theta, omega=omega)
    if r <= 0.0:
        raise KinematicsError(f"Grasp radius must be positive, got {r}.")

    return Twist(omega * np.array([r, 0.0, 0.0]),
                 omega * np.array([0.0, -math.cos(theta), math.sin(theta)]),
                 Frame.GRIPPER)


def door_frame_velocity(omega, r):
    _check_finite(omega=omega, r=r)
    if r <= 0.0:
        raise KinematicsError(f"Grasp radius must be positive, got {r}.")

    return Twist(np.array([-omega * r, 0.0, 0.0]), np.array([0.0, 0.0, omega]), Frame.DOOR)


def transform_chain(r, theta, omega, z_dg=0.0):
    """
    Build the gripper twist by rotating the door-frame velocity of the grasp point into the gripper frame.
    Produces the same result as :func:`twist_from_action` by a different route.
    """
    _check_finite(r=r, theta=theta, omega=omega, z_dg=z_dg)
    if r <= 0.0:
        raise KinematicsError(f"Grasp radius must be positive, got {r}.")

    rotation_dg = rotation_door_to_gripper(theta)
    translation_dg = np.array([0.0, r, z_dg])
    angular_dg = np.array([0.0, 0.0, omega])
    linear_dg = np.cross(angular_dg, translation_dg)

    return Twist(rotation_dg.T @ linear_dg, rotation_dg.T @ angular_dg, Frame.GRIPPER)


def ideal_wrench(theta, force, torque):
    """
    Wrench felt in the gripper frame while turning the door at constant speed:
    a pure force along x_g and a torque about the hinge axis.
    """
    _check_finite(theta=theta, force=force, torque=torque)
    if force <= 0.0 or torque <= 0.0:
        raise KinematicsError(f"Ideal wrench needs positive force and torque, got F={force}, tau={torque}.")

    return Wrench(np.array([force, 0.0, 0.0]),
                  np.array([0.0, -torque * math.cos(theta), torque * math.sin(theta)]),
                  Frame.GRIPPER)


def gripper_pose_from_door(geometry, door_angle, hinge_position=None, hinge_rotation=None):
    """
    World pose of a gripper holding the door with *geometry* when the door is open by *door_angle*.

    :param geometry: The GraspGeometry of the grasp.
    :param door_angle: Door rotation about the hinge axis (rad).
    :param hinge_position: World position of the door frame origin, defaults to the world origin.
    :param hinge_rotation: World rotation of the closed door frame, defaults to identity.
    :return: Pose in the world frame.
    """
    hinge_position = np.zeros(3) if hinge_position is None else np.asarray(hinge_position, dtype=float)
    hinge_rotation = np.eye(3) if hinge_rotation is None else np.asarray(hinge_rotation, dtype=float)

    rotation_wd = hinge_rotation @ rotation_about_z(door_angle)
    position = hinge_position + rotation_wd @ np.array([0.0, geometry.r, geometry.z_dg])

    return Pose(position, rotation_wd @ rotation_door_to_gripper(geometry.theta))


def so3_log(rotation):
    """
    Rotation vector (axis times angle) of a rotation matrix.
    """
    return Rotation.from_matrix(rotation).as_rotvec()


def se3_integrate(position, rotation, linear_body, angular_body, dt):
    """
    Move a pose along a constant body twist for *dt* seconds using the exponential map.

    :return: Tuple of (position, rotation) after the motion.
    """
    w = np.asarray(angular_body, dtype=float)
    v = np.asarray(linear_body, dtype=float)
    speed = float(np.linalg.norm(w))
    if speed * dt < 1e-12:
        return position + rotation @ (v * dt), rotation

    angle = speed * dt
    W = hat(w)
    W2 = W @ W
    rotation_delta = Rotation.from_rotvec(w * dt).as_matrix()
    position_delta = (np.eye(3) * dt
                      + (1.0 - math.cos(angle)) / (speed * speed) * W
                      + (angle - math.sin(angle)) / (speed ** 3) * W2) @ v

    return position + rotation @ position_delta, rotation @ rotation_delta
