"""
Deterministic simulation of a cabinet door on a revolute joint, driven by a velocity-commanded gripper
through a compliant six-dimensional coupling that doubles as the force-torque sensor.
"""
import csv
import math

from dataclasses import dataclass

import numpy as np

from hinge.rl.config import pick
from hinge.rl.errors import SimulationError, EpisodeFinishedError
from hinge.rl.kinematics import (
    Frame, GraspGeometry, Pose, Twist, Wrench, clamp_theta, grasp_from_rotation, gripper_pose_from_door,
    rotation_about_z, rotation_door_to_gripper, se3_integrate, so3_log)
from hinge.rl.logger import HingeLogger

logger = HingeLogger.getLogger()

STATE_SCALE = np.array([20.0, 20.0, 20.0, 2.0, 2.0, 2.0, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2])
STATE_CLIP = 10.0


@dataclass
class SimConfig:
    control_dt: float = 0.01
    physics_substeps: int = 10
    max_steps: int = 500
    linear_stiffness: float = 5000.0
    angular_stiffness: float = 50.0
    damping_ratio: float = 1.0
    success_angle: float = math.radians(45.0)
    open_limit: float = math.radians(90.0)
    handle_inset: float = 0.04
    friction_scale: float = 1.0
    friction_smoothing: float = 1e-3
    sensor_noise: float = 0.0

    def __post_init__(self):
        if self.control_dt <= 0.0 or self.physics_substeps < 1:
            raise SimulationError("Control period and substep count must be positive.")
        if not 0 < self.max_steps <= 500:
            raise SimulationError(f"Episodes are limited to 500 control steps, got {self.max_steps}.")
        if self.linear_stiffness <= 0.0 or self.angular_stiffness <= 0.0 or self.damping_ratio < 0.0:
            raise SimulationError("Coupling stiffness must be positive and damping ratio non-negative.")
        if self.sensor_noise < 0.0:
            raise SimulationError("Sensor noise must be non-negative.")

    @classmethod
    def from_parameters(cls, parameters):
        return cls(**pick(parameters, cls, "sim_"))


@dataclass
class DoorState:
    angle: float
    angular_velocity: float


@dataclass
class GripperState:
    """
    Gripper pose and twist, both in the world frame.
    """
    position: np.ndarray
    rotation: np.ndarray
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray

    def pose(self):
        return Pose(self.position.copy(), self.rotation.copy())

    def twist(self):
        return Twist(self.linear_velocity, self.angular_velocity, Frame.WORLD)


@dataclass
class Observation:
    s: np.ndarray
    step_index: int
    door_angle: float

    def wrench(self):
        return Wrench.from_vector(self.s[:6], Frame.GRIPPER)

    def twist(self):
        return Twist.from_vector(self.s[6:], Frame.WORLD)


def scale_state(s):
    """
    Network input form of a raw 12-vector state: divided by STATE_SCALE and clipped to +/-STATE_CLIP.
    Accepts a single state or a (..., 12) array.
    """
    return np.clip(np.asarray(s, dtype=float) / STATE_SCALE, -STATE_CLIP, STATE_CLIP)


def door_inertia(e):
    """
    Mass and moment of inertia about the hinge of a uniform panel hinged on its vertical edge.

    :return: Tuple of (mass kg, inertia kg m^2).
    """
    mass = e.density * e.length * e.width * e.thickness
    return mass, mass * e.width ** 2 / 3.0 + mass * e.thickness ** 2 / 12.0


class DoorSimulator(object):
    """
    One door and one gripper. The gripper is a kinematic velocity source, the door integrates the
    coupling torque about its hinge with semi-implicit Euler substeps.
    """

    def __init__(self, config=None):
        self._config = SimConfig() if config is None else config
        self._door = None
        self._gripper = None
        self._command = None
        self._step_index = 0
        self._done = True
        self._rng = None
        self._applied = None
        self._hinge_torque = 0.0

    def get_door_state(self):
        return DoorState(self._door.angle, self._door.angular_velocity)

    def get_inertia(self):
        return self._inertia

    def get_grasp(self):
        return self._grasp

    def is_done(self):
        return self._done

    def reset(self, e, rng=None):
        """
        Close the door, attach the gripper at the handle and return the first observation.

        :param e: EnvParams of the door.
        :param rng: numpy Generator used only for sensor noise.
        :return: Observation.
        """
        config = self._config
        self._rng = rng if rng is not None else np.random.default_rng(0)

        self._hinge_rotation = e.rotation_matrix()
        self._hinge_position = (np.array([e.position_x, e.position_y, e.position_z])
                                + self._hinge_rotation @ np.array([0.0, 0.0, e.height]))
        self._hinge_axis = self._hinge_rotation[:, 2].copy()
        self._mass, self._inertia = door_inertia(e)
        self._damping = e.damping
        self._friction = e.friction * config.friction_scale

        r = e.width - config.handle_inset
        if r <= 0.0:
            raise SimulationError(f"Door width {e.width} leaves no room for the handle inset {config.handle_inset}.")
        self._grasp = GraspGeometry(r, clamp_theta(e.theta_init))
        self._anchor_translation = np.array([0.0, r, self._grasp.z_dg])
        self._anchor_rotation = rotation_door_to_gripper(self._grasp.theta)

        self._linear_damping = 2.0 * config.damping_ratio * math.sqrt(config.linear_stiffness * self._inertia / r ** 2)
        self._angular_damping = 2.0 * config.damping_ratio * math.sqrt(config.angular_stiffness * self._inertia)

        pose = gripper_pose_from_door(self._grasp, 0.0, self._hinge_position, self._hinge_rotation)
        self._door = DoorState(0.0, 0.0)
        self._gripper = GripperState(pose.position, pose.rotation, np.zeros(3), np.zeros(3))
        self._command = Twist.zero(Frame.GRIPPER)
        self._step_index = 0
        self._done = False
        self._couple()

        logger.debug(f"Door reset: mass {self._mass:.4f} kg, inertia {self._inertia:.6f} kg m^2, r {r:.4f} m.")
        return self._observe()

    def step(self, action_twist):
        """
        Apply a gripper-frame twist for one control period.

        :param action_twist: Twist in the gripper frame.
        :return: Tuple of (Observation, done, info).
        """
        if self._door is None:
            raise SimulationError("Simulator must be reset before stepping.")
        if self._done:
            raise EpisodeFinishedError("Episode has finished, reset before stepping again.")
        if action_twist.frame != Frame.GRIPPER:
            raise SimulationError(f"Commanded twist must be in the gripper frame, got {action_twist.frame}.")

        self._command = action_twist
        h = self._config.control_dt / self._config.physics_substeps
        for _ in range(self._config.physics_substeps):
            self._substep(h)

        self._step_index += 1
        if not (math.isfinite(self._door.angle) and math.isfinite(self._door.angular_velocity)):
            raise SimulationError("Door state became non-finite.")

        observation = self._observe()
        self._done = (self._step_index >= self._config.max_steps
                      or abs(self._door.angle) >= self._config.open_limit)
        r, theta = self.ground_truth()
        info = {
            "door_angle": self._door.angle,
            "door_velocity": self._door.angular_velocity,
            "success": self.success(),
            "r": r,
            "theta": theta,
            "hinge_torque": self._hinge_torque,
            "step": self._step_index,
        }

        return observation, self._done, info

    def _substep(self, h):
        g = self._gripper
        v_body, w_body = self._command.linear, self._command.angular
        g.position, g.rotation = se3_integrate(g.position, g.rotation, v_body, w_body, h)
        g.linear_velocity = g.rotation @ v_body
        g.angular_velocity = g.rotation @ w_body

        hinge_torque = self._couple()

        door = self._door
        inertia = self._inertia
        velocity = door.angular_velocity + h * hinge_torque / inertia
        friction_impulse = h * self._friction * math.tanh(velocity / self._config.friction_smoothing) / inertia
        velocity = 0.0 if abs(friction_impulse) >= abs(velocity) else velocity - friction_impulse
        velocity /= 1.0 + h * self._damping / inertia

        door.angular_velocity = velocity
        door.angle += h * velocity

    def _door_rotation(self):
        return self._hinge_rotation @ rotation_about_z(self._door.angle)

    def _anchor(self):
        rotation_wd = self._door_rotation()
        position = self._hinge_position + rotation_wd @ self._anchor_translation
        rotation = rotation_wd @ self._anchor_rotation
        angular_velocity = self._door.angular_velocity * self._hinge_axis
        linear_velocity = np.cross(angular_velocity, position - self._hinge_position)
        return position, rotation, linear_velocity, angular_velocity

    def _coupling(self):
        """
        Force and torque the coupling applies to the door at the anchor point, world frame.
        """
        config = self._config
        g = self._gripper
        position, rotation, linear_velocity, angular_velocity = self._anchor()
        force = (config.linear_stiffness * (g.position - position)
                 + self._linear_damping * (g.linear_velocity - linear_velocity))
        torque = (config.angular_stiffness * so3_log(g.rotation @ rotation.T)
                  + self._angular_damping * (g.angular_velocity - angular_velocity))
        return force, torque, position

    def _couple(self):
        """
        Evaluate the coupling for the current gripper and door states and keep it as the applied wrench.

        :return: Torque about the hinge axis.
        """
        force, torque, anchor_position = self._coupling()
        self._applied = (force, torque, anchor_position)
        self._hinge_torque = float(self._hinge_axis @ (torque + np.cross(anchor_position - self._hinge_position, force)))
        return self._hinge_torque

    def get_hinge_torque(self):
        return self._hinge_torque

    def sensor_wrench(self):
        """
        Wrench the gripper exerted on the door during the last substep, referenced at the gripper origin,
        in the gripper frame. The gripper receives the negation of this wrench.
        """
        g = self._gripper
        force, torque, anchor_position = self._applied
        torque_at_gripper = torque + np.cross(anchor_position - g.position, force)
        return Wrench(g.rotation.T @ force, g.rotation.T @ torque_at_gripper, Frame.GRIPPER)

    def coupling_wrenches_world(self):
        """
        Wrench on the gripper and wrench on the door, both in the world frame about the world origin.

        :return: Tuple of (gripper Wrench, door Wrench).
        """
        g = self._gripper
        force, torque, anchor_position = self._applied
        on_door = Wrench(force, torque + np.cross(anchor_position, force), Frame.WORLD)
        torque_on_gripper = -(torque + np.cross(anchor_position - g.position, force))
        on_gripper = Wrench(-force, torque_on_gripper + np.cross(g.position, -force), Frame.WORLD)
        return on_gripper, on_door

    def kinetic_energy(self):
        return 0.5 * self._inertia * self._door.angular_velocity ** 2

    def mechanical_energy(self):
        """
        Door kinetic energy plus the energy stored in the coupling springs.
        """
        config = self._config
        g = self._gripper
        position, rotation, _, _ = self._anchor()
        stretch = g.position - position
        twist = so3_log(g.rotation @ rotation.T)
        potential = 0.5 * config.linear_stiffness * (stretch @ stretch) + 0.5 * config.angular_stiffness * (twist @ twist)
        return self.kinetic_energy() + potential

    def success(self):
        return abs(self._door.angle) > self._config.success_angle

    def ground_truth(self):
        """
        Current hinge radius and grasp angle measured from the gripper pose relative to the door.

        :return: Tuple of (r, theta).
        """
        rotation_wd = self._door_rotation()
        relative = rotation_wd.T @ (self._gripper.position - self._hinge_position)
        r = math.hypot(relative[0], relative[1])
        theta = grasp_from_rotation(rotation_wd.T @ self._gripper.rotation)
        return r, theta

    def _observe(self):
        wrench = self.sensor_wrench().vector()
        if self._config.sensor_noise > 0.0:
            wrench = wrench + self._rng.normal(0.0, self._config.sensor_noise, size=6)
        twist = self._gripper.twist().vector()
        s = np.concatenate([wrench, twist])
        if not np.all(np.isfinite(s)):
            raise SimulationError("Observation became non-finite.")
        return Observation(s, self._step_index, self._door.angle)


def trajectory_header(action_size=2):
    return (["step", "door_angle"] + [f"s{i}" for i in range(12)]
            + [f"a{i}" for i in range(action_size)] + ["reward"])


class TrajectoryWriter(object):
    """
    Writes one CSV row per control step: step, door angle, raw state, action and reward.
    """

    def __init__(self, filename, action_size=2, header=""):
        self._filename = filename
        self._action_size = action_size
        self._header = header
        self._file = None
        self._writer = None

    def __enter__(self):
        self._file = open(self._filename, 'w', newline='')
        self._file.write(self._header)
        self._writer = csv.writer(self._file)
        self._writer.writerow(trajectory_header(self._action_size))
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self._file.close()
        self._file = None

    def write(self, step, door_angle, s, action, reward):
        action = np.asarray(action, dtype=float).reshape(-1)
        if action.shape != (self._action_size,):
            raise SimulationError(f"Trajectory action needs {self._action_size} values, got {action.shape}.")
        self._writer.writerow([step, repr(float(door_angle))] + [repr(float(v)) for v in s]
                              + [repr(float(v)) for v in action] + [repr(float(reward))])


def write_trajectory(filename, rows, action_size=2, header=""):
    """
    :param rows: Iterable of (step, door_angle, s, action, reward) tuples.
    :param header: Optional comment block written before the column names.
    """
    with TrajectoryWriter(filename, action_size, header) as writer:
        for row in rows:
            writer.write(*row)


def read_trajectory(filename):
    """
    :return: A *dict* of column name to numpy array.
    """
    with open(filename, 'r', newline='') as f:
        reader = csv.reader(line for line in f if not line.startswith("#"))
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]

    table = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: table[:, i] for i, name in enumerate(header)}
