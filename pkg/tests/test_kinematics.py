import math
import unittest

import numpy as np

from hinge.rl.errors import KinematicsError
from hinge.rl.kinematics import (Frame, GraspGeometry, THETA_LIMIT, Twist, Wrench, clamp_theta, door_frame_velocity,
                                 grasp_from_rotation, gripper_pose_from_door, ideal_wrench, rotation_about_z,
                                 rotation_door_to_gripper, se3_integrate, so3_log, transform_chain, twist_from_action)


class Kinematics(unittest.TestCase):

    def test_twist_from_action(self):
        twist = twist_from_action(1.0, 0.0, 1.0)
        self.assertEqual(Frame.GRIPPER, twist.frame)
        np.testing.assert_allclose([1.0, 0.0, 0.0], twist.linear)
        np.testing.assert_allclose([0.0, -1.0, 0.0], twist.angular)

        twist = twist_from_action(0.3, math.pi / 2, -0.2)
        np.testing.assert_allclose([-0.06, 0.0, 0.0], twist.linear, atol=1e-15)
        np.testing.assert_allclose([0.0, 0.0, -0.2], twist.angular, atol=1e-15)

    def test_twist_from_action_invalid(self):
        with self.assertRaises(KinematicsError):
            twist_from_action(0.0, 0.1, 0.2)
        with self.assertRaises(KinematicsError):
            twist_from_action(-0.5, 0.1, 0.2)
        with self.assertRaises(KinematicsError):
            twist_from_action(0.5, math.nan, 0.2)
        with self.assertRaises(KinematicsError):
            twist_from_action(0.5, 0.1, math.inf)

    def test_twist_from_action_linear_in_speed(self):
        base = twist_from_action(0.4, 0.3, 0.25).vector()
        scaled = twist_from_action(0.4, 0.3, -0.75).vector()
        np.testing.assert_allclose(-3.0 * base, scaled, atol=1e-15)

    def test_transform_chain_matches_closed_form(self):
        rng = np.random.default_rng(7)
        inputs = np.column_stack([rng.uniform(0.05, 1.0, 10000), rng.uniform(-1.5, 1.5, 10000),
                                  rng.uniform(-1.0, 1.0, 10000), rng.uniform(-0.5, 0.5, 10000)])
        closed = np.array([twist_from_action(r, theta, omega).vector() for r, theta, omega, _ in inputs])
        chain = np.array([transform_chain(r, theta, omega, z_dg=z_dg).vector() for r, theta, omega, z_dg in inputs])
        np.testing.assert_allclose(closed, chain, rtol=0.0, atol=1e-12)

        np.testing.assert_allclose(twist_from_action(0.5, -0.3, 0.1).vector(),
                                   transform_chain(0.5, -0.3, 0.1).vector(), atol=1e-12)

    def test_rotation_door_to_gripper(self):
        np.testing.assert_allclose([[-1, 0, 0], [0, 0, -1], [0, -1, 0]], rotation_door_to_gripper(0.0), atol=1e-15)
        np.testing.assert_allclose([[-1, 0, 0], [0, -1, 0], [0, 0, 1]], rotation_door_to_gripper(math.pi / 2),
                                   atol=1e-15)
        for theta in np.linspace(-3.0, 3.0, 25):
            rotation = rotation_door_to_gripper(theta)
            self.assertLess(np.abs(rotation @ rotation.T - np.eye(3)).max(), 1e-12)
            self.assertAlmostEqual(theta, grasp_from_rotation(rotation), places=12)

    def test_door_frame_velocity(self):
        twist = door_frame_velocity(1.0, 1.0)
        self.assertEqual(Frame.DOOR, twist.frame)
        np.testing.assert_allclose([-1.0, 0.0, 0.0, 0.0, 0.0, 1.0], twist.vector())
        np.testing.assert_allclose(np.zeros(6), door_frame_velocity(0.0, 0.3).vector())
        np.testing.assert_allclose([0.08, 0.0, 0.0, 0.0, 0.0, -0.2], door_frame_velocity(-0.2, 0.4).vector())
        with self.assertRaises(KinematicsError):
            door_frame_velocity(0.1, 0.0)

    def test_ideal_wrench(self):
        wrench = ideal_wrench(0.0, 10.0, 2.0)
        np.testing.assert_allclose([10.0, 0.0, 0.0], wrench.force)
        np.testing.assert_allclose([0.0, -2.0, 0.0], wrench.torque)

        wrench = ideal_wrench(math.pi / 4, 1.0, 1.0)
        np.testing.assert_allclose([0.0, -math.sqrt(0.5), math.sqrt(0.5)], wrench.torque, atol=1e-15)

        for theta in (-0.3, 0.1, 0.3, 1.2):
            wrench = ideal_wrench(theta, 5.0, 1.5)
            self.assertAlmostEqual(-math.tan(theta), wrench.torque[2] / wrench.torque[1], places=12)

        with self.assertRaises(KinematicsError):
            ideal_wrench(0.1, 0.0, 1.0)
        with self.assertRaises(KinematicsError):
            ideal_wrench(0.1, 1.0, -1.0)

    def test_gripper_pose_from_door(self):
        geometry = GraspGeometry(0.6, 0.2, z_dg=0.1)
        hinge = np.array([0.5, -0.2, 1.0])
        pose = gripper_pose_from_door(geometry, 0.0, hinge)
        np.testing.assert_allclose(hinge + [0.0, 0.6, 0.1], pose.position)
        np.testing.assert_allclose(rotation_door_to_gripper(0.2), pose.rotation)

        pose = gripper_pose_from_door(geometry, math.pi / 2, hinge)
        np.testing.assert_allclose(hinge + [-0.6, 0.0, 0.1], pose.position, atol=1e-15)

        hinge_rotation = rotation_about_z(0.7)
        for angle in np.linspace(-1.5, 1.5, 13):
            pose = gripper_pose_from_door(geometry, angle, hinge, hinge_rotation)
            offset = pose.position - hinge
            self.assertAlmostEqual(0.6, math.hypot(offset[0], offset[1]), places=12)
            self.assertAlmostEqual(0.1, offset[2], places=12)

    def test_pose_quaternion(self):
        pose = gripper_pose_from_door(GraspGeometry(0.5, 0.0), 0.0)
        quaternion = pose.quaternion()
        self.assertAlmostEqual(1.0, float(np.linalg.norm(quaternion)), places=12)

    def test_grasp_geometry(self):
        with self.assertRaises(KinematicsError):
            GraspGeometry(0.0, 0.1)
        with self.assertRaises(KinematicsError):
            GraspGeometry(0.5, math.nan)

    def test_clamp_theta(self):
        self.assertEqual(0.2, clamp_theta(0.2))
        self.assertEqual(THETA_LIMIT, clamp_theta(2.0))
        self.assertEqual(-THETA_LIMIT, clamp_theta(-math.pi / 2))

    def test_vectors(self):
        twist = Twist.from_vector([1, 2, 3, 4, 5, 6], Frame.WORLD)
        np.testing.assert_allclose([1, 2, 3], twist.linear)
        np.testing.assert_allclose([4, 5, 6], twist.angular)
        np.testing.assert_allclose(np.zeros(6), Wrench.zero(Frame.GRIPPER).vector())
        with self.assertRaises(KinematicsError):
            Twist.from_vector([1, 2, 3], Frame.WORLD)
        with self.assertRaises(KinematicsError):
            Wrench([1.0, math.nan, 0.0], [0.0, 0.0, 0.0], Frame.GRIPPER)
        with self.assertRaises(KinematicsError):
            Wrench([1.0, 0.0, 0.0], [0.0, 0.0, 0.0], "g")

    def test_so3_log(self):
        np.testing.assert_allclose(np.zeros(3), so3_log(np.eye(3)))
        np.testing.assert_allclose([0.0, 0.0, 0.4], so3_log(rotation_about_z(0.4)), atol=1e-12)
        np.testing.assert_allclose([0.0, 0.0, -1.1], so3_log(rotation_about_z(-1.1)), atol=1e-12)

    def test_se3_integrate_follows_hinge_circle(self):
        # The ideal twist keeps the gripper on the circle of radius r about the hinge.
        r, theta, omega = 0.7, 0.25, -0.3
        geometry = GraspGeometry(r, theta)
        pose = gripper_pose_from_door(geometry, 0.0)
        twist = twist_from_action(r, theta, omega)
        position, rotation = pose.position, pose.rotation
        for _ in range(100):
            position, rotation = se3_integrate(position, rotation, twist.linear, twist.angular, 0.01)

        expected = gripper_pose_from_door(geometry, omega * 1.0)
        np.testing.assert_allclose(expected.position, position, atol=1e-10)
        np.testing.assert_allclose(expected.rotation, rotation, atol=1e-10)

    def test_se3_integrate_pure_translation(self):
        position, rotation = se3_integrate(np.zeros(3), np.eye(3), [0.1, 0.0, -0.2], np.zeros(3), 0.5)
        np.testing.assert_allclose([0.05, 0.0, -0.1], position)
        np.testing.assert_allclose(np.eye(3), rotation)


if __name__ == "__main__":
    unittest.main()
