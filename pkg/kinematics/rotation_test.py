import errors
from kinematics import rotation

import math
import unittest

import numpy as np


def _quaternion_matrix(axis, angle):
  """Rotation matrix of the unit quaternion (cos(a/2), sin(a/2) axis)."""
  w = math.cos(angle / 2)
  x, y, z = np.asarray(axis) * math.sin(angle / 2)
  return np.array([
    [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
    [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
    [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
  ])


def _random_axis(rng):
  v = rng.normal(size=3)
  return v / np.linalg.norm(v)


class TestRotation(unittest.TestCase):
  def setUp(self):
    self.rng = np.random.default_rng(7)

  def testZeroAngleIsIdentity(self):
    r = rotation.rodrigues(np.array([0.0, 0.0, 1.0]), 0.0)
    np.testing.assert_array_equal(r, np.eye(3))

  def testQuarterTurnAboutZ(self):
    r = rotation.rodrigues(np.array([0.0, 0.0, 1.0]), math.pi / 2)
    np.testing.assert_allclose(r @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-15)

  def testHalfTurnAboutX(self):
    r = rotation.rodrigues(np.array([1.0, 0.0, 0.0]), math.pi)
    np.testing.assert_allclose(r, np.diag([1.0, -1.0, -1.0]), atol=1e-15)

  def testOrthonormal(self):
    rs = np.array([rotation.rodrigues(_random_axis(self.rng), self.rng.uniform(-10, 10))
                   for _ in range(10000)])
    np.testing.assert_allclose(np.einsum('nji,njk->nik', rs, rs), np.broadcast_to(np.eye(3), rs.shape),
                               atol=1e-9)
    np.testing.assert_allclose(np.linalg.det(rs), 1.0, atol=1e-9)
    for r in rs[:500]:
      self.assertTrue(rotation.is_rotation(r))

  def testAdditiveOnSharedAxis(self):
    for _ in range(200):
      axis = _random_axis(self.rng)
      a, b = self.rng.uniform(-3, 3, size=2)
      np.testing.assert_allclose(
        rotation.rodrigues(axis, a) @ rotation.rodrigues(axis, b),
        rotation.rodrigues(axis, a + b), atol=1e-9)

  def testMatchesQuaternion(self):
    for _ in range(500):
      axis = _random_axis(self.rng)
      angle = self.rng.uniform(-math.pi, math.pi)
      np.testing.assert_allclose(
        rotation.rodrigues(axis, angle), _quaternion_matrix(axis, angle), atol=1e-12)

  def testRejectsNonUnitAxis(self):
    with self.assertRaises(errors.InvalidArgumentError):
      rotation.rodrigues(np.array([1.0, 1.0, 0.0]), 0.3)
    with self.assertRaises(errors.InvalidArgumentError):
      rotation.rodrigues(np.zeros(3), 0.3)

  def testRejectsNonFinite(self):
    with self.assertRaises(errors.InvalidArgumentError):
      rotation.rodrigues(np.array([np.nan, 0.0, 1.0]), 0.3)
    with self.assertRaises(errors.InvalidArgumentError):
      rotation.rodrigues(np.array([0.0, 0.0, 1.0]), np.inf)

  def testAxisAngleRoundTrip(self):
    np.testing.assert_array_equal(rotation.axis_angle_to_matrix(np.zeros(3)), np.eye(3))
    for _ in range(100):
      theta = _random_axis(self.rng) * self.rng.uniform(0.01, 3.0)
      back = rotation.matrix_to_axis_angle(rotation.axis_angle_to_matrix(theta))
      np.testing.assert_allclose(back, theta, atol=1e-9)

  def testRotationAngle(self):
    r = rotation.rodrigues(_random_axis(self.rng), 0.7)
    self.assertAlmostEqual(rotation.rotation_angle(r), 0.7, places=9)
    self.assertEqual(rotation.rotation_angle(np.eye(3)), 0.0)

  def testSkewIsCrossProduct(self):
    a, b = self.rng.normal(size=(2, 3))
    np.testing.assert_allclose(rotation.skew(a) @ b, np.cross(a, b), atol=1e-15)


if __name__ == '__main__':
  unittest.main()
