import errors

import numpy as np
from scipy.spatial.transform import Rotation    # type: ignore[import]


# Tolerance on |axis| for rodrigues().
UNIT_TOLERANCE = 1e-6


def skew(v: np.ndarray) -> np.ndarray:
  """Returns [v]x, the matrix such that skew(v) @ b == cross(v, b)."""
  x, y, z = v[0], v[1], v[2]
  return np.array([[0.0, -z, y],
                   [z, 0.0, -x],
                   [-y, x, 0.0]])


def rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
  """Rotation of `angle` radians about the unit vector `axis`.

  R = I + sin(angle) [axis]x + (1 - cos(angle)) [axis]x^2

  Raises:
    InvalidArgumentError if axis is not a finite unit 3-vector or angle is
    not finite.
  """
  axis = np.asarray(axis, dtype=np.float64)
  if axis.shape != (3,) or not np.all(np.isfinite(axis)):
    raise errors.InvalidArgumentError(f'axis must be a finite 3-vector, got {axis}')
  if abs(np.linalg.norm(axis) - 1.0) > UNIT_TOLERANCE:
    raise errors.InvalidArgumentError(f'axis must have unit norm, got |axis|={np.linalg.norm(axis)}')
  if not np.isfinite(angle):
    raise errors.InvalidArgumentError(f'angle must be finite, got {angle}')

  k = skew(axis)
  return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def axis_angle_to_matrix(theta: np.ndarray) -> np.ndarray:
  """Converts one axis-angle 3-vector to a rotation matrix.

  The zero vector maps to the identity.
  """
  theta = np.asarray(theta, dtype=np.float64)
  if theta.shape != (3,) or not np.all(np.isfinite(theta)):
    raise errors.InvalidArgumentError(f'theta must be a finite 3-vector, got {theta}')

  angle = np.linalg.norm(theta)
  if angle == 0.0:
    return np.eye(3)
  return rodrigues(theta / angle, angle)


def matrix_to_axis_angle(rot: np.ndarray) -> np.ndarray:
  """Inverse of axis_angle_to_matrix, with magnitude in [0, pi]."""
  return Rotation.from_matrix(rot).as_rotvec()


def rotation_angle(rot: np.ndarray) -> float:
  """Geodesic angle (radians) between `rot` and the identity."""
  c = (np.trace(rot) - 1.0) / 2.0
  return float(np.arccos(np.clip(c, -1.0, 1.0)))


def is_rotation(rot: np.ndarray, tol: float=1e-9) -> bool:
  return (np.allclose(rot.T @ rot, np.eye(3), atol=tol)
          and abs(np.linalg.det(rot) - 1.0) <= tol)


def make_transform(rot: np.ndarray, translation: np.ndarray) -> np.ndarray:
  """Assembles a 4x4 homogeneous transform."""
  t = np.eye(4)
  t[:3, :3] = rot
  t[:3, 3] = translation
  return t
