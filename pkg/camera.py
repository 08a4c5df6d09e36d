import errors

from typing import Any, Dict, NamedTuple

import numpy as np


# Points closer to the camera plane than this cannot be projected.
MIN_DEPTH = 1e-6


class Camera(NamedTuple):
  fx: float
  fy: float
  cx: float
  cy: float
  extrinsic: np.ndarray    # 4x4, world -> camera

  @classmethod
  def FromDict(cls, data: Dict[str, Any]) -> 'Camera':
    extrinsic = np.asarray(data.get('extrinsic', np.eye(4).tolist()), dtype=np.float64)
    if extrinsic.shape != (4, 4):
      raise errors.InvalidArgumentError(f'camera extrinsic must be 4x4, got {extrinsic.shape}')
    return cls(float(data['fx']), float(data['fy']), float(data['cx']), float(data['cy']),
               extrinsic)

  @property
  def rotation(self) -> np.ndarray:
    return self.extrinsic[:3, :3]

  @property
  def translation(self) -> np.ndarray:
    return self.extrinsic[:3, 3]

  def ToCamera(self, point: np.ndarray) -> np.ndarray:
    return self.rotation @ np.asarray(point, dtype=np.float64) + self.translation

  def Project(self, point: np.ndarray) -> np.ndarray:
    """Pinhole projection of a world point to pixels.

    Raises:
      ProjectionError if the point is not in front of the camera.
    """
    x, y, z = self.ToCamera(point)
    if not z > MIN_DEPTH:
      raise errors.ProjectionError(f'point {point} has depth {z} in camera frame')
    return np.array([self.fx * x / z + self.cx, self.fy * y / z + self.cy])

  # Last in the class body: defining it shadows typing.Dict for later annotations.
  def Dict(self) -> Dict[str, Any]:
    return {
      'fx': self.fx,
      'fy': self.fy,
      'cx': self.cx,
      'cy': self.cy,
      'extrinsic': self.extrinsic.tolist(),
    }


def LookingAtBody(distance: float=3.0, height: float=1.0) -> Camera:
  """A 640x480 camera on the +z axis looking back at a y-up body at the origin."""
  extrinsic = np.diag([1.0, -1.0, -1.0, 1.0])
  extrinsic[:3, 3] = [0.0, height, distance]
  return Camera(500.0, 500.0, 320.0, 240.0, extrinsic)
