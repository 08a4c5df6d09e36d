"""Contact-region pseudo-labels on object point clouds, and image feature pooling.

Each object point gets one of 15 contact types: the body part (1..14) of the
nearest human-mesh vertex when that vertex is closer than the threshold, and
NO_CONTACT (15) otherwise.
"""
import camera as camera_lib
import errors
from kinematics import skeleton

import logging
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np
import prometheus_client                        # type: ignore[import]
from scipy.spatial import cKDTree               # type: ignore[import]


# Metrics
LABELLED_POINTS = prometheus_client.Counter(
  'hoik_contact_labelled_points_total',
  'Object points labelled',
  ['kind'])

NEAREST_LATENCY = prometheus_client.Summary(
  'hoik_contact_nearest_seconds',
  'Time to answer one batch of nearest-vertex queries')

DEFAULT_THRESHOLD = 0.04
DEFAULT_WINDOW = 7
CRR_EPS0 = 0.006
CLASS_COUNT = skeleton.NO_CONTACT

# Feature grids are a quarter of the image resolution.
GRID_STRIDE = 4

# Slack on the kd-tree radius when collecting tie candidates.
_TIE_SLACK = 1e-9


class PartLabeledMesh(NamedTuple):
  vertices: np.ndarray      # N x 3
  parts: np.ndarray         # N x 14 one-hot

  @classmethod
  def FromPartIndices(cls, vertices: np.ndarray, part_indices: Sequence[int]) -> 'PartLabeledMesh':
    part_indices = np.asarray(part_indices, dtype=np.int64)
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if part_indices.shape != (vertices.shape[0],):
      raise errors.InvalidArgumentError('need exactly one part label per vertex')
    if np.any(part_indices < 1) or np.any(part_indices > skeleton.PART_COUNT):
      raise errors.InvalidArgumentError(f'part labels must be in 1..{skeleton.PART_COUNT}')
    parts = np.zeros((vertices.shape[0], skeleton.PART_COUNT), dtype=np.int8)
    parts[np.arange(vertices.shape[0]), part_indices - 1] = 1
    return cls(vertices, parts)

  @property
  def part_indices(self) -> np.ndarray:
    return np.argmax(self.parts, axis=1) + 1


class LabeledPointCloud(NamedTuple):
  points: np.ndarray        # N x 3
  labels: np.ndarray        # N x 15 one-hot
  distances: np.ndarray     # N, distance to the nearest mesh vertex

  @property
  def class_indices(self) -> np.ndarray:
    return np.argmax(self.labels, axis=1) + 1

  @classmethod
  def FromClassIndices(cls, points: np.ndarray, classes: Sequence[int]) -> 'LabeledPointCloud':
    classes = np.asarray(classes, dtype=np.int64)
    labels = np.zeros((len(classes), CLASS_COUNT), dtype=np.int8)
    labels[np.arange(len(classes)), classes - 1] = 1
    return cls(np.asarray(points, dtype=np.float64).reshape(-1, 3), labels,
               np.full(len(classes), np.nan))


class FeatureGrid(NamedTuple):
  values: np.ndarray        # H/4 x W/4 x C

  @property
  def shape(self) -> Tuple[int, int]:
    return self.values.shape[0], self.values.shape[1]


def ValidateGrid(grid: FeatureGrid) -> None:
  v = grid.values
  if v.ndim != 3 or min(v.shape) < 1:
    raise errors.InvalidArgumentError(f'feature grid must be H x W x C, got {v.shape}')
  if not np.all(np.isfinite(v)):
    raise errors.InvalidArgumentError('feature grid has non-finite entries')


class NearestVertex:
  """Exact nearest-vertex queries backed by a kd-tree.

  Ties are broken towards the lowest vertex index, so results match a
  brute-force scan over the vertices in order. Immutable once built.
  """

  def __init__(self, vertices: np.ndarray, workers: int=1):
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if vertices.shape[0] == 0:
      raise errors.InvalidArgumentError('mesh has no vertices')
    self._vertices = vertices
    self._tree = cKDTree(vertices)
    self._workers = workers

  @NEAREST_LATENCY.time()
  def Query(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (distances, vertex indices) for every row of points."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    approx, _ = self._tree.query(points, k=1, workers=self._workers)
    radii = approx * (1.0 + _TIE_SLACK) + _TIE_SLACK
    candidates = self._tree.query_ball_point(points, r=radii, workers=self._workers)

    distances = np.empty(points.shape[0])
    indices = np.empty(points.shape[0], dtype=np.int64)
    for i, cand in enumerate(candidates):
      cand = np.sort(np.asarray(cand, dtype=np.int64))
      d = np.linalg.norm(self._vertices[cand] - points[i], axis=1)
      best = int(np.argmin(d))
      distances[i] = d[best]
      indices[i] = cand[best]
    return distances, indices


def nearest_distance(point: np.ndarray, mesh: PartLabeledMesh) -> Tuple[float, int]:
  distances, indices = NearestVertex(mesh.vertices).Query(point)
  return float(distances[0]), int(indices[0])


def contact_labels(points: np.ndarray, mesh: PartLabeledMesh, threshold: float=DEFAULT_THRESHOLD,
                   workers: int=1) -> LabeledPointCloud:
  """Labels object points by the part of the nearest mesh vertex.

  A point is in contact only when its distance is strictly below threshold.
  """
  points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
  if points.shape[0] == 0:
    raise errors.InvalidArgumentError('object point cloud is empty')

  distances, nearest = NearestVertex(mesh.vertices, workers).Query(points)
  touching = distances < threshold

  labels = np.zeros((points.shape[0], CLASS_COUNT), dtype=np.int8)
  labels[touching, :skeleton.PART_COUNT] = mesh.parts[nearest[touching]]
  labels[~touching, skeleton.NO_CONTACT - 1] = 1

  contact = int(np.count_nonzero(touching))
  LABELLED_POINTS.labels('contact').inc(contact)
  LABELLED_POINTS.labels('no_contact').inc(points.shape[0] - contact)
  logging.debug('Labelled %d object points: %d in contact (threshold %.3f m)',
    points.shape[0], contact, threshold)
  return LabeledPointCloud(points, labels, distances)


def contact_label_sequence(frames: Sequence[np.ndarray], meshes: Sequence[PartLabeledMesh],
                           threshold: float=DEFAULT_THRESHOLD, workers: int=1) -> List[LabeledPointCloud]:
  if len(frames) != len(meshes):
    raise errors.InvalidArgumentError(
      f'{len(frames)} object frames but {len(meshes)} human meshes')
  return [contact_labels(p, m, threshold, workers) for p, m in zip(frames, meshes)]


def project_point(point: np.ndarray, camera: camera_lib.Camera,
                  grid_shape: Tuple[int, int]) -> Tuple[int, int]:
  """Quarter-resolution (row, col) cell of a world point, clamped to the grid.

  Rounds half up.
  """
  u, v = camera.Project(point) / GRID_STRIDE
  rows, cols = grid_shape
  row = int(np.clip(np.floor(v + 0.5), 0, rows - 1))
  col = int(np.clip(np.floor(u + 0.5), 0, cols - 1))
  return row, col


def window_pool(grid: FeatureGrid, cell: Tuple[int, int], k: int) -> np.ndarray:
  """Mean feature over the k x k window centred on cell.

  Window cells outside the grid replicate the nearest border cell.
  """
  if k < 1 or k % 2 == 0:
    raise errors.InvalidArgumentError(f'window size must be odd and positive, got {k}')
  rows, cols = grid.shape
  row, col = cell
  if not (0 <= row < rows and 0 <= col < cols):
    raise errors.InvalidArgumentError(f'cell {cell} is outside the {rows}x{cols} grid')

  half = (k - 1) // 2
  offsets = np.arange(-half, half + 1)
  r = np.clip(row + offsets, 0, rows - 1)
  c = np.clip(col + offsets, 0, cols - 1)
  return grid.values[np.ix_(r, c)].mean(axis=(0, 1))


def fuse_point_features(points: np.ndarray, grid: FeatureGrid, camera: camera_lib.Camera,
                        k: int=DEFAULT_WINDOW) -> np.ndarray:
  """Per-point [xyz, pooled image feature], N x (3 + C)."""
  ValidateGrid(grid)
  points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
  fused = np.empty((points.shape[0], 3 + grid.values.shape[2]))
  for i, p in enumerate(points):
    fused[i, :3] = p
    fused[i, 3:] = window_pool(grid, project_point(p, camera, grid.shape), k)
  return fused


def crr_cross_entropy(predicted: np.ndarray, truth: np.ndarray, eps0: float=CRR_EPS0) -> float:
  """(eps0 / T) * sum over frames, points and classes of -truth * log(predicted).

  Arrays are T x N x 15, or N x 15 for a single frame. A prediction may be
  zero only on classes the truth does not select.
  """
  predicted = np.asarray(predicted, dtype=np.float64)
  truth = np.asarray(truth, dtype=np.float64)
  if predicted.ndim == 2:
    predicted = predicted[np.newaxis]
  if truth.ndim == 2:
    truth = truth[np.newaxis]

  if predicted.shape != truth.shape or predicted.ndim != 3 or predicted.shape[2] != CLASS_COUNT:
    raise errors.InvalidArgumentError(
      f'prediction {predicted.shape} and truth {truth.shape} must both be T x N x {CLASS_COUNT}')
  if np.any(predicted < 0):
    raise errors.InvalidArgumentError('predictions must be non-negative')
  if np.any(np.abs(predicted.sum(axis=2) - 1.0) > 1e-6):
    raise errors.InvalidArgumentError('each prediction must sum to 1')
  if np.any((truth != 0) & (truth != 1)) or np.any(truth.sum(axis=2) != 1):
    raise errors.InvalidArgumentError('truth labels must be one-hot')
  if np.any(predicted[truth == 1] <= 0):
    raise errors.InvalidArgumentError('zero probability assigned to a true class')

  picked = predicted[truth == 1]
  return float(eps0 / predicted.shape[0] * np.sum(-np.log(picked)))


def crr_window_sweep(predictions: Dict[int, np.ndarray], truth: np.ndarray,
                     eps0: float=CRR_EPS0) -> Dict[int, float]:
  """Contact cross-entropy for predictions made with different pooling window sizes."""
  return {k: crr_cross_entropy(p, truth, eps0) for k, p in sorted(predictions.items())}


def stick_figure_mesh(tree: skeleton.KinematicTree, positions: np.ndarray,
                      samples_per_bone: int=10) -> PartLabeledMesh:
  """Samples every bone; points on bone parent->child take the parent's part.

  Leaf joints add one vertex labelled with their own part.
  """
  vertices, parts = [], []
  steps = np.arange(samples_per_bone) / samples_per_bone
  for child, parent in enumerate(tree.parents):
    if parent == skeleton.ROOT_PARENT:
      continue
    bone = positions[child] - positions[parent]
    vertices.extend(positions[parent] + s * bone for s in steps)
    parts.extend([tree.part_of_joint[parent]] * samples_per_bone)

  for joint in range(tree.joint_count):
    if not tree.Children(joint):
      vertices.append(positions[joint])
      parts.append(tree.part_of_joint[joint])

  return PartLabeledMesh.FromPartIndices(np.array(vertices), parts)
