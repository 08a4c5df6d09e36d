"""Chamfer and Procrustes-aligned Chamfer distances between point sets.

Inputs are in meters; reported distances are in centimeters.
"""
import errors

from typing import Any, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import prometheus_client                        # type: ignore[import]
from scipy.spatial import cKDTree               # type: ignore[import]


# Metrics
METRIC_EVALUATIONS = prometheus_client.Counter(
  'hoik_metric_evaluations_total',
  'Metric computations',
  ['metric'])

CM_PER_METER = 100.0

# Relative size of the second singular value below which the point
# configuration is treated as collinear.
COLLINEAR_RATIO = 1e-10

CSV_FIELDS = ['sequence', 'frame', 'chamfer_cm', 'pa_chamfer_cm']


class Similarity(NamedTuple):
  scale: float
  rotation: np.ndarray      # 3 x 3, det +1
  translation: np.ndarray   # 3

  def Apply(self, points: np.ndarray) -> np.ndarray:
    return self.scale * np.asarray(points) @ self.rotation.T + self.translation

  def Dict(self) -> Dict[str, Any]:
    return {
      'scale': self.scale,
      'rotation': self.rotation.tolist(),
      'translation': self.translation.tolist(),
    }


class MetricReport(NamedTuple):
  chamfer_cm: float
  pa_chamfer_cm: float
  alignment: Similarity

  def Row(self, sequence: str='', frame: int=0) -> Dict[str, Any]:
    return {
      'sequence': sequence,
      'frame': frame,
      'chamfer_cm': self.chamfer_cm,
      'pa_chamfer_cm': self.pa_chamfer_cm,
    }

  # Stays last; see camera.Camera.Dict.
  def Dict(self) -> Dict[str, Any]:
    return {
      'chamfer_cm': self.chamfer_cm,
      'pa_chamfer_cm': self.pa_chamfer_cm,
      'alignment': self.alignment.Dict(),
    }


def _as_points(points: np.ndarray, what: str) -> np.ndarray:
  points = np.asarray(points, dtype=np.float64)
  if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] == 0:
    raise errors.InvalidArgumentError(f'{what} must be a non-empty N x 3 point set, got {points.shape}')
  if not np.all(np.isfinite(points)):
    raise errors.InvalidArgumentError(f'{what} has non-finite points')
  return points


def _mean_nearest(a: np.ndarray, b: np.ndarray) -> float:
  distances, _ = cKDTree(b).query(a, k=1)
  return float(np.mean(distances))


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
  """Symmetric mean nearest-neighbour distance, in cm."""
  a = _as_points(a, 'first point set')
  b = _as_points(b, 'second point set')
  METRIC_EVALUATIONS.labels('chamfer').inc()
  return 0.5 * (_mean_nearest(a, b) + _mean_nearest(b, a)) * CM_PER_METER


def procrustes_align(source: np.ndarray, target: np.ndarray,
                     correspondence: Optional[Sequence[Tuple[int, int]]]=None) -> Similarity:
  """Least-squares similarity taking source points onto their target partners.

  correspondence lists (source index, target index) pairs; by default row i
  of source pairs with row i of target. Reflections are corrected so the
  rotation always has det +1.

  Raises:
    DegenerateGeometryError for fewer than 3 pairs or collinear points.
  """
  source = _as_points(source, 'source')
  target = _as_points(target, 'target')
  if correspondence is None:
    if source.shape != target.shape:
      raise errors.InvalidArgumentError(
        f'source {source.shape} and target {target.shape} need a correspondence')
    x, y = source, target
  else:
    pairs = np.asarray(correspondence, dtype=np.int64).reshape(-1, 2)
    x, y = source[pairs[:, 0]], target[pairs[:, 1]]

  if x.shape[0] < 3:
    raise errors.DegenerateGeometryError('alignment needs at least 3 corresponding points')

  mu_x = x.mean(axis=0)
  mu_y = y.mean(axis=0)
  x0 = x - mu_x
  y0 = y - mu_y

  cov = y0.T @ x0 / x.shape[0]
  u, s, vt = np.linalg.svd(cov)
  if s[0] <= 0 or s[1] < COLLINEAR_RATIO * s[0]:
    raise errors.DegenerateGeometryError('corresponding points are collinear')

  d = np.ones(3)
  if np.linalg.det(u) * np.linalg.det(vt) < 0:
    d[2] = -1.0
  rot = u @ np.diag(d) @ vt

  var_x = np.sum(x0 * x0) / x.shape[0]
  scale = float(np.dot(s, d) / var_x)
  return Similarity(scale, rot, mu_y - scale * rot @ mu_x)


def pa_chamfer(predicted: np.ndarray, truth: np.ndarray) -> float:
  """Chamfer after aligning the prediction onto the truth vertex by vertex."""
  return evaluate(predicted, truth).pa_chamfer_cm


def evaluate(predicted: np.ndarray, truth: np.ndarray) -> MetricReport:
  alignment = procrustes_align(predicted, truth)
  METRIC_EVALUATIONS.labels('pa_chamfer').inc()
  return MetricReport(
    chamfer_cm=chamfer(predicted, truth),
    pa_chamfer_cm=chamfer(alignment.Apply(predicted), truth),
    alignment=alignment)
