"""File formats and scene assembly.

A scene JSON document bundles everything one command needs:

  {
    "skeleton": "path/to/skeleton.json",       optional
    "pose": {"theta": [[...]], "translation": [...]} or "pose.json",
    "object": [[x, y, z], ...] or "points.obj" / "points.bin" / "points.json",
    "human_mesh": {"vertices": ... , "parts": [...]} or {"stick_figure": 10},
    "camera": {"fx": ..., "fy": ..., "cx": ..., "cy": ..., "extrinsic": [[...]]},
    "root_keypoint": [u, v],                    optional
    "gt_pose": {...},                           optional
    "contacts": [{"part": 1, "targets": [[...]]}, ...]   optional
  }

Relative paths are resolved against the scene file's directory. All lengths
are meters.
"""
import camera as camera_lib
import contact
import errors
import evaluate
from ik import problem as pb
from kinematics import forward
from kinematics import skeleton

import csv
import io
import json
import logging
import os
import struct
from typing import Any, Dict, List, NamedTuple, Optional

import numpy as np
import prometheus_client    # type: ignore[import]


# Metrics
SCENE_LOAD = prometheus_client.Summary(
  'hoik_scene_load_seconds',
  'Time to load a scene')

POINTS_MAGIC = b'HOIP'
LABELS_MAGIC = b'HOIL'
LABELS_VERSION = 1

_POINTS_HEADER = struct.Struct('<4sI')
_LABELS_HEADER = struct.Struct('<4sII')


class Contact(NamedTuple):
  part: int
  targets: np.ndarray       # N x 3

  def Dict(self) -> Dict[str, Any]:
    return {'part': self.part, 'targets': self.targets.tolist()}


class Scene(NamedTuple):
  skeleton_path: str
  pose: forward.PoseState
  object_points: np.ndarray
  human_mesh: Optional[contact.PartLabeledMesh]
  camera: camera_lib.Camera
  root_keypoint: Optional[np.ndarray]
  gt_pose: Optional[forward.PoseState]
  contacts: List[Contact]

  def Dict(self) -> Dict[str, Any]:
    """Self-contained JSON view; every array is written inline."""
    d: Dict[str, Any] = {
      'skeleton': self.skeleton_path,
      'pose': PoseDict(self.pose),
      'object': self.object_points.tolist(),
      'camera': self.camera.Dict(),
      'contacts': [c.Dict() for c in self.contacts],
    }
    if self.human_mesh is not None:
      d['human_mesh'] = {
        'vertices': self.human_mesh.vertices.tolist(),
        'parts': self.human_mesh.part_indices.tolist(),
      }
    if self.root_keypoint is not None:
      d['root_keypoint'] = self.root_keypoint.tolist()
    if self.gt_pose is not None:
      d['gt_pose'] = PoseDict(self.gt_pose)
    return d


def PoseDict(pose: forward.PoseState) -> Dict[str, Any]:
  return {'theta': pose.theta.tolist(), 'translation': pose.translation.tolist()}


def PoseFromDict(data: Dict[str, Any]) -> forward.PoseState:
  try:
    theta = np.asarray(data['theta'], dtype=np.float64)
    translation = np.asarray(data.get('translation', [0.0, 0.0, 0.0]), dtype=np.float64)
  except (KeyError, TypeError, ValueError) as e:
    raise errors.InvalidArgumentError(f'malformed pose: {e!r}') from e
  if theta.ndim != 2 or theta.shape[1] != 3:
    raise errors.InvalidArgumentError(f'pose theta must be J x 3, got {theta.shape}')
  return forward.PoseState(theta, translation)


def _ReadJson(filename: str) -> Any:
  with open(filename) as f:
    try:
      return json.load(f)
    except json.JSONDecodeError as e:
      raise errors.ParseError(filename, e.msg, e.lineno) from e


def LoadPose(filename: str) -> forward.PoseState:
  try:
    return PoseFromDict(_ReadJson(filename))
  except errors.InvalidArgumentError as e:
    raise errors.ParseError(filename, str(e)) from e


def WritePose(filename: str, pose: forward.PoseState) -> None:
  with open(filename, 'w') as f:
    json.dump(PoseDict(pose), f, indent=2)


def LoadObj(filename: str) -> np.ndarray:
  """Vertex positions of a Wavefront OBJ file; other records are ignored."""
  vertices = []
  with open(filename) as f:
    for lineno, line in enumerate(f, start=1):
      fields = line.split()
      if not fields or fields[0] != 'v':
        continue
      if len(fields) < 4:
        raise errors.ParseError(filename, 'vertex needs three coordinates', lineno)
      try:
        vertices.append([float(x) for x in fields[1:4]])
      except ValueError as e:
        raise errors.ParseError(filename, f'bad vertex coordinate: {e}', lineno) from e

  logging.debug('Loaded "%s": %d vertices', filename, len(vertices))
  return np.array(vertices, dtype=np.float64).reshape(-1, 3)


def WriteObj(filename: str, vertices: np.ndarray) -> None:
  # %.17g round-trips a float64 exactly.
  vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
  with open(filename, 'w') as f:
    for x, y, z in vertices:
      f.write('v %.17g %.17g %.17g\n' % (x, y, z))


def LoadPointsBinary(filename: str) -> np.ndarray:
  with open(filename, 'rb') as f:
    data = f.read()
  if len(data) < _POINTS_HEADER.size:
    raise errors.ParseError(filename, 'truncated header')
  magic, count = _POINTS_HEADER.unpack_from(data)
  if magic != POINTS_MAGIC:
    raise errors.ParseError(filename, f'bad magic {magic!r}')
  body = data[_POINTS_HEADER.size:]
  if len(body) != count * 3 * 8:
    raise errors.ParseError(filename, f'expected {count} points, got {len(body)} bytes')
  return np.frombuffer(body, dtype='<f8').reshape(count, 3).astype(np.float64)


def WritePointsBinary(filename: str, points: np.ndarray) -> None:
  points = np.asarray(points, dtype='<f8').reshape(-1, 3)
  with open(filename, 'wb') as f:
    f.write(_POINTS_HEADER.pack(POINTS_MAGIC, points.shape[0]))
    f.write(points.tobytes())


def LoadPoints(filename: str) -> np.ndarray:
  """Point sets from .obj, .bin or .json files."""
  ext = os.path.splitext(filename)[1].lower()
  if ext == '.obj':
    return LoadObj(filename)
  if ext == '.bin':
    return LoadPointsBinary(filename)
  if ext == '.json':
    data = _ReadJson(filename)
    if isinstance(data, dict):
      data = data.get('points', [])
    return _Points(data, filename)
  raise errors.ParseError(filename, f'unsupported point file type "{ext}"')


def _Points(data: Any, where: str) -> np.ndarray:
  try:
    points = np.asarray(data, dtype=np.float64).reshape(-1, 3)
  except (TypeError, ValueError) as e:
    raise errors.ParseError(where, f'malformed point list: {e}') from e
  if not np.all(np.isfinite(points)):
    raise errors.ParseError(where, 'non-finite point coordinates')
  return points


def WriteLabels(filename: str, cloud: contact.LabeledPointCloud) -> None:
  """Writes labels as JSON (.json) or as the compact binary format."""
  classes = cloud.class_indices
  if filename.lower().endswith('.json'):
    with open(filename, 'w') as f:
      json.dump({
        'points': cloud.points.tolist(),
        'labels': classes.tolist(),
        'distances': cloud.distances.tolist(),
      }, f)
    return

  with open(filename, 'wb') as f:
    f.write(_LABELS_HEADER.pack(LABELS_MAGIC, LABELS_VERSION, len(classes)))
    f.write(classes.astype(np.uint8).tobytes())


def LoadLabels(filename: str) -> np.ndarray:
  """Class indices (1..15) from a label file of either format."""
  if filename.lower().endswith('.json'):
    classes = np.asarray(_ReadJson(filename)['labels'], dtype=np.int64)
  else:
    with open(filename, 'rb') as f:
      data = f.read()
    if len(data) < _LABELS_HEADER.size:
      raise errors.ParseError(filename, 'truncated header')
    magic, version, count = _LABELS_HEADER.unpack_from(data)
    if magic != LABELS_MAGIC or version != LABELS_VERSION:
      raise errors.ParseError(filename, f'unsupported label file {magic!r} v{version}')
    body = data[_LABELS_HEADER.size:]
    if len(body) != count:
      raise errors.ParseError(filename, f'expected {count} labels, got {len(body)}')
    classes = np.frombuffer(body, dtype=np.uint8).astype(np.int64)

  if np.any(classes < 1) or np.any(classes > contact.CLASS_COUNT):
    raise errors.ParseError(filename, f'labels must be in 1..{contact.CLASS_COUNT}')
  return classes


def LoadFeatureGrid(filename: str) -> contact.FeatureGrid:
  """An H/4 x W/4 x C image feature grid saved with numpy.save."""
  try:
    values = np.load(filename, allow_pickle=False)
  except (OSError, ValueError) as e:
    raise errors.ParseError(filename, f'unreadable feature grid: {e}') from e
  grid = contact.FeatureGrid(np.asarray(values, dtype=np.float64))
  try:
    contact.ValidateGrid(grid)
  except errors.InvalidArgumentError as e:
    raise errors.ParseError(filename, str(e)) from e
  return grid


def WriteFeatures(filename: str, features: np.ndarray) -> None:
  with open(filename, 'wb') as f:
    np.save(f, np.asarray(features, dtype=np.float64))


def ReportText(rows: List[Dict[str, Any]], fmt: str) -> str:
  """Report rows as CSV (column order of the first row) or JSON."""
  if fmt == 'json':
    return json.dumps(rows, indent=2) + '\n'
  if not rows:
    return ''
  out = io.StringIO()
  writer = csv.DictWriter(out, fieldnames=list(rows[0].keys()), lineterminator='\n')
  writer.writeheader()
  writer.writerows(rows)
  return out.getvalue()


def WriteReport(filename: str, rows: List[Dict[str, Any]], fmt: str) -> None:
  with open(filename, 'w', newline='') as f:
    f.write(ReportText(rows, fmt))


def ReadReport(filename: str) -> List[Dict[str, str]]:
  with open(filename, newline='') as f:
    return list(csv.DictReader(f))


def _Collect(classes: np.ndarray, points: np.ndarray) -> Dict[int, np.ndarray]:
  """Groups contact points by body part; no-contact points are dropped."""
  ret: Dict[int, List[np.ndarray]] = {}
  for c, p in zip(classes, points):
    c = int(c)
    if c == skeleton.NO_CONTACT:
      continue
    lst = ret.get(c, [])
    lst.append(p)
    ret[c] = lst
  return {c: np.array(v) for c, v in sorted(ret.items())}


def ContactsFromLabels(cloud: contact.LabeledPointCloud) -> List[Contact]:
  """One IK target set per contacted part, from labelled object points."""
  return [Contact(part, targets)
          for part, targets in _Collect(cloud.class_indices, cloud.points).items()]


class SceneLoader:
  """Loads a scene document and every file it references."""

  def __init__(self, filename: str, skeleton_path: Optional[str]=None):
    self._filename = filename
    self._base = os.path.dirname(os.path.abspath(filename))
    self._skeleton_override = skeleton_path

  @SCENE_LOAD.time()
  def Load(self) -> Scene:
    data = _ReadJson(self._filename)
    if not isinstance(data, dict):
      raise errors.ParseError(self._filename, 'scene must be a JSON object')

    try:
      skeleton_path = self._skeleton_override or self._Path(data.get('skeleton')) or skeleton.DefaultPath()
      pose = self._LoadPose(data['pose'])
      scene = Scene(
        skeleton_path=skeleton_path,
        pose=pose,
        object_points=self._LoadPoints(data.get('object', [])),
        human_mesh=self._LoadMesh(data.get('human_mesh'), skeleton_path, pose),
        camera=camera_lib.Camera.FromDict(data['camera']) if 'camera' in data else camera_lib.LookingAtBody(),
        root_keypoint=np.asarray(data['root_keypoint'], dtype=np.float64) if 'root_keypoint' in data else None,
        gt_pose=self._LoadPose(data['gt_pose']) if 'gt_pose' in data else None,
        contacts=[Contact(int(c['part']), _Points(c['targets'], self._filename))
                  for c in data.get('contacts', [])])
    except KeyError as e:
      raise errors.ParseError(self._filename, f'missing key {e}') from e
    except errors.InvalidArgumentError as e:
      raise errors.ParseError(self._filename, str(e)) from e

    logging.debug('Loaded scene "%s": %d object points, %d contacts',
      self._filename, scene.object_points.shape[0], len(scene.contacts))
    return scene

  def _Path(self, path: Optional[str]) -> Optional[str]:
    if not path:
      return None
    return path if os.path.isabs(path) else os.path.join(self._base, path)

  def _LoadPose(self, entry: Any) -> forward.PoseState:
    if isinstance(entry, str):
      return LoadPose(self._Path(entry) or entry)
    return PoseFromDict(entry)

  def _LoadPoints(self, entry: Any) -> np.ndarray:
    if isinstance(entry, str):
      return LoadPoints(self._Path(entry) or entry)
    return _Points(entry, self._filename)

  def _LoadMesh(self, entry: Any, skeleton_path: str,
                pose: forward.PoseState) -> Optional[contact.PartLabeledMesh]:
    if entry is None:
      return None
    if 'stick_figure' in entry:
      tree = skeleton.Load(skeleton_path)
      positions = forward.fk(tree, pose).positions
      return contact.stick_figure_mesh(tree, positions, int(entry['stick_figure']))

    vertices = self._LoadPoints(entry['vertices'])
    parts = entry['parts']
    if isinstance(parts, str):
      parts = _ReadJson(self._Path(parts) or parts)
    return contact.PartLabeledMesh.FromPartIndices(vertices, parts)


def Load(filename: str, skeleton_path: Optional[str]=None) -> Scene:
  return SceneLoader(filename, skeleton_path).Load()


def WriteScene(filename: str, scene: Scene) -> None:
  with open(filename, 'w') as f:
    json.dump(scene.Dict(), f, indent=2)


def MakeProblems(tree: skeleton.KinematicTree, scene: Scene, threshold: float=contact.DEFAULT_THRESHOLD,
                 workers: int=1) -> List[pb.IKProblem]:
  """IK problems for the scene's contacts.

  Without explicit contacts the object is labelled against the human mesh
  first. A missing root keypoint defaults to the projection of the current
  root, which keeps the root in place on screen.
  """
  contacts = scene.contacts
  if not contacts:
    if scene.human_mesh is None:
      raise errors.InvalidArgumentError('scene has neither contacts nor a human mesh')
    contacts = ContactsFromLabels(
      contact.contact_labels(scene.object_points, scene.human_mesh, threshold, workers))

  keypoint = scene.root_keypoint
  if keypoint is None:
    root = forward.fk(tree, scene.pose).positions[skeleton.ROOT]
    keypoint = scene.camera.Project(root)

  return [pb.IKProblem(scene.pose, c.targets, c.part, keypoint, scene.camera) for c in contacts]


def JointReport(tree: skeleton.KinematicTree, solved: forward.PoseState,
                truth: forward.PoseState) -> evaluate.MetricReport:
  """Chamfer metrics between solved and ground-truth joint positions."""
  return evaluate.evaluate(forward.fk(tree, solved).positions, forward.fk(tree, truth).positions)
