"""Forward kinematics over the body skeleton.

fk() composes per-joint rotations from the root outwards. improved_fk()
additionally applies a twist-swing rotation on every rotation-type joint of
the active chain and a global translation increment.
"""
import errors
from kinematics import rotation
from kinematics import skeleton

import collections
import enum
from typing import List, NamedTuple

import numpy as np


# Minimum bone length for a well-defined twist direction.
MIN_BONE_LENGTH = 1e-8


class PoseState(NamedTuple):
  theta: np.ndarray         # joint_count x 3, axis-angle
  translation: np.ndarray   # 3

  @classmethod
  def Zero(cls, joint_count: int) -> 'PoseState':
    return cls(np.zeros((joint_count, 3)), np.zeros(3))


class JointType(enum.Enum):
  TARGET = 'target'
  ROTATION = 'rotation'
  TRANSLATION = 'translation'
  FIXED = 'fixed'


class ChainSpec(NamedTuple):
  chain: str
  joints: List[int]             # chain joints, root first
  target: int
  joint_types: List[JointType]  # indexed by joint

  @property
  def rotation_joints(self) -> List[int]:
    return [j for j in self.joints if self.joint_types[j] == JointType.ROTATION]


class TwistSwingParams(NamedTuple):
  joints: List[int]         # rotation-type joints, chain order
  phi: np.ndarray           # twist angles, radians
  alpha: np.ndarray         # swing angles, radians
  swing_axis: np.ndarray    # len(joints) x 3, unit rows
  delta_t: np.ndarray       # 3

  @classmethod
  def Zero(cls, joints: List[int]) -> 'TwistSwingParams':
    k = len(joints)
    axes = np.zeros((k, 3))
    axes[:, 0] = 1.0
    return cls(list(joints), np.zeros(k), np.zeros(k), axes, np.zeros(3))


class FKResult(NamedTuple):
  positions: np.ndarray     # joint_count x 3, includes the global translation
  transforms: np.ndarray    # joint_count x 4 x 4, excludes the global translation


class ImprovedFKResult(NamedTuple):
  positions: np.ndarray
  transforms: np.ndarray
  target_position: np.ndarray


def ValidatePose(tree: skeleton.KinematicTree, pose: PoseState) -> None:
  if pose.theta.shape != (tree.joint_count, 3):
    raise errors.InvalidArgumentError(
      f'theta has shape {pose.theta.shape}, expected ({tree.joint_count}, 3)')
  if pose.translation.shape != (3,):
    raise errors.InvalidArgumentError('translation must be a 3-vector')
  if not (np.all(np.isfinite(pose.theta)) and np.all(np.isfinite(pose.translation))):
    raise errors.InvalidArgumentError('pose has non-finite entries')
  if np.any(np.linalg.norm(pose.theta, axis=1) > np.pi + 1e-9):
    raise errors.InvalidArgumentError('axis-angle magnitudes must not exceed pi')


def ValidateTwistSwing(ts: TwistSwingParams, gamma: float) -> None:
  k = len(ts.joints)
  if ts.phi.shape != (k,) or ts.alpha.shape != (k,) or ts.swing_axis.shape != (k, 3):
    raise errors.InvalidArgumentError('twist-swing arrays do not match the joint list')
  if np.any(np.abs(ts.phi) > gamma + 1e-12) or np.any(np.abs(ts.alpha) > gamma + 1e-12):
    raise errors.InvalidArgumentError(f'twist/swing angles exceed gamma={gamma}')
  if k and np.any(np.abs(np.linalg.norm(ts.swing_axis, axis=1) - 1.0) > 1e-9):
    raise errors.InvalidArgumentError('swing axes must have unit norm')


def TopologicalOrder(tree: skeleton.KinematicTree) -> List[int]:
  """Joints ordered so that every parent precedes its children."""
  children = collections.defaultdict(list)
  for i, p in enumerate(tree.parents):
    if p != skeleton.ROOT_PARENT:
      children[p].append(i)

  order = []
  queue = collections.deque([skeleton.ROOT])
  while queue:
    j = queue.popleft()
    order.append(j)
    queue.extend(children[j])
  return order


def relative_transform(tree: skeleton.KinematicTree, pose: PoseState, joint: int) -> np.ndarray:
  """T~_i: joint rotation plus the template offset from the parent."""
  rot = rotation.axis_angle_to_matrix(pose.theta[joint])
  parent = tree.parents[joint]
  if parent == skeleton.ROOT_PARENT:
    return rotation.make_transform(rot, tree.rest_template[joint])
  return rotation.make_transform(rot, tree.rest_template[joint] - tree.rest_template[parent])


def fk(tree: skeleton.KinematicTree, pose: PoseState) -> FKResult:
  skeleton.Validate(tree)
  ValidatePose(tree, pose)

  transforms = np.zeros((tree.joint_count, 4, 4))
  for j in TopologicalOrder(tree):
    local = relative_transform(tree, pose, j)
    parent = tree.parents[j]
    if parent == skeleton.ROOT_PARENT:
      transforms[j] = local
    else:
      transforms[j] = transforms[parent] @ local

  positions = transforms[:, :3, 3] + pose.translation
  return FKResult(positions, transforms)


def twist_direction(joint_positions: np.ndarray, joint: int, parents: List[int]) -> np.ndarray:
  """Unit vector from the parent of `joint` to `joint`.

  Raises:
    InvalidArgumentError if joint is the root.
    DegenerateGeometryError if the bone has (near) zero length.
  """
  parent = parents[joint]
  if parent == skeleton.ROOT_PARENT:
    raise errors.InvalidArgumentError('the root joint has no twist direction')

  bone = np.asarray(joint_positions[joint], dtype=np.float64) - joint_positions[parent]
  length = np.linalg.norm(bone)
  if length <= MIN_BONE_LENGTH:
    raise errors.DegenerateGeometryError(f'bone {parent}->{joint} has zero length')
  return bone / length


def delta_rotation(tree: skeleton.KinematicTree, joint: int, phi: float, alpha: float,
                   swing_axis: np.ndarray) -> np.ndarray:
  """R_tw @ R_sw for one joint; the twist axis is the joint's rest bone."""
  m = twist_direction(tree.rest_template, joint, tree.parents)
  return rotation.rodrigues(m, phi) @ rotation.rodrigues(swing_axis, alpha)


def improved_fk(tree: skeleton.KinematicTree, pose: PoseState, ts: TwistSwingParams,
                active: ChainSpec) -> ImprovedFKResult:
  """FK with twist-swing rotations on the active chain.

  Joints on the active chain compose T_i = T_pa(i) T~_i R_tw R_sw. Joints
  off the chain keep their plain FK position. Every joint is shifted by
  ts.delta_t.

  Raises:
    ConfigurationError if the chain spec does not match the tree or ts.
  """
  if active.chain not in tree.chains or active.joints != tree.chains[active.chain]:
    raise errors.ConfigurationError(f'chain "{active.chain}" does not match the skeleton')
  if active.target not in active.joints:
    raise errors.ConfigurationError(
      f'target joint {active.target} is not on chain "{active.chain}"')
  if list(ts.joints) != active.rotation_joints:
    raise errors.ConfigurationError(
      f'twist-swing joints {list(ts.joints)} do not match rotation joints {active.rotation_joints}')

  plain = fk(tree, pose)
  transforms = plain.transforms.copy()
  positions = plain.positions.copy()

  delta = {}
  for k, j in enumerate(ts.joints):
    delta[j] = delta_rotation(tree, j, ts.phi[k], ts.alpha[k], ts.swing_axis[k])

  for prev, j in zip(active.joints, active.joints[1:]):
    t = transforms[prev] @ relative_transform(tree, pose, j)
    if j in delta:
      t = t @ rotation.make_transform(delta[j], np.zeros(3))
    transforms[j] = t
    positions[j] = t[:3, 3] + pose.translation

  positions = positions + ts.delta_t
  return ImprovedFKResult(positions, transforms, positions[active.target])
