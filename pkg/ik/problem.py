"""IK problem definition, chain activation and the IK loss.

Both solvers share the taped kinematics in this module: given raw per-joint
outputs (y_phi, y_alpha, raw swing axis) and a raw translation increment, it
builds the twist-swing rotations, walks the active chain and returns the
target-joint and root positions as tape nodes.
"""
import camera as camera_lib
import errors
from autodiff import tape as tp
from kinematics import forward
from kinematics import rotation
from kinematics import skeleton

import math
from typing import Any, Dict, List, NamedTuple, Tuple

import numpy as np


# Below this initial loss there is nothing to optimize.
MIN_INITIAL_LOSS = 1e-10

STOP_CONVERGED = 'converged'
STOP_ALREADY_CONVERGED = 'already_converged'
STOP_MAX_ITERS = 'max_iters_reached'

OUTPUTS_PER_JOINT = 5


class SolverConfig(NamedTuple):
  gamma: float = math.radians(30.0)
  eps1: float = 1.0
  eps2: float = 1e-4
  learning_rate: float = 1e-2
  max_iterations: int = 500
  stop_factor: float = 0.01
  # A solve has converged only once the loss is below stop_factor times the
  # initial loss and the target joint is this close (meters, mean over the
  # contact points) to the targets.
  target_tolerance: float = 0.01
  # Learning rate drops by plateau_factor after plateau_patience iterations
  # without a relative loss improvement (neural solver only).
  plateau_patience: int = 10
  plateau_factor: float = 0.5
  seed: int = 0
  hidden_sizes: Tuple[int, ...] = (256, 256)
  # Extra scale on the output layer's initial weights; keeps the first
  # iterate close to the input pose.
  output_scale: float = 0.1
  # False maps raw outputs straight to angles (no tanh range restriction).
  restrict_range: bool = True
  trm_initial_radius: float = 0.5
  trm_max_radius: float = 4.0

  def Dict(self) -> Dict[str, Any]:
    d = self._asdict()
    d['gamma_degrees'] = math.degrees(self.gamma)
    d['hidden_sizes'] = list(self.hidden_sizes)
    return d


def ValidateConfig(config: SolverConfig) -> None:
  if not 0.0 < config.gamma <= math.pi / 2 + 1e-12:
    raise errors.ConfigurationError(f'gamma must be in (0, 90] degrees, got {math.degrees(config.gamma)}')
  if not 0.0 < config.stop_factor < 1.0:
    raise errors.ConfigurationError(f'stop factor must be in (0, 1), got {config.stop_factor}')
  if config.max_iterations < 1:
    raise errors.ConfigurationError('max iterations must be at least 1')
  if config.eps1 < 0 or config.eps2 < 0:
    raise errors.ConfigurationError('loss weights must be non-negative')
  if any(h < 1 for h in config.hidden_sizes):
    raise errors.ConfigurationError(f'invalid hidden sizes {config.hidden_sizes}')
  if not config.target_tolerance > 0:
    raise errors.ConfigurationError(f'target tolerance must be positive, got {config.target_tolerance}')
  if config.plateau_patience < 1 or not 0.0 < config.plateau_factor < 1.0:
    raise errors.ConfigurationError('plateau patience must be >= 1 and factor in (0, 1)')


class IKProblem(NamedTuple):
  pose: forward.PoseState
  targets: np.ndarray             # N x 3 contact points
  part_label: int
  root_keypoint: np.ndarray       # observed 2D root, pixels
  camera: camera_lib.Camera

  @property
  def target_centroid(self) -> np.ndarray:
    return self.targets.mean(axis=0)


def ValidateProblem(tree: skeleton.KinematicTree, problem: IKProblem) -> None:
  forward.ValidatePose(tree, problem.pose)
  targets = np.asarray(problem.targets)
  if targets.ndim != 2 or targets.shape[0] == 0 or targets.shape[1] != 3:
    raise errors.InvalidArgumentError(f'target point set must be non-empty N x 3, got {targets.shape}')
  if not np.all(np.isfinite(targets)):
    raise errors.InvalidArgumentError('target point set has non-finite points')
  if np.asarray(problem.root_keypoint).shape != (2,):
    raise errors.InvalidArgumentError('root keypoint must be a 2-vector')


def activate_chain(tree: skeleton.KinematicTree, part_label: int) -> forward.ChainSpec:
  """Picks the kinematic chain and target joint for a contacted body part.

  The root becomes the translation joint, chain joints between the root and
  the target become rotation joints, and everything else is fixed.
  """
  if part_label == skeleton.NO_CONTACT:
    raise errors.InvalidArgumentError('the no-contact label cannot drive a joint')
  part = tree.parts.get(part_label)
  if part is None:
    raise errors.InvalidArgumentError(f'part label {part_label} is not defined by the skeleton')

  joints = tree.chains[part.chain]
  types = [forward.JointType.FIXED] * tree.joint_count
  for j in joints[:joints.index(part.target)]:
    types[j] = forward.JointType.ROTATION
  types[skeleton.ROOT] = forward.JointType.TRANSLATION
  types[part.target] = forward.JointType.TARGET

  return forward.ChainSpec(part.chain, list(joints), part.target, types)


def output_size(chain: forward.ChainSpec) -> int:
  return OUTPUTS_PER_JOINT * len(chain.rotation_joints) + 3


def project_root_2d(root: np.ndarray, camera: camera_lib.Camera) -> np.ndarray:
  return camera.Project(root)


def loss_ik(target_position: np.ndarray, targets: np.ndarray, root_2d: np.ndarray,
            root_keypoint: np.ndarray, eps1: float, eps2: float) -> float:
  """eps1 * mean_p |q_j - p|^2 + eps2 * |q0_2d - observed|^2."""
  targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
  if targets.shape[0] == 0:
    raise errors.InvalidArgumentError('target point set is empty')
  d = target_position - targets
  r = np.asarray(root_2d) - np.asarray(root_keypoint)
  return float(eps1 * np.sum(d * d) / targets.shape[0] + eps2 * np.dot(r, r))


def mean_distance(target_position: np.ndarray, targets: np.ndarray) -> float:
  return float(np.mean(np.linalg.norm(np.asarray(targets) - target_position, axis=1)))


def Reached(loss: float, goal: float, target_position: np.ndarray, problem: IKProblem,
            config: SolverConfig) -> bool:
  """The stopping rule shared by both solvers."""
  return loss < goal and mean_distance(target_position, problem.targets) < config.target_tolerance


def initial_positions(tree: skeleton.KinematicTree, problem: IKProblem,
                      chain: forward.ChainSpec) -> Tuple[np.ndarray, np.ndarray]:
  """Target and root positions of the unmodified pose."""
  positions = forward.fk(tree, problem.pose).positions
  return positions[chain.target], positions[skeleton.ROOT]


def initial_loss(tree: skeleton.KinematicTree, problem: IKProblem, chain: forward.ChainSpec,
                 config: SolverConfig) -> float:
  target, root = initial_positions(tree, problem, chain)
  return loss_ik(target, problem.targets, project_root_2d(root, problem.camera),
                 problem.root_keypoint, config.eps1, config.eps2)


class JointRotation(NamedTuple):
  joint: int
  sin_phi: tp.Node
  cos_phi: tp.Node
  sin_alpha: tp.Node
  cos_alpha: tp.Node
  swing_axis: tp.Node
  twist_axis: np.ndarray


class DecodedOutputs(NamedTuple):
  rotations: List[JointRotation]
  delta_t: tp.Node


def swing_fallback(tree: skeleton.KinematicTree, joint: int) -> np.ndarray:
  return forward.twist_direction(tree.rest_template, joint, tree.parents)


def decode_outputs(tree: skeleton.KinematicTree, chain: forward.ChainSpec, y: tp.Node,
                   config: SolverConfig) -> DecodedOutputs:
  """Maps raw outputs to bounded twist-swing quantities on the tape.

  sin(phi) = sin(gamma) tanh(y_phi), cos(phi) = sqrt(1 - sin(phi)^2), and the
  same for alpha. The raw swing axis is normalized; a (near) zero raw axis
  falls back to the joint's rest bone direction.
  """
  tape = y.tape
  sin_gamma = math.sin(config.gamma)
  rotations = []
  for k, j in enumerate(chain.rotation_joints):
    base = OUTPUTS_PER_JOINT * k
    y_phi = y[base]
    y_alpha = y[base + 1]
    raw_axis = y[base + 2:base + 5]

    if config.restrict_range:
      s_phi = sin_gamma * tp.tanh(y_phi)
      c_phi = tp.sqrt(1.0 - s_phi * s_phi)
      s_alpha = sin_gamma * tp.tanh(y_alpha)
      c_alpha = tp.sqrt(1.0 - s_alpha * s_alpha)
    else:
      s_phi, c_phi = tp.sin(y_phi), tp.cos(y_phi)
      s_alpha, c_alpha = tp.sin(y_alpha), tp.cos(y_alpha)

    twist_axis = swing_fallback(tree, j)
    if np.linalg.norm(raw_axis.value) < tp.MIN_NORM:
      axis = tape.Constant(twist_axis)
    else:
      axis = tp.normalize(raw_axis)
    rotations.append(JointRotation(j, s_phi, c_phi, s_alpha, c_alpha, axis, twist_axis))

  n = OUTPUTS_PER_JOINT * len(chain.rotation_joints)
  return DecodedOutputs(rotations, y[n:n + 3])


def _taped_delta_rotation(r: JointRotation) -> tp.Node:
  eye = np.eye(3)
  km = rotation.skew(r.twist_axis)
  twist = eye + r.sin_phi * km + (1.0 - r.cos_phi) * (km @ km)
  kn = tp.skew(r.swing_axis)
  swing = eye + r.sin_alpha * kn + (1.0 - r.cos_alpha) * (kn @ kn)
  return twist @ swing


def taped_positions(tree: skeleton.KinematicTree, pose: forward.PoseState,
                    chain: forward.ChainSpec, decoded: DecodedOutputs) -> Tuple[tp.Node, tp.Node]:
  """Target-joint and root positions of improved_fk, recorded on the tape.

  Only the chain prefix up to the target is walked; transforms stay plain
  numpy until the first rotation joint.
  """
  plain = forward.fk(tree, pose).transforms
  delta = {r.joint: r for r in decoded.rotations}

  rot: Any = plain[skeleton.ROOT][:3, :3]
  pos: Any = plain[skeleton.ROOT][:3, 3]
  for prev, j in zip(chain.joints, chain.joints[1:chain.joints.index(chain.target) + 1]):
    offset = tree.rest_template[j] - tree.rest_template[prev]
    local = rotation.axis_angle_to_matrix(pose.theta[j])
    pos = pos + rot @ offset
    rot = rot @ local
    if j in delta:
      rot = rot @ _taped_delta_rotation(delta[j])

  shift = pose.translation + decoded.delta_t
  return shift + pos, shift + plain[skeleton.ROOT][:3, 3]


def taped_projection(root: tp.Node, camera: camera_lib.Camera) -> tp.Node:
  xc = camera.rotation @ root + camera.translation
  z = xc[2]
  if not z.value > camera_lib.MIN_DEPTH:
    raise errors.ProjectionError(f'root has depth {float(z.value)} in camera frame')
  u = camera.fx * xc[0] / z + camera.cx
  v = camera.fy * xc[1] / z + camera.cy
  return tp.stack([u, v])


def taped_loss(target: tp.Node, root: tp.Node, problem: IKProblem,
               config: SolverConfig) -> tp.Node:
  d = target - problem.targets
  fit = tp.sum(d * d) * (config.eps1 / problem.targets.shape[0])
  r = taped_projection(root, problem.camera) - problem.root_keypoint
  return fit + config.eps2 * tp.sum(r * r)


def to_twist_swing(decoded: DecodedOutputs, config: SolverConfig) -> forward.TwistSwingParams:
  """Reads the numeric twist-swing parameters off a decoded tape."""
  phi, alpha, axes = [], [], []
  for r in decoded.rotations:
    if config.restrict_range:
      phi.append(math.asin(float(r.sin_phi.value)))
      alpha.append(math.asin(float(r.sin_alpha.value)))
    else:
      phi.append(math.atan2(float(r.sin_phi.value), float(r.cos_phi.value)))
      alpha.append(math.atan2(float(r.sin_alpha.value), float(r.cos_alpha.value)))
    axes.append(r.swing_axis.value)

  k = len(decoded.rotations)
  return forward.TwistSwingParams(
    joints=[r.joint for r in decoded.rotations],
    phi=np.array(phi),
    alpha=np.array(alpha),
    swing_axis=np.array(axes).reshape(k, 3),
    delta_t=decoded.delta_t.value.copy())


class IterationRecord(NamedTuple):
  iteration: int
  loss: float
  max_abs_phi: float
  max_abs_alpha: float


class IKResult(NamedTuple):
  solver: str
  chain: str
  target_joint: int
  pose: forward.PoseState
  twist_swing: forward.TwistSwingParams
  initial_loss: float
  final_loss: float
  iterations: int
  stop_reason: str
  target_position: np.ndarray
  mean_target_distance: float
  rotation_magnitude_deg: float
  trajectory: List[IterationRecord]

  @property
  def converged(self) -> bool:
    return self.stop_reason in (STOP_CONVERGED, STOP_ALREADY_CONVERGED)

  def Dict(self) -> Dict[str, Any]:
    """JSON-friendly view, without the per-iteration trajectory."""
    ts = self.twist_swing
    return {
      'solver': self.solver,
      'chain': self.chain,
      'target_joint': self.target_joint,
      'stop_reason': self.stop_reason,
      'iterations': self.iterations,
      'initial_loss': self.initial_loss,
      'final_loss': self.final_loss,
      'mean_target_distance': self.mean_target_distance,
      'rotation_magnitude_deg': self.rotation_magnitude_deg,
      'target_position': self.target_position.tolist(),
      'pose': {
        'theta': self.pose.theta.tolist(),
        'translation': self.pose.translation.tolist(),
      },
      'twist_swing': {
        'joints': list(ts.joints),
        'phi': ts.phi.tolist(),
        'alpha': ts.alpha.tolist(),
        'swing_axis': ts.swing_axis.tolist(),
        'delta_t': ts.delta_t.tolist(),
      },
    }


def rotation_magnitude(tree: skeleton.KinematicTree, ts: forward.TwistSwingParams) -> float:
  """Sum of the geodesic angles of every joint's extra rotation, radians."""
  total = 0.0
  for k, j in enumerate(ts.joints):
    total += rotation.rotation_angle(
      forward.delta_rotation(tree, j, ts.phi[k], ts.alpha[k], ts.swing_axis[k]))
  return total


def compose_pose(tree: skeleton.KinematicTree, pose: forward.PoseState,
                 ts: forward.TwistSwingParams) -> forward.PoseState:
  """Folds the twist-swing rotations and delta_t back into a plain pose."""
  theta = pose.theta.copy()
  for k, j in enumerate(ts.joints):
    dr = forward.delta_rotation(tree, j, ts.phi[k], ts.alpha[k], ts.swing_axis[k])
    theta[j] = rotation.matrix_to_axis_angle(rotation.axis_angle_to_matrix(pose.theta[j]) @ dr)
  return forward.PoseState(theta, pose.translation + ts.delta_t)


def MakeResult(solver: str, tree: skeleton.KinematicTree, problem: IKProblem,
               chain: forward.ChainSpec, ts: forward.TwistSwingParams, initial: float,
               final_loss: float, iterations: int, stop_reason: str,
               trajectory: List[IterationRecord]) -> IKResult:
  target = forward.improved_fk(tree, problem.pose, ts, chain).target_position
  distance = mean_distance(target, problem.targets)
  return IKResult(
    solver=solver,
    chain=chain.chain,
    target_joint=chain.target,
    pose=compose_pose(tree, problem.pose, ts),
    twist_swing=ts,
    initial_loss=initial,
    final_loss=final_loss,
    iterations=iterations,
    stop_reason=stop_reason,
    target_position=target,
    mean_target_distance=distance,
    rotation_magnitude_deg=math.degrees(rotation_magnitude(tree, ts)),
    trajectory=trajectory)


def AlreadyConverged(solver: str, tree: skeleton.KinematicTree, problem: IKProblem,
                     chain: forward.ChainSpec, initial: float) -> IKResult:
  ts = forward.TwistSwingParams.Zero(chain.rotation_joints)
  return MakeResult(solver, tree, problem, chain, ts, initial, initial, 0, STOP_ALREADY_CONVERGED,
                    [IterationRecord(0, initial, 0.0, 0.0)])


def Record(iteration: int, loss: float, ts: forward.TwistSwingParams) -> IterationRecord:
  max_phi = float(np.max(np.abs(ts.phi))) if len(ts.phi) else 0.0
  max_alpha = float(np.max(np.abs(ts.alpha))) if len(ts.alpha) else 0.0
  return IterationRecord(iteration, loss, max_phi, max_alpha)
