"""Trust-region baseline for the same IK objective.

The variables are the raw per-joint outputs the neural solver would emit
(y_phi, y_alpha, raw swing axis) plus delta_t, optimized directly. The IK loss is
written as a sum of squared residuals

  r = [sqrt(eps1/N) (q_j - p_k) for every target point p_k,
       sqrt(eps2) (q0_2d - observed)]

and each step minimizes the Gauss-Newton model inside a radius with Powell's
dogleg, followed by the usual ratio test and radius update.
"""
from autodiff import tape as tp
from ik import problem as pb
from kinematics import forward
from kinematics import skeleton

import logging
import math
from typing import NamedTuple

import numpy as np


LOG_EVERY = 50

# Minimum actual/predicted reduction ratio for accepting a step.
ACCEPT_RATIO = 1e-4
SHRINK_RATIO = 0.25
GROW_RATIO = 0.75


class Linearization(NamedTuple):
  residual: np.ndarray
  jacobian: np.ndarray
  twist_swing: forward.TwistSwingParams
  target_position: np.ndarray

  @property
  def loss(self) -> float:
    return float(np.dot(self.residual, self.residual))


def initial_variables(tree: skeleton.KinematicTree, chain: forward.ChainSpec) -> np.ndarray:
  """Zero angles and translation; swing axes start perpendicular to the bone."""
  x = np.zeros(pb.output_size(chain))
  for k, j in enumerate(chain.rotation_joints):
    m = pb.swing_fallback(tree, j)
    helper = np.eye(3)[np.argmin(np.abs(m))]
    n = np.cross(m, helper)
    x[pb.OUTPUTS_PER_JOINT * k + 2:pb.OUTPUTS_PER_JOINT * k + 5] = n / np.linalg.norm(n)
  return x


def linearize(x: np.ndarray, tree: skeleton.KinematicTree, problem: pb.IKProblem,
              chain: forward.ChainSpec, config: pb.SolverConfig) -> Linearization:
  tape = tp.Tape()
  y = tape.Leaf(x)
  decoded = pb.decode_outputs(tree, chain, y, config)
  target, root = pb.taped_positions(tree, problem.pose, chain, decoded)
  root_2d = pb.taped_projection(root, problem.camera)

  # Every point residual shares the Jacobian of q_j, so 5 reverse sweeps
  # give the full Jacobian.
  jq = np.array([tape.Backward(target, seed=e)[y] for e in np.eye(3)])
  j2 = np.array([tape.Backward(root_2d, seed=e)[y] for e in np.eye(2)])

  n = problem.targets.shape[0]
  w1 = math.sqrt(config.eps1 / n)
  w2 = math.sqrt(config.eps2)
  residual = np.concatenate([
    (w1 * (target.value - problem.targets)).ravel(),
    w2 * (root_2d.value - problem.root_keypoint)])
  jacobian = np.vstack([np.tile(w1 * jq, (n, 1)), w2 * j2])
  return Linearization(residual, jacobian, pb.to_twist_swing(decoded, config), np.array(target.value))


def dogleg(jacobian: np.ndarray, residual: np.ndarray, radius: float) -> np.ndarray:
  """Approximately minimizes |J p + r| subject to |p| <= radius."""
  p_gn = np.linalg.lstsq(jacobian, -residual, rcond=None)[0]
  if np.linalg.norm(p_gn) <= radius:
    return p_gn

  g = jacobian.T @ residual
  jg = jacobian @ g
  if not np.any(g) or not np.any(jg):
    return p_gn * (radius / np.linalg.norm(p_gn))
  p_sd = -(np.dot(g, g) / np.dot(jg, jg)) * g
  if np.linalg.norm(p_sd) >= radius:
    return -radius * g / np.linalg.norm(g)

  # Walk from the Cauchy point towards the Gauss-Newton point until the
  # boundary: |p_sd + s (p_gn - p_sd)| = radius.
  d = p_gn - p_sd
  a = np.dot(d, d)
  b = 2.0 * np.dot(p_sd, d)
  c = np.dot(p_sd, p_sd) - radius * radius
  s = (-b + math.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
  return p_sd + s * d


def solve_ik_trm(problem: pb.IKProblem, config: pb.SolverConfig,
                 tree: skeleton.KinematicTree) -> pb.IKResult:
  pb.ValidateConfig(config)
  pb.ValidateProblem(tree, problem)
  chain = pb.activate_chain(tree, problem.part_label)

  initial = pb.initial_loss(tree, problem, chain, config)
  if initial < pb.MIN_INITIAL_LOSS:
    logging.info('trm: initial loss %.3g below floor, nothing to do', initial)
    return pb.AlreadyConverged('trm', tree, problem, chain, initial)

  goal = config.stop_factor * initial
  radius = config.trm_initial_radius
  x = initial_variables(tree, chain)
  lin = linearize(x, tree, problem, chain, config)

  trajectory = []
  stop = pb.STOP_MAX_ITERS
  for iteration in range(config.max_iterations + 1):
    trajectory.append(pb.Record(iteration, lin.loss, lin.twist_swing))
    if iteration % LOG_EVERY == 0:
      logging.debug('trm: iteration %d loss %.6g radius %.3g', iteration, lin.loss, radius)
    if pb.Reached(lin.loss, goal, lin.target_position, problem, config):
      stop = pb.STOP_CONVERGED
      break
    if iteration == config.max_iterations:
      break

    step = dogleg(lin.jacobian, lin.residual, radius)
    model = lin.residual + lin.jacobian @ step
    predicted = lin.loss - float(np.dot(model, model))
    candidate = linearize(x + step, tree, problem, chain, config)
    actual = lin.loss - candidate.loss
    ratio = actual / predicted if predicted > 0 else -1.0

    step_norm = np.linalg.norm(step)
    if ratio < SHRINK_RATIO:
      radius = SHRINK_RATIO * step_norm if step_norm > 0 else SHRINK_RATIO * radius
    elif ratio > GROW_RATIO and step_norm >= 0.99 * radius:
      radius = min(2.0 * radius, config.trm_max_radius)

    if ratio > ACCEPT_RATIO:
      x = x + step
      lin = candidate

  logging.info('trm: %s after %d iterations, loss %.6g -> %.6g',
    stop, iteration, initial, lin.loss)
  return pb.MakeResult('trm', tree, problem, chain, lin.twist_swing, initial, lin.loss,
                       iteration, stop, trajectory)
