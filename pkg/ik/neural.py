"""Online neural IK solver.

An MLP maps (theta, t, target centroid) to twist-swing parameters for the
active chain. Its weights are fitted online, per problem, by Adam on the IK loss;
nothing is trained offline.
"""
from autodiff import tape as tp
from ik import problem as pb
from kinematics import forward
from kinematics import skeleton

import logging
import math
from typing import List, NamedTuple, Tuple

import numpy as np


# Log progress every this many iterations.
LOG_EVERY = 50

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

PLATEAU_THRESHOLD = 1e-4
MIN_LEARNING_RATE = 1e-5


class MLPParams(NamedTuple):
  weights: List[np.ndarray]    # fan_in x fan_out
  biases: List[np.ndarray]

  def Flat(self) -> List[np.ndarray]:
    return list(self.weights) + list(self.biases)

  def Copy(self) -> 'MLPParams':
    return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def input_size(tree: skeleton.KinematicTree) -> int:
  return 3 * tree.joint_count + 6


def input_vector(problem: pb.IKProblem) -> np.ndarray:
  return np.concatenate([problem.pose.theta.ravel(), problem.pose.translation,
                         problem.target_centroid])


def init_params(rng: np.random.Generator, sizes: List[int], output_scale: float) -> MLPParams:
  """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; the last layer is scaled down."""
  weights, biases = [], []
  for layer, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
    bound = 1.0 / np.sqrt(fan_in)
    if layer == len(sizes) - 2:
      bound *= output_scale
    weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    biases.append(rng.uniform(-bound, bound, size=fan_out))
  return MLPParams(weights, biases)


def taped_mlp(x: np.ndarray, weights: List[tp.Node], biases: List[tp.Node]) -> tp.Node:
  h = x
  for w, b in zip(weights[:-1], biases[:-1]):
    h = tp.tanh(h @ w + b)
  return h @ weights[-1] + biases[-1]


class Evaluation(NamedTuple):
  loss: float
  gradients: MLPParams
  twist_swing: forward.TwistSwingParams
  target_position: np.ndarray


def evaluate(params: MLPParams, tree: skeleton.KinematicTree, problem: pb.IKProblem,
             chain: forward.ChainSpec, config: pb.SolverConfig) -> Evaluation:
  """One forward/backward pass of the IK loss with respect to every MLP parameter."""
  tape = tp.Tape()
  weights = [tape.Leaf(w) for w in params.weights]
  biases = [tape.Leaf(b) for b in params.biases]

  y = taped_mlp(input_vector(problem), weights, biases)
  decoded = pb.decode_outputs(tree, chain, y, config)
  target, root = pb.taped_positions(tree, problem.pose, chain, decoded)
  tape.loss = pb.taped_loss(target, root, problem, config)

  grads = tape.Backward()
  return Evaluation(
    loss=float(tape.loss.value),
    gradients=MLPParams([grads[w] for w in weights], [grads[b] for b in biases]),
    twist_swing=pb.to_twist_swing(decoded, config),
    target_position=np.array(target.value))


def mlp_forward(params: MLPParams, tree: skeleton.KinematicTree, problem: pb.IKProblem,
                chain: forward.ChainSpec, config: pb.SolverConfig) -> forward.TwistSwingParams:
  tape = tp.Tape()
  y = taped_mlp(input_vector(problem), [tape.Leaf(w) for w in params.weights],
                [tape.Leaf(b) for b in params.biases])
  return pb.to_twist_swing(pb.decode_outputs(tree, chain, y, config), config)


class Adam:
  def __init__(self, params: MLPParams, learning_rate: float):
    self.learning_rate = learning_rate
    self._m = [np.zeros_like(p) for p in params.Flat()]
    self._v = [np.zeros_like(p) for p in params.Flat()]
    self._t = 0

  def Step(self, params: MLPParams, grads: MLPParams) -> None:
    """Updates params in place."""
    self._t += 1
    c1 = 1.0 - ADAM_BETA1 ** self._t
    c2 = 1.0 - ADAM_BETA2 ** self._t
    for p, g, m, v in zip(params.Flat(), grads.Flat(), self._m, self._v):
      m *= ADAM_BETA1
      m += (1.0 - ADAM_BETA1) * g
      v *= ADAM_BETA2
      v += (1.0 - ADAM_BETA2) * g * g
      p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + ADAM_EPSILON)


class ReduceOnPlateau:
  """Scales the optimizer's learning rate down when the loss stalls.

  A loss counts as an improvement when it is below best * (1 - PLATEAU_THRESHOLD).
  After `patience` losses without one, the rate is multiplied by `factor`
  (never below MIN_LEARNING_RATE) and the count restarts.
  """
  def __init__(self, optimizer: Adam, factor: float, patience: int):
    self._optimizer = optimizer
    self._factor = factor
    self._patience = patience
    self._best = math.inf
    self._stalled = 0

  def Step(self, loss: float) -> None:
    if loss < self._best * (1.0 - PLATEAU_THRESHOLD):
      self._best = loss
      self._stalled = 0
      return
    self._stalled += 1
    if self._stalled >= self._patience:
      lr = max(self._optimizer.learning_rate * self._factor, MIN_LEARNING_RATE)
      if lr < self._optimizer.learning_rate:
        logging.debug('neural: loss stalled at %.6g, learning rate %.3g', self._best, lr)
      self._optimizer.learning_rate = lr
      self._stalled = 0


def layer_sizes(tree: skeleton.KinematicTree, chain: forward.ChainSpec,
                config: pb.SolverConfig) -> List[int]:
  return [input_size(tree)] + list(config.hidden_sizes) + [pb.output_size(chain)]


def solve_ik(problem: pb.IKProblem, config: pb.SolverConfig,
             tree: skeleton.KinematicTree) -> pb.IKResult:
  pb.ValidateConfig(config)
  pb.ValidateProblem(tree, problem)
  chain = pb.activate_chain(tree, problem.part_label)

  initial = pb.initial_loss(tree, problem, chain, config)
  if initial < pb.MIN_INITIAL_LOSS:
    logging.info('neural: initial loss %.3g below floor, nothing to do', initial)
    return pb.AlreadyConverged('neural', tree, problem, chain, initial)

  rng = np.random.default_rng(config.seed)
  params = init_params(rng, layer_sizes(tree, chain, config), config.output_scale)
  optimizer = Adam(params, config.learning_rate)
  schedule = ReduceOnPlateau(optimizer, config.plateau_factor, config.plateau_patience)
  goal = config.stop_factor * initial

  trajectory = []
  stop = pb.STOP_MAX_ITERS
  for iteration in range(config.max_iterations + 1):
    ev = evaluate(params, tree, problem, chain, config)
    trajectory.append(pb.Record(iteration, ev.loss, ev.twist_swing))

    if iteration % LOG_EVERY == 0:
      logging.debug('neural: iteration %d loss %.6g (goal %.6g)', iteration, ev.loss, goal)
    if pb.Reached(ev.loss, goal, ev.target_position, problem, config):
      stop = pb.STOP_CONVERGED
      break
    if iteration == config.max_iterations:
      break
    schedule.Step(ev.loss)
    optimizer.Step(params, ev.gradients)

  logging.info('neural: %s after %d iterations, loss %.6g -> %.6g',
    stop, iteration, initial, ev.loss)
  return pb.MakeResult('neural', tree, problem, chain, ev.twist_swing, initial, ev.loss,
                       iteration, stop, trajectory)


def loss_at(params: MLPParams, tree: skeleton.KinematicTree, problem: pb.IKProblem,
            chain: forward.ChainSpec, config: pb.SolverConfig) -> Tuple[float, forward.TwistSwingParams]:
  """The IK loss for fixed params, evaluated through improved_fk rather than the tape."""
  ts = mlp_forward(params, tree, problem, chain, config)
  fkr = forward.improved_fk(tree, problem.pose, ts, chain)
  root_2d = pb.project_root_2d(fkr.positions[skeleton.ROOT], problem.camera)
  return pb.loss_ik(fkr.target_position, problem.targets, root_2d, problem.root_keypoint,
                    config.eps1, config.eps2), ts
