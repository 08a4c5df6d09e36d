import errors
from ik import neural
from ik import problem as pb
from ik import trm
from kinematics import forward
from kinematics import skeleton

import abc
import logging
import math

import prometheus_client    # type: ignore[import]


# Metrics
SOLVE_LATENCY = prometheus_client.Summary(
  'hoik_solve_latency_seconds',
  'Time to solve one IK problem',
  ['solver'])

SOLVE_ITERATIONS = prometheus_client.Summary(
  'hoik_solve_iterations',
  'Iterations used per IK solve',
  ['solver'])

STOP_REASONS = prometheus_client.Counter(
  'hoik_solve_stop_reasons_total',
  'Why IK solves stopped',
  ['solver', 'reason'])


class Solver(abc.ABC):
  name = ''

  def __init__(self, tree: skeleton.KinematicTree, config: pb.SolverConfig):
    self.tree = tree
    self.config = config

  @abc.abstractmethod
  def _Solve(self, problem: pb.IKProblem) -> pb.IKResult:
    pass

  def Solve(self, problem: pb.IKProblem) -> pb.IKResult:
    """Solves one problem and records metrics."""
    with SOLVE_LATENCY.labels(self.name).time():
      result = self._Solve(problem)

    # Unrestricted solves read angles off atan2, so they stay within pi.
    limit = self.config.gamma if self.config.restrict_range else math.pi
    forward.ValidateTwistSwing(result.twist_swing, limit)

    SOLVE_ITERATIONS.labels(self.name).observe(result.iterations)
    STOP_REASONS.labels(self.name, result.stop_reason).inc()
    return result


class NeuralSolver(Solver):
  name = 'neural'

  def _Solve(self, problem: pb.IKProblem) -> pb.IKResult:
    return neural.solve_ik(problem, self.config, self.tree)


class TrustRegionSolver(Solver):
  name = 'trm'

  def _Solve(self, problem: pb.IKProblem) -> pb.IKResult:
    return trm.solve_ik_trm(problem, self.config, self.tree)


SOLVERS = {
  NeuralSolver.name: NeuralSolver,
  TrustRegionSolver.name: TrustRegionSolver,
}


def MakeSolver(name: str, tree: skeleton.KinematicTree, config: pb.SolverConfig) -> Solver:
  cls = SOLVERS.get(name)
  if cls is None:
    raise errors.ConfigurationError(f'unknown solver "{name}", expected one of {sorted(SOLVERS)}')

  pb.ValidateConfig(config)
  logging.info('Solver %s, gamma=%.1f deg, eps1=%g, eps2=%g, max_iterations=%d',
    name, config.Dict()['gamma_degrees'], config.eps1, config.eps2, config.max_iterations)
  return cls(tree, config)
