import bench
import camera
from ik import neural
from ik import problem as pb
from kinematics import forward
from kinematics import skeleton

import math
import os
import unittest

import numpy as np


def ReachableProblem(tree, part, rng, degrees=20.0):
  """Targets where a random twist-swing of at most `degrees` puts the part."""
  pose = forward.PoseState(rng.normal(scale=0.15, size=(tree.joint_count, 3)), np.zeros(3))
  chain = pb.activate_chain(tree, part)
  k = len(chain.rotation_joints)
  limit = math.radians(degrees)
  axes = rng.normal(size=(k, 3))
  axes /= np.linalg.norm(axes, axis=1, keepdims=True)
  ts = forward.TwistSwingParams(chain.rotation_joints, rng.uniform(-limit, limit, k),
                                rng.uniform(-limit, limit, k), axes, rng.uniform(-0.02, 0.02, 3))
  moved = forward.improved_fk(tree, pose, ts, chain)
  cam = camera.LookingAtBody()
  return pb.IKProblem(pose, moved.target_position[np.newaxis], part,
                      cam.Project(moved.positions[skeleton.ROOT]), cam)


def _relative_error(a, b):
  return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


class TestNeural(unittest.TestCase):
  def setUp(self):
    self.tree = skeleton.Load(skeleton.SHIPPED_SKELETON)
    self.rng = np.random.default_rng(21)

  def testInputVector(self):
    problem = ReachableProblem(self.tree, 1, self.rng)
    x = neural.input_vector(problem)
    self.assertEqual(x.shape, (neural.input_size(self.tree),))
    np.testing.assert_array_equal(x[-3:], problem.target_centroid)

  def testGradientsMatchFiniteDifferences(self):
    h = 1e-6
    config = pb.SolverConfig(hidden_sizes=(8, 8), output_scale=1.0)
    for i in range(10):
      part = (1, 2, 3, 4, 5, 6, 7, 8, 11, 13)[i]
      problem = ReachableProblem(self.tree, part, self.rng, degrees=25.0)
      # Start away from the solution so gradients are not tiny.
      problem = problem._replace(targets=problem.targets + self.rng.normal(scale=0.05, size=3))
      chain = pb.activate_chain(self.tree, part)
      params = neural.init_params(self.rng, neural.layer_sizes(self.tree, chain, config), 1.0)
      analytic = neural.evaluate(params, self.tree, problem, chain, config).gradients

      flat = params.Flat()
      grads = analytic.Flat()
      picked_a, picked_n = [], []
      for _ in range(40):
        layer = self.rng.integers(len(flat))
        index = tuple(self.rng.integers(s) for s in flat[layer].shape)
        saved = flat[layer][index]
        flat[layer][index] = saved + h
        up, _ = neural.loss_at(params, self.tree, problem, chain, config)
        flat[layer][index] = saved - h
        down, _ = neural.loss_at(params, self.tree, problem, chain, config)
        flat[layer][index] = saved
        picked_a.append(grads[layer][index])
        picked_n.append((up - down) / (2 * h))
      self.assertLess(_relative_error(np.array(picked_a), np.array(picked_n)), 1e-5)

  def testEvaluateLossMatchesUntapedLoss(self):
    config = pb.SolverConfig(hidden_sizes=(16,))
    problem = ReachableProblem(self.tree, 7, self.rng)
    chain = pb.activate_chain(self.tree, 7)
    params = neural.init_params(self.rng, neural.layer_sizes(self.tree, chain, config), 0.1)
    ev = neural.evaluate(params, self.tree, problem, chain, config)
    loss, _ = neural.loss_at(params, self.tree, problem, chain, config)
    self.assertAlmostEqual(ev.loss, loss, places=12)

  def testAdamMovesAgainstGradient(self):
    params = neural.MLPParams([np.ones((2, 2))], [np.zeros(2)])
    grads = neural.MLPParams([np.full((2, 2), 3.0)], [np.array([-1.0, 0.0])])
    neural.Adam(params, 0.1).Step(params, grads)
    np.testing.assert_allclose(params.weights[0], np.full((2, 2), 0.9), atol=1e-6)
    np.testing.assert_allclose(params.biases[0], [0.1, 0.0], atol=1e-6)

  def testReduceOnPlateau(self):
    params = neural.MLPParams([np.ones((2, 2))], [np.zeros(2)])
    adam = neural.Adam(params, 0.1)
    schedule = neural.ReduceOnPlateau(adam, 0.5, 2)
    schedule.Step(1.0)
    schedule.Step(1.0)
    self.assertEqual(adam.learning_rate, 0.1)
    schedule.Step(0.99999)    # below the relative improvement threshold
    self.assertEqual(adam.learning_rate, 0.05)
    schedule.Step(0.5)
    schedule.Step(0.5)
    self.assertEqual(adam.learning_rate, 0.05)

  def testReduceOnPlateauFloor(self):
    params = neural.MLPParams([np.ones((2, 2))], [np.zeros(2)])
    adam = neural.Adam(params, 2e-5)
    schedule = neural.ReduceOnPlateau(adam, 0.1, 1)
    schedule.Step(1.0)
    schedule.Step(1.0)
    self.assertEqual(adam.learning_rate, neural.MIN_LEARNING_RATE)

  def testConverges(self):
    config = pb.SolverConfig()
    for part in (1, 4, 7, 13):
      problem = ReachableProblem(self.tree, part, self.rng)
      result = neural.solve_ik(problem, config, self.tree)
      self.assertEqual(result.stop_reason, pb.STOP_CONVERGED, f'part {part}')
      self.assertLess(result.final_loss, config.stop_factor * result.initial_loss)
      self.assertLess(result.mean_target_distance, config.target_tolerance)
      self.assertEqual(result.iterations, len(result.trajectory) - 1)
      self.assertLess(result.trajectory[-1].loss, result.trajectory[0].loss)

  def testAnglesStayWithinGamma(self):
    for degrees in (30.0, 60.0, 90.0):
      config = pb.SolverConfig(gamma=math.radians(degrees), max_iterations=40)
      problem = ReachableProblem(self.tree, 2, self.rng, degrees=degrees)
      result = neural.solve_ik(problem, config, self.tree)
      for record in result.trajectory:
        self.assertLessEqual(record.max_abs_phi, config.gamma + 1e-12)
        self.assertLessEqual(record.max_abs_alpha, config.gamma + 1e-12)
      forward.ValidateTwistSwing(result.twist_swing, config.gamma)

  def testAlreadyAtTarget(self):
    problem = ReachableProblem(self.tree, 1, self.rng)
    positions = forward.fk(self.tree, problem.pose).positions
    problem = problem._replace(targets=positions[20][np.newaxis],
                               root_keypoint=problem.camera.Project(positions[skeleton.ROOT]))
    result = neural.solve_ik(problem, pb.SolverConfig(), self.tree)
    self.assertEqual(result.stop_reason, pb.STOP_ALREADY_CONVERGED)
    self.assertEqual(result.iterations, 0)
    np.testing.assert_allclose(result.pose.theta, problem.pose.theta, atol=1e-12)

  def testMaxIterations(self):
    problem = ReachableProblem(self.tree, 1, self.rng)
    problem = problem._replace(targets=problem.targets + 0.3)
    result = neural.solve_ik(problem, pb.SolverConfig(max_iterations=2), self.tree)
    self.assertEqual(result.stop_reason, pb.STOP_MAX_ITERS)
    self.assertEqual(result.iterations, 2)
    self.assertFalse(result.converged)

  def testDeterministic(self):
    problem = ReachableProblem(self.tree, 3, self.rng)
    config = pb.SolverConfig(max_iterations=20, seed=4)
    a = neural.solve_ik(problem, config, self.tree)
    b = neural.solve_ik(problem, config, self.tree)
    self.assertEqual(a.final_loss, b.final_loss)
    np.testing.assert_array_equal(a.pose.theta, b.pose.theta)

  def testUnrestrictedRuns(self):
    problem = ReachableProblem(self.tree, 5, self.rng)
    config = pb.SolverConfig(restrict_range=False, max_iterations=20)
    result = neural.solve_ik(problem, config, self.tree)
    self.assertTrue(np.isfinite(result.final_loss))
    self.assertEqual(len(result.trajectory), result.iterations + 1)


# The 100-problem suites take minutes; run them with HOIK_SUITE_TESTS=1.
SUITE_TESTS = os.environ.get('HOIK_SUITE_TESTS', '') not in ('', '0')


def SuiteResults(solve, config):
  """Solves the default 100-problem synthetic suite (perturbations within 30 degrees)."""
  tree = skeleton.Load(skeleton.SHIPPED_SKELETON)
  problems = bench.SyntheticProblems(tree, bench.SyntheticSpec(count=100, seed=0))
  return [solve(p, config, tree) for p in problems]


@unittest.skipUnless(SUITE_TESTS, 'Set HOIK_SUITE_TESTS=1 to run the synthetic suite')
class TestNeuralSuite(unittest.TestCase):
  def testReachesTargets(self):
    config = pb.SolverConfig()
    results = SuiteResults(neural.solve_ik, config)
    self.assertEqual(len(results), 100)
    reached = [r for r in results
               if r.stop_reason == pb.STOP_CONVERGED
               and r.final_loss < config.stop_factor * r.initial_loss
               and r.iterations <= config.max_iterations
               and r.mean_target_distance < 0.01]
    self.assertGreaterEqual(len(reached), 95)
    for r in results:
      for record in r.trajectory:
        self.assertLessEqual(record.max_abs_phi, config.gamma + 1e-12)
        self.assertLessEqual(record.max_abs_alpha, config.gamma + 1e-12)


if __name__ == '__main__':
  unittest.main()
