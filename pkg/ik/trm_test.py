from ik import neural_test
from ik import problem as pb
from ik import trm
from kinematics import forward
from kinematics import skeleton

import math
import unittest

import numpy as np


class TestTrustRegion(unittest.TestCase):
  def setUp(self):
    self.tree = skeleton.Load(skeleton.SHIPPED_SKELETON)
    self.rng = np.random.default_rng(8)

  def testDoglegInsideRadiusIsGaussNewton(self):
    j = np.array([[2.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    r = np.array([1.0, -1.0, 0.5])
    np.testing.assert_allclose(trm.dogleg(j, r, 10.0), [-0.5, 1.0], atol=1e-12)

  def testDoglegRespectsRadius(self):
    for _ in range(50):
      j = self.rng.normal(size=(6, 4))
      r = self.rng.normal(size=6)
      radius = self.rng.uniform(0.01, 1.0)
      step = trm.dogleg(j, r, radius)
      self.assertLessEqual(np.linalg.norm(step), radius * (1 + 1e-9))
      # The model never gets worse than at p = 0.
      self.assertLessEqual(np.linalg.norm(j @ step + r), np.linalg.norm(r) + 1e-12)

  def testLinearizationMatchesFiniteDifferences(self):
    problem = neural_test.ReachableProblem(self.tree, 3, self.rng)
    problem = problem._replace(targets=problem.targets + 0.05)
    chain = pb.activate_chain(self.tree, 3)
    config = pb.SolverConfig()
    x = trm.initial_variables(self.tree, chain) + self.rng.normal(scale=0.1, size=pb.output_size(chain))
    lin = trm.linearize(x, self.tree, problem, chain, config)

    h = 1e-6
    numeric = np.zeros_like(lin.jacobian)
    for i in range(x.size):
      e = np.zeros_like(x)
      e[i] = h
      up = trm.linearize(x + e, self.tree, problem, chain, config).residual
      down = trm.linearize(x - e, self.tree, problem, chain, config).residual
      numeric[:, i] = (up - down) / (2 * h)
    np.testing.assert_allclose(lin.jacobian, numeric, atol=1e-6)

  def testLossIsLossIk(self):
    problem = neural_test.ReachableProblem(self.tree, 1, self.rng)
    problem = problem._replace(targets=problem.targets + self.rng.normal(scale=0.02, size=(3, 3)))
    chain = pb.activate_chain(self.tree, 1)
    config = pb.SolverConfig()
    x = trm.initial_variables(self.tree, chain)
    self.assertAlmostEqual(trm.linearize(x, self.tree, problem, chain, config).loss,
                           pb.initial_loss(self.tree, problem, chain, config), places=12)

  def testInitialSwingAxesArePerpendicular(self):
    chain = pb.activate_chain(self.tree, 2)
    x = trm.initial_variables(self.tree, chain)
    for k, j in enumerate(chain.rotation_joints):
      n = x[pb.OUTPUTS_PER_JOINT * k + 2:pb.OUTPUTS_PER_JOINT * k + 5]
      self.assertAlmostEqual(np.linalg.norm(n), 1.0, places=12)
      self.assertAlmostEqual(float(np.dot(n, pb.swing_fallback(self.tree, j))), 0.0, places=12)

  def testConverges(self):
    config = pb.SolverConfig()
    for part in (1, 4, 7, 9, 13):
      problem = neural_test.ReachableProblem(self.tree, part, self.rng)
      result = trm.solve_ik_trm(problem, config, self.tree)
      self.assertEqual(result.stop_reason, pb.STOP_CONVERGED, f'part {part}')
      self.assertEqual(result.solver, 'trm')
      self.assertLess(result.final_loss, config.stop_factor * result.initial_loss)
      self.assertLess(result.mean_target_distance, config.target_tolerance)
      losses = [r.loss for r in result.trajectory]
      self.assertTrue(all(b <= a for a, b in zip(losses, losses[1:])))

  def testAnglesStayWithinGamma(self):
    config = pb.SolverConfig(gamma=math.radians(30), max_iterations=30)
    problem = neural_test.ReachableProblem(self.tree, 2, self.rng, degrees=30.0)
    problem = problem._replace(targets=problem.targets + 0.2)
    result = trm.solve_ik_trm(problem, config, self.tree)
    for record in result.trajectory:
      self.assertLessEqual(record.max_abs_phi, config.gamma + 1e-12)
      self.assertLessEqual(record.max_abs_alpha, config.gamma + 1e-12)
    forward.ValidateTwistSwing(result.twist_swing, config.gamma)

  def testAlreadyAtTarget(self):
    problem = neural_test.ReachableProblem(self.tree, 6, self.rng)
    positions = forward.fk(self.tree, problem.pose).positions
    problem = problem._replace(targets=positions[17][np.newaxis],
                               root_keypoint=problem.camera.Project(positions[skeleton.ROOT]))
    result = trm.solve_ik_trm(problem, pb.SolverConfig(), self.tree)
    self.assertEqual(result.stop_reason, pb.STOP_ALREADY_CONVERGED)
    self.assertEqual(result.iterations, 0)


@unittest.skipUnless(neural_test.SUITE_TESTS, 'Set HOIK_SUITE_TESTS=1 to run the synthetic suite')
class TestTrustRegionSuite(unittest.TestCase):
  def testReachesTargets(self):
    config = pb.SolverConfig()
    results = neural_test.SuiteResults(trm.solve_ik_trm, config)
    reached = [r for r in results
               if r.stop_reason == pb.STOP_CONVERGED and r.mean_target_distance < 0.01]
    self.assertGreaterEqual(len(reached), 90)


if __name__ == '__main__':
  unittest.main()
