import camera
import errors
from autodiff import tape as tp
from ik import problem as pb
from kinematics import forward
from kinematics import skeleton

import math
import unittest

import numpy as np


def MakeProblem(tree, part=1, targets=None, seed=0):
  rng = np.random.default_rng(seed)
  pose = forward.PoseState(rng.normal(scale=0.1, size=(tree.joint_count, 3)), np.zeros(3))
  cam = camera.LookingAtBody()
  positions = forward.fk(tree, pose).positions
  if targets is None:
    target = positions[tree.parts[part].target]
    targets = target + rng.normal(scale=0.05, size=(4, 3))
  return pb.IKProblem(pose, np.asarray(targets), part, cam.Project(positions[skeleton.ROOT]), cam)


class TestProblem(unittest.TestCase):
  def setUp(self):
    self.tree = skeleton.Load(skeleton.SHIPPED_SKELETON)
    self.rng = np.random.default_rng(5)

  def testActivateLeftHand(self):
    chain = pb.activate_chain(self.tree, 1)
    self.assertEqual(chain.chain, 'left_arm')
    self.assertEqual(chain.target, 20)
    self.assertEqual(chain.rotation_joints, [3, 6, 9, 13, 16, 18])
    self.assertEqual(chain.joint_types[skeleton.ROOT], forward.JointType.TRANSLATION)
    self.assertEqual(chain.joint_types[20], forward.JointType.TARGET)
    self.assertEqual(chain.joint_types[22], forward.JointType.FIXED)
    self.assertEqual(chain.joint_types[12], forward.JointType.FIXED)
    self.assertEqual(pb.output_size(chain), 6 * pb.OUTPUTS_PER_JOINT + 3)

  def testActivateEveryPart(self):
    for label, part in self.tree.parts.items():
      chain = pb.activate_chain(self.tree, label)
      self.assertEqual(chain.target, part.target)
      self.assertNotIn(part.target, chain.rotation_joints)

  def testThighHasOnlyTranslation(self):
    chain = pb.activate_chain(self.tree, 9)
    self.assertEqual(chain.rotation_joints, [])
    self.assertEqual(pb.output_size(chain), 3)

  def testNoContactCannotDrive(self):
    with self.assertRaises(errors.InvalidArgumentError):
      pb.activate_chain(self.tree, skeleton.NO_CONTACT)
    with self.assertRaises(errors.InvalidArgumentError):
      pb.activate_chain(self.tree, 0)

  def testLossByHand(self):
    loss = pb.loss_ik(np.zeros(3), np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
                      np.array([10.0, 10.0]), np.array([13.0, 14.0]), 1.0, 1e-4)
    self.assertAlmostEqual(loss, 1.0025, places=12)
    self.assertEqual(pb.loss_ik(np.ones(3), np.ones((1, 3)), np.zeros(2), np.zeros(2), 1.0, 1.0), 0.0)

  def testReachedNeedsLossAndDistance(self):
    config = pb.SolverConfig()
    problem = MakeProblem(self.tree, targets=[[0.0, 0.0, 0.0], [0.0, 0.01, 0.0]])
    self.assertAlmostEqual(pb.mean_distance(np.array([0.0, 0.005, 0.0]), problem.targets), 0.005)
    self.assertTrue(pb.Reached(1e-5, 1e-4, np.array([0.0, 0.005, 0.0]), problem, config))
    # Loss goal met, but the joint is about 2 cm from both points.
    self.assertFalse(pb.Reached(1e-5, 1e-4, np.array([0.02, 0.005, 0.0]), problem, config))
    self.assertFalse(pb.Reached(2e-4, 1e-4, np.array([0.0, 0.005, 0.0]), problem, config))

  def testLossEmptyTargets(self):
    with self.assertRaises(errors.InvalidArgumentError):
      pb.loss_ik(np.zeros(3), np.zeros((0, 3)), np.zeros(2), np.zeros(2), 1.0, 1e-4)

  def testValidateProblem(self):
    p = MakeProblem(self.tree)
    pb.ValidateProblem(self.tree, p)
    with self.assertRaises(errors.InvalidArgumentError):
      pb.ValidateProblem(self.tree, p._replace(targets=np.zeros((0, 3))))
    with self.assertRaises(errors.InvalidArgumentError):
      pb.ValidateProblem(self.tree, p._replace(targets=np.full((2, 3), np.nan)))

  def testValidateConfig(self):
    pb.ValidateConfig(pb.SolverConfig())
    for bad in (pb.SolverConfig(gamma=0.0), pb.SolverConfig(gamma=math.radians(120)),
                pb.SolverConfig(stop_factor=1.5), pb.SolverConfig(max_iterations=0),
                pb.SolverConfig(eps1=-1.0), pb.SolverConfig(hidden_sizes=(0,)),
                pb.SolverConfig(target_tolerance=0.0), pb.SolverConfig(plateau_factor=1.0),
                pb.SolverConfig(plateau_patience=0)):
      with self.assertRaises(errors.ConfigurationError):
        pb.ValidateConfig(bad)

  def testConfigDict(self):
    d = pb.SolverConfig().Dict()
    self.assertAlmostEqual(d['gamma_degrees'], 30.0)
    self.assertEqual(d['hidden_sizes'], [256, 256])

  def testDecodedAnglesStayInRange(self):
    chain = pb.activate_chain(self.tree, 2)
    for degrees in (30, 60, 90):
      config = pb.SolverConfig(gamma=math.radians(degrees))
      for _ in range(20):
        tape = tp.Tape()
        y = tape.Leaf(self.rng.normal(scale=20.0, size=pb.output_size(chain)))
        ts = pb.to_twist_swing(pb.decode_outputs(self.tree, chain, y, config), config)
        self.assertTrue(np.all(np.abs(ts.phi) <= config.gamma + 1e-12))
        self.assertTrue(np.all(np.abs(ts.alpha) <= config.gamma + 1e-12))
        np.testing.assert_allclose(np.linalg.norm(ts.swing_axis, axis=1), 1.0, atol=1e-12)

  def testZeroRawAxisFallsBack(self):
    chain = pb.activate_chain(self.tree, 7)
    config = pb.SolverConfig()
    tape = tp.Tape()
    y = tape.Leaf(np.zeros(pb.output_size(chain)))
    decoded = pb.decode_outputs(self.tree, chain, y, config)
    ts = pb.to_twist_swing(decoded, config)
    np.testing.assert_array_equal(ts.phi, 0.0)
    for k, j in enumerate(chain.rotation_joints):
      np.testing.assert_allclose(ts.swing_axis[k], pb.swing_fallback(self.tree, j))

  def testTapedPositionsMatchImprovedFk(self):
    for part in (1, 4, 7, 8, 12, 13):
      chain = pb.activate_chain(self.tree, part)
      problem = MakeProblem(self.tree, part, seed=part)
      for restrict in (True, False):
        config = pb.SolverConfig(restrict_range=restrict)
        tape = tp.Tape()
        y = tape.Leaf(self.rng.normal(scale=0.5, size=pb.output_size(chain)))
        decoded = pb.decode_outputs(self.tree, chain, y, config)
        target, root = pb.taped_positions(self.tree, problem.pose, chain, decoded)
        loss = pb.taped_loss(target, root, problem, config)

        ts = pb.to_twist_swing(decoded, config)
        fkr = forward.improved_fk(self.tree, problem.pose, ts, chain)
        np.testing.assert_allclose(target.value, fkr.target_position, atol=1e-12)
        np.testing.assert_allclose(root.value, fkr.positions[skeleton.ROOT], atol=1e-12)
        expected = pb.loss_ik(fkr.target_position, problem.targets,
                              pb.project_root_2d(fkr.positions[skeleton.ROOT], problem.camera),
                              problem.root_keypoint, config.eps1, config.eps2)
        self.assertAlmostEqual(float(loss.value), expected, places=10)

  def testInitialLossIsUnmodifiedPose(self):
    problem = MakeProblem(self.tree)
    chain = pb.activate_chain(self.tree, 1)
    target, root = pb.initial_positions(self.tree, problem, chain)
    expected = np.mean(np.sum((problem.targets - target) ** 2, axis=1))
    self.assertAlmostEqual(pb.initial_loss(self.tree, problem, chain, pb.SolverConfig()), expected,
                           places=12)

  def testComposePose(self):
    problem = MakeProblem(self.tree)
    chain = pb.activate_chain(self.tree, 1)
    k = len(chain.rotation_joints)
    axes = self.rng.normal(size=(k, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    ts = forward.TwistSwingParams(chain.rotation_joints, self.rng.uniform(-0.4, 0.4, k),
                                  self.rng.uniform(-0.4, 0.4, k), axes, np.array([0.01, 0.0, -0.02]))
    composed = pb.compose_pose(self.tree, problem.pose, ts)
    expected = forward.improved_fk(self.tree, problem.pose, ts, chain).positions
    np.testing.assert_allclose(forward.fk(self.tree, composed).positions[chain.joints],
                               expected[chain.joints], atol=1e-9)

  def testRotationMagnitude(self):
    chain = pb.activate_chain(self.tree, 1)
    ts = forward.TwistSwingParams.Zero(chain.rotation_joints)
    self.assertEqual(pb.rotation_magnitude(self.tree, ts), 0.0)
    ts.alpha[0] = 0.25
    self.assertAlmostEqual(pb.rotation_magnitude(self.tree, ts), 0.25, places=9)

  def testAlreadyConverged(self):
    problem = MakeProblem(self.tree)
    chain = pb.activate_chain(self.tree, 1)
    result = pb.AlreadyConverged('neural', self.tree, problem, chain, 0.0)
    self.assertTrue(result.converged)
    self.assertEqual(result.iterations, 0)
    self.assertEqual(result.stop_reason, pb.STOP_ALREADY_CONVERGED)
    np.testing.assert_allclose(result.pose.theta, problem.pose.theta, atol=1e-12)
    self.assertEqual(result.Dict()['twist_swing']['joints'], chain.rotation_joints)


if __name__ == '__main__':
  unittest.main()
