"""Benchmark harness: solver x gamma x loss-variant sweeps over a problem suite.

A suite file is JSON:

  {
    "skeleton": "skeleton.json",             optional
    "synthetic": {"count": 100, "seed": 0, "perturbation_deg": 30,
                  "translation": 0.02, "parts": [1, 2, ...],
                  "points_per_target": 1, "patch_radius": 0.0},
    "scenes": ["scene1.json", ...]           optional
  }

Synthetic problems are reachable by construction: the targets are the
improved_fk positions of a random twist-swing perturbation of the pose.
"""
import camera as camera_lib
import errors
import scene as scene_lib
from ik import problem as pb
from ik import solvers
from kinematics import forward
from kinematics import skeleton

import concurrent.futures
import csv
import io
import json
import logging
import math
import os
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np


# Module-level tunables
MaxThreads = 4

GAMMAS_DEGREES = (30.0, 60.0, 90.0)
SOLVER_NAMES = ('neural', 'trm')

VARIANT_DEFAULT = 'default'
VARIANT_NO_2D = 'no_2d'

# Thighs have no rotation joint between the root and their target.
DEFAULT_PARTS = (1, 2, 3, 4, 5, 6, 7, 8, 11, 12, 13, 14)

# Scale of the random initial pose, radians per axis-angle component.
INITIAL_POSE_SCALE = 0.15


class SyntheticSpec(NamedTuple):
  count: int = 100
  seed: int = 0
  perturbation_deg: float = 30.0
  translation: float = 0.02
  parts: Tuple[int, ...] = DEFAULT_PARTS
  points_per_target: int = 1
  patch_radius: float = 0.0


class Suite(NamedTuple):
  skeleton_path: str
  synthetic: Optional[SyntheticSpec]
  scenes: List[str]


def LoadSuite(filename: str, skeleton_path: Optional[str]=None) -> Suite:
  with open(filename) as f:
    try:
      data = json.load(f)
    except json.JSONDecodeError as e:
      raise errors.ParseError(filename, e.msg, e.lineno) from e

  base = os.path.dirname(os.path.abspath(filename))

  def resolve(path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base, path)

  synthetic = None
  try:
    if data.get('synthetic') is not None:
      s = data['synthetic']
      defaults = SyntheticSpec()
      synthetic = SyntheticSpec(
        count=int(s.get('count', defaults.count)),
        seed=int(s.get('seed', defaults.seed)),
        perturbation_deg=float(s.get('perturbation_deg', defaults.perturbation_deg)),
        translation=float(s.get('translation', defaults.translation)),
        parts=tuple(int(p) for p in s.get('parts', defaults.parts)),
        points_per_target=int(s.get('points_per_target', defaults.points_per_target)),
        patch_radius=float(s.get('patch_radius', defaults.patch_radius)))
    scenes = [resolve(p) for p in data.get('scenes', [])]
  except (AttributeError, TypeError, ValueError) as e:
    raise errors.ParseError(filename, f'malformed suite: {e!r}') from e

  if skeleton_path is None:
    skeleton_path = resolve(data['skeleton']) if data.get('skeleton') else skeleton.DefaultPath()
  return Suite(skeleton_path, synthetic, scenes)


def _RandomUnit(rng: np.random.Generator) -> np.ndarray:
  v = rng.normal(size=3)
  return v / np.linalg.norm(v)


def MakeSyntheticProblem(tree: skeleton.KinematicTree, rng: np.random.Generator, part: int,
                         spec: SyntheticSpec, camera: camera_lib.Camera) -> pb.IKProblem:
  """A reachable problem for one body part.

  The targets are where a random twist-swing perturbation (angles within
  spec.perturbation_deg) and root shift put the part's target joint; the
  root keypoint is the projection of the shifted root.
  """
  theta = rng.normal(scale=INITIAL_POSE_SCALE, size=(tree.joint_count, 3))
  pose = forward.PoseState(theta, np.zeros(3))
  chain = pb.activate_chain(tree, part)

  limit = math.radians(spec.perturbation_deg)
  k = len(chain.rotation_joints)
  ts = forward.TwistSwingParams(
    joints=chain.rotation_joints,
    phi=rng.uniform(-limit, limit, size=k),
    alpha=rng.uniform(-limit, limit, size=k),
    swing_axis=np.array([_RandomUnit(rng) for _ in range(k)]).reshape(k, 3),
    delta_t=rng.uniform(-spec.translation, spec.translation, size=3))
  moved = forward.improved_fk(tree, pose, ts, chain)

  offsets = rng.normal(scale=spec.patch_radius, size=(spec.points_per_target, 3))
  offsets -= offsets.mean(axis=0)
  targets = moved.target_position + offsets

  keypoint = camera.Project(moved.positions[skeleton.ROOT])
  return pb.IKProblem(pose, targets, part, keypoint, camera)


def SyntheticProblems(tree: skeleton.KinematicTree, spec: SyntheticSpec) -> List[pb.IKProblem]:
  rng = np.random.default_rng(spec.seed)
  camera = camera_lib.LookingAtBody()
  parts = list(spec.parts)
  if not parts:
    raise errors.InvalidArgumentError('synthetic suite has no parts')
  return [MakeSyntheticProblem(tree, rng, parts[i % len(parts)], spec, camera)
          for i in range(spec.count)]


def SuiteProblems(tree: skeleton.KinematicTree, suite: Suite) -> List[pb.IKProblem]:
  problems = []
  if suite.synthetic is not None:
    problems += SyntheticProblems(tree, suite.synthetic)
  for filename in suite.scenes:
    problems += scene_lib.MakeProblems(tree, scene_lib.Load(filename, suite.skeleton_path))

  if not problems:
    raise errors.InvalidArgumentError('benchmark suite is empty')
  logging.info('Suite has %d problems', len(problems))
  return problems


class RunKey(NamedTuple):
  solver: str
  variant: str
  gamma_degrees: float


class SolveTask(NamedTuple):
  """One unit of benchmark work, shipped to a worker process."""
  key: RunKey
  config: pb.SolverConfig
  problem: pb.IKProblem


# Skeleton of this worker process; set once by _InitWorker.
_worker_tree: Optional[skeleton.KinematicTree] = None


def _InitWorker(tree: skeleton.KinematicTree) -> None:
  global _worker_tree
  _worker_tree = tree


def _Solve(task: SolveTask) -> pb.IKResult:
  assert _worker_tree is not None
  return solvers.MakeSolver(task.key.solver, _worker_tree, task.config).Solve(task.problem)


def VariantConfig(config: pb.SolverConfig, variant: str, gamma_degrees: float) -> pb.SolverConfig:
  config = config._replace(gamma=math.radians(gamma_degrees))
  if variant == VARIANT_NO_2D:
    config = config._replace(eps2=0.0)
  return config


def Run(tree: skeleton.KinematicTree, problems: Sequence[pb.IKProblem], config: pb.SolverConfig,
        gammas_degrees: Sequence[float]=GAMMAS_DEGREES,
        solver_names: Sequence[str]=SOLVER_NAMES,
        variants: Sequence[str]=(VARIANT_DEFAULT, VARIANT_NO_2D)) -> Dict[RunKey, List[pb.IKResult]]:
  """Solves every problem under every (solver, variant, gamma) in MaxThreads processes.

  Results keep the problem order regardless of completion order.
  """
  if not problems:
    raise errors.InvalidArgumentError('benchmark suite is empty')

  keys = [RunKey(s, v, float(g)) for s in solver_names for v in variants for g in gammas_degrees]
  tasks = [SolveTask(key, VariantConfig(config, key.variant, key.gamma_degrees), p)
           for key in keys for p in problems]
  # About four chunks per worker.
  chunksize = max(1, len(tasks) // (4 * MaxThreads))

  results: Dict[RunKey, List[pb.IKResult]] = {key: [] for key in keys}
  with concurrent.futures.ProcessPoolExecutor(max_workers=MaxThreads, initializer=_InitWorker,
                                              initargs=(tree,)) as pool:
    for task, result in zip(tasks, pool.map(_Solve, tasks, chunksize=chunksize)):
      results[task.key].append(result)

  logging.info('Benchmark finished: %d runs of %d problems', len(keys), len(problems))
  return results


def root_offset_px(tree: skeleton.KinematicTree, problem: pb.IKProblem,
                   result: pb.IKResult) -> float:
  root = forward.fk(tree, result.pose).positions[skeleton.ROOT]
  return float(np.linalg.norm(problem.camera.Project(root) - problem.root_keypoint))


CSV_FIELDS = [
  'solver',
  'variant',
  'gamma_degrees',
  'problems',
  'convergence_rate',
  'mean_iterations',
  'mean_final_loss',
  'mean_target_distance_cm',
  'mean_rotation_deg',
  'mean_root_offset_px',
]


def Aggregate(tree: skeleton.KinematicTree, problems: Sequence[pb.IKProblem],
              results: Dict[RunKey, List[pb.IKResult]]) -> List[Dict[str, Any]]:
  rows = []
  for key in sorted(results):
    rs = results[key]
    rows.append({
      'solver': key.solver,
      'variant': key.variant,
      'gamma_degrees': f'{key.gamma_degrees:g}',
      'problems': len(rs),
      'convergence_rate': f'{np.mean([r.converged for r in rs]):.4f}',
      'mean_iterations': f'{np.mean([r.iterations for r in rs]):.2f}',
      'mean_final_loss': f'{np.mean([r.final_loss for r in rs]):.6e}',
      'mean_target_distance_cm': f'{100.0 * np.mean([r.mean_target_distance for r in rs]):.4f}',
      'mean_rotation_deg': f'{np.mean([r.rotation_magnitude_deg for r in rs]):.4f}',
      'mean_root_offset_px': f'{np.mean([root_offset_px(tree, p, r) for p, r in zip(problems, rs)]):.4f}',
    })
  return rows


def RotationTrend(results: Dict[RunKey, List[pb.IKResult]], solver: str,
                  variant: str) -> Optional[Tuple[bool, float]]:
  """Whether mean off-target rotation grows with gamma, and the share of
  problems whose rotation at the smallest gamma is at most that at the largest.
  """
  keys = sorted(k for k in results if k.solver == solver and k.variant == variant)
  if len(keys) < 2:
    return None
  means = [np.mean([r.rotation_magnitude_deg for r in results[k]]) for k in keys]
  monotone = all(a <= b for a, b in zip(means, means[1:]))
  low, high = results[keys[0]], results[keys[-1]]
  share = float(np.mean([a.rotation_magnitude_deg <= b.rotation_magnitude_deg
                         for a, b in zip(low, high)]))
  return monotone, share


def CsvText(rows: List[Dict[str, Any]]) -> str:
  out = io.StringIO()
  writer = csv.DictWriter(out, fieldnames=CSV_FIELDS, lineterminator='\n')
  writer.writeheader()
  writer.writerows(rows)
  return out.getvalue()


def MarkdownTable(rows: List[Dict[str, Any]], results: Dict[RunKey, List[pb.IKResult]]) -> str:
  lines = [
    '| ' + ' | '.join(CSV_FIELDS) + ' |',
    '|' + '---|' * len(CSV_FIELDS),
  ]
  for row in rows:
    lines.append('| ' + ' | '.join(str(row[f]) for f in CSV_FIELDS) + ' |')

  lines.append('')
  pairs = sorted({(k.solver, k.variant) for k in results})
  for solver, variant in pairs:
    trend = RotationTrend(results, solver, variant)
    if trend is None:
      continue
    monotone, share = trend
    lines.append(
      f'- {solver}/{variant}: off-target rotation {"non-decreasing" if monotone else "NOT monotone"} '
      f'in gamma; smallest <= largest gamma on {100.0 * share:.1f}% of problems')
  return '\n'.join(lines) + '\n'


def RunBench(suite_file: str, config: pb.SolverConfig, gammas_degrees: Sequence[float]=GAMMAS_DEGREES,
             skeleton_path: Optional[str]=None) -> Tuple[str, str]:
  """Loads a suite, runs the sweep and returns (csv text, markdown text)."""
  suite = LoadSuite(suite_file, skeleton_path)
  tree = skeleton.Load(suite.skeleton_path)
  problems = SuiteProblems(tree, suite)
  results = Run(tree, problems, config, gammas_degrees)
  rows = Aggregate(tree, problems, results)
  return CsvText(rows), MarkdownTable(rows, results)

