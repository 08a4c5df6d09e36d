#!/usr/bin/env python3

import bench
import contact
import errors
import evaluate
import scene as scene_lib
from ik import problem as pb
from ik import solvers
from kinematics import forward
from kinematics import skeleton

import argparse
import configparser
import faulthandler
import json
import logging
import math
import sys

from typing import Any, Dict, NamedTuple, Optional, Sequence, Tuple

import prometheus_client    # type: ignore[import]


# Metrics
RUN_INFO = prometheus_client.Info(
  'hoik_run',
  'Command hoik was invoked with')

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2
EXIT_MAX_ITERS = 3


class Configuration(NamedTuple):
  solver: pb.SolverConfig = pb.SolverConfig()
  threshold: float = contact.DEFAULT_THRESHOLD
  window: int = contact.DEFAULT_WINDOW
  workers: int = 1
  bench_max_workers: int = bench.MaxThreads
  gammas_degrees: Tuple[float, ...] = bench.GAMMAS_DEGREES


def _floats(value: str) -> Tuple[float, ...]:
  return tuple(float(x) for x in value.split(',') if x.strip())


def _read_config(filename: Optional[str]) -> Configuration:
  """Reads the INI file; missing sections and keys keep their defaults."""
  defaults = Configuration()
  if not filename:
    return defaults

  logging.info('Reading "%s"', filename)
  config = configparser.ConfigParser()
  try:
    if not config.read(filename):
      raise FileNotFoundError(filename)
  except configparser.Error as e:
    logging.critical('Could not read "%s": %s', filename, e)
    raise

  try:
    s = defaults.solver
    sec = config['Solver'] if config.has_section('Solver') else {}
    gamma = s.gamma
    if 'gamma_degrees' in sec:
      gamma = math.radians(float(sec['gamma_degrees']))
    hidden = s.hidden_sizes
    if 'hidden_sizes' in sec:
      hidden = tuple(int(h) for h in sec['hidden_sizes'].split(','))

    solver = s._replace(
      gamma=gamma,
      eps1=float(sec.get('eps1', s.eps1)),
      eps2=float(sec.get('eps2', s.eps2)),
      learning_rate=float(sec.get('learning_rate', s.learning_rate)),
      max_iterations=int(sec.get('max_iterations', s.max_iterations)),
      stop_factor=float(sec.get('stop_factor', s.stop_factor)),
      target_tolerance=float(sec.get('target_tolerance', s.target_tolerance)),
      plateau_patience=int(sec.get('plateau_patience', s.plateau_patience)),
      plateau_factor=float(sec.get('plateau_factor', s.plateau_factor)),
      seed=int(sec.get('seed', s.seed)),
      hidden_sizes=hidden,
      output_scale=float(sec.get('output_scale', s.output_scale)),
      restrict_range=config.getboolean('Solver', 'restrict_range', fallback=s.restrict_range))

    return Configuration(
      solver=solver,
      threshold=config.getfloat('Contact', 'threshold', fallback=defaults.threshold),
      window=config.getint('Contact', 'window', fallback=defaults.window),
      workers=config.getint('Contact', 'workers', fallback=defaults.workers),
      bench_max_workers=config.getint('Bench', 'max_workers', fallback=defaults.bench_max_workers),
      gammas_degrees=_floats(config.get('Bench', 'gammas_degrees', fallback=''))
        or defaults.gammas_degrees)
  except ValueError as e:
    logging.critical('Invalid value in "%s": %s', filename, e)
    raise errors.ConfigurationError(f'{filename}: {e}') from e


def _solver_config(config: pb.SolverConfig, args: argparse.Namespace) -> pb.SolverConfig:
  """Applies command-line overrides on top of the file configuration."""
  overrides: Dict[str, Any] = {}
  if args.gamma is not None:
    overrides['gamma'] = math.radians(args.gamma)
  if args.eps1 is not None:
    overrides['eps1'] = args.eps1
  if args.eps2 is not None:
    overrides['eps2'] = args.eps2
  if args.lr is not None:
    overrides['learning_rate'] = args.lr
  if args.max_iters is not None:
    overrides['max_iterations'] = args.max_iters
  if args.seed is not None:
    overrides['seed'] = args.seed
  if args.unrestricted:
    overrides['restrict_range'] = False
  return config._replace(**overrides)


def _emit(text: str, out: Optional[str]) -> None:
  if out:
    with open(out, 'w') as f:
      f.write(text)
  else:
    sys.stdout.write(text)


def _skeleton_path(args: argparse.Namespace) -> str:
  return args.skeleton or skeleton.DefaultPath()


def cmd_fk(args: argparse.Namespace, config: Configuration) -> int:
  tree = skeleton.Load(_skeleton_path(args))
  pose = scene_lib.LoadPose(args.pose)
  positions = forward.fk(tree, pose).positions
  _emit(json.dumps({
    'names': tree.names,
    'positions': positions.tolist(),
  }, indent=2) + '\n', args.out)
  return EXIT_OK


def cmd_contact(args: argparse.Namespace, config: Configuration) -> int:
  """Labels one scene, or a sequence of scenes given as repeated --scene flags."""
  scenes = [scene_lib.Load(s, args.skeleton) for s in args.scene]
  for filename, sc in zip(args.scene, scenes):
    if sc.human_mesh is None:
      raise errors.InvalidArgumentError(f'scene "{filename}" has no human mesh')
  if args.features and len(scenes) != 1:
    raise errors.InvalidArgumentError('--features needs exactly one --scene')

  threshold = config.threshold if args.threshold is None else args.threshold
  clouds = contact.contact_label_sequence([sc.object_points for sc in scenes],
                                          [sc.human_mesh for sc in scenes], threshold, config.workers)

  if len(clouds) == 1 and args.out:
    scene_lib.WriteLabels(args.out, clouds[0])
  elif len(clouds) == 1:
    sys.stdout.write(json.dumps({'labels': clouds[0].class_indices.tolist()}) + '\n')
  else:
    text = json.dumps({'frames': [
      {'scene': filename, 'labels': c.class_indices.tolist()} for filename, c in zip(args.scene, clouds)
    ]}) + '\n'
    if args.out:
      with open(args.out, 'w') as f:
        f.write(text)
    else:
      sys.stdout.write(text)

  if args.features:
    grid = scene_lib.LoadFeatureGrid(args.features)
    fused = contact.fuse_point_features(scenes[0].object_points, grid, scenes[0].camera, config.window)
    scene_lib.WriteFeatures(args.features_out, fused)
    logging.info('Wrote %d x %d point features to %s', fused.shape[0], fused.shape[1], args.features_out)

  for filename, cloud in zip(args.scene, clouds):
    contacted = int((cloud.class_indices != skeleton.NO_CONTACT).sum())
    logging.info('%s: %d of %d object points in contact', filename, contacted, cloud.points.shape[0])
  return EXIT_OK


def _ik_row(part: int, result: pb.IKResult, report: Optional[evaluate.MetricReport]) -> Dict[str, Any]:
  row = {
    'part': part,
    'solver': result.solver,
    'chain': result.chain,
    'stop_reason': result.stop_reason,
    'iterations': result.iterations,
    'initial_loss': result.initial_loss,
    'final_loss': result.final_loss,
    'mean_target_distance_cm': 100.0 * result.mean_target_distance,
    'rotation_magnitude_deg': result.rotation_magnitude_deg,
  }
  if report is not None:
    row['chamfer_cm'] = report.chamfer_cm
    row['pa_chamfer_cm'] = report.pa_chamfer_cm
  return row


def cmd_ik(args: argparse.Namespace, config: Configuration) -> int:
  """Solves every contact of the scene in turn, each from the previous result."""
  sc = scene_lib.Load(args.scene, args.skeleton)
  tree = skeleton.Load(sc.skeleton_path)
  solver_config = _solver_config(config.solver, args)
  solver = solvers.MakeSolver(args.solver, tree, solver_config)

  pose = sc.pose
  rows, docs = [], []
  exit_code = EXIT_OK
  for problem in scene_lib.MakeProblems(tree, sc, config.threshold, config.workers):
    result = solver.Solve(problem._replace(pose=pose))
    pose = result.pose
    if result.stop_reason == pb.STOP_MAX_ITERS:
      exit_code = EXIT_MAX_ITERS

    report = None
    if sc.gt_pose is not None:
      report = scene_lib.JointReport(tree, result.pose, sc.gt_pose)
    rows.append(_ik_row(problem.part_label, result, report))
    doc = result.Dict()
    doc['part'] = problem.part_label
    if report is not None:
      doc['evaluation'] = report.Dict()
    docs.append(doc)

  if args.format == 'json':
    _emit(json.dumps(docs, indent=2) + '\n', args.out)
  else:
    _emit(scene_lib.ReportText(rows, 'csv'), args.out)
  if args.pose_out:
    scene_lib.WritePose(args.pose_out, pose)
  return exit_code


def cmd_eval(args: argparse.Namespace, config: Configuration) -> int:
  predicted = scene_lib.LoadPoints(args.predicted)
  truth = scene_lib.LoadPoints(args.truth)
  report = evaluate.evaluate(predicted, truth)
  row = report.Row(args.sequence, args.frame)
  _emit(scene_lib.ReportText([row], args.format), args.out)
  return EXIT_OK


def cmd_bench(args: argparse.Namespace, config: Configuration) -> int:
  bench.MaxThreads = config.bench_max_workers
  gammas = _floats(args.gammas) if args.gammas else config.gammas_degrees
  logging.info('Benchmark with %d workers, gammas %s', bench.MaxThreads, gammas)

  csv_text, markdown = bench.RunBench(args.suite, _solver_config(config.solver, args), gammas,
                                      args.skeleton)
  if args.out:
    _emit(csv_text, args.out)
    _emit(markdown, args.out.rsplit('.', 1)[0] + '.md')
    sys.stdout.write(markdown)
  else:
    sys.stdout.write(csv_text + '\n' + markdown)
  return EXIT_OK


COMMANDS = {
  'fk': cmd_fk,
  'contact': cmd_contact,
  'ik': cmd_ik,
  'eval': cmd_eval,
  'bench': cmd_bench,
}


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
  parser.add_argument('--gamma', help='Twist/swing bound, degrees', type=float, default=None)
  parser.add_argument('--eps1', help='3D contact loss weight', type=float, default=None)
  parser.add_argument('--eps2', help='2D root keypoint loss weight', type=float, default=None)
  parser.add_argument('--lr', help='Learning rate', type=float, default=None)
  parser.add_argument('--max-iters', dest='max_iters', help='Iteration cap', type=int, default=None)
  parser.add_argument('--seed', help='Network initialization seed', type=int, default=None)
  parser.add_argument('--unrestricted', help='Map network outputs straight to angles',
                      action='store_true')


def MakeParser(prog: str) -> argparse.ArgumentParser:
  common = argparse.ArgumentParser(add_help=False)
  common.add_argument('--config', help='Configuration file (INI file)', default=None)
  common.add_argument('--skeleton', help=f'Skeleton JSON (default ${skeleton.SKELETON_ENV} or shipped)',
                      default=None)
  common.add_argument('--out', help='Output file (default stdout)', default=None)
  common.add_argument('--format', help='Report format', choices=['json', 'csv'], default='json')
  common.add_argument('--verbose', help='Debug logging', action='store_true')
  common.add_argument('--promport', help='Port to run Prometheus webserver on', default=None)
  common.add_argument('--metrics_out', help='Write Prometheus metrics to this file on exit',
                      default=None)

  parser = argparse.ArgumentParser(prog=prog)
  sub = parser.add_subparsers(dest='command', required=True)

  p = sub.add_parser('fk', parents=[common], help='Joint positions of a pose')
  p.add_argument('--pose', help='Pose JSON', required=True)

  p = sub.add_parser('contact', parents=[common], help='Contact labels for a scene or a sequence')
  p.add_argument('--scene', help='Scene JSON; repeat for a sequence of frames', action='append', required=True)
  p.add_argument('--threshold', help='Contact distance, meters', type=float, default=None)
  p.add_argument('--features', help='Image feature grid (.npy, H/4 x W/4 x C) to fuse', default=None)
  p.add_argument('--features_out', help='Where to write the fused N x (3 + C) features (.npy)',
                 default='features.npy')

  p = sub.add_parser('ik', parents=[common], help='Solve the scene contacts')
  p.add_argument('--scene', help='Scene JSON', required=True)
  p.add_argument('--solver', help='Solver', choices=sorted(solvers.SOLVERS), default='neural')
  p.add_argument('--pose_out', help='Write the final pose here', default=None)
  _add_solver_flags(p)

  p = sub.add_parser('eval', parents=[common], help='Chamfer metrics of two meshes')
  p.add_argument('--predicted', help='Predicted vertices (.obj/.bin/.json)', required=True)
  p.add_argument('--truth', help='Ground-truth vertices (.obj/.bin/.json)', required=True)
  p.add_argument('--sequence', help='Sequence id for the report row', default='')
  p.add_argument('--frame', help='Frame number for the report row', type=int, default=0)

  p = sub.add_parser('bench', parents=[common], help='Solver and gamma sweep over a suite')
  p.add_argument('--suite', help='Suite JSON', required=True)
  p.add_argument('--gammas', help='Comma-separated gammas, degrees', default=None)
  _add_solver_flags(p)

  return parser


def main(argv: Sequence[str]) -> int:
  """Runs one command and returns the process exit code."""
  args = MakeParser(argv[0]).parse_args(argv[1:])

  logging.basicConfig(
      format='%(asctime)s %(levelname)8s %(message)s',
      datefmt='%Y/%m/%d %H:%M:%S',
      level=logging.DEBUG if args.verbose else logging.INFO)

  if args.promport:
    prometheus_client.start_http_server(int(args.promport))

  RUN_INFO.info({'command': args.command, 'solver': getattr(args, 'solver', '')})

  try:
    config = _read_config(args.config)
    code = COMMANDS[args.command](args, config)
  except (errors.ParseError, errors.StructureError, errors.InvalidArgumentError,
          errors.ConfigurationError, configparser.Error, json.JSONDecodeError) as e:
    logging.error('%s: %s', args.command, e)
    code = EXIT_INVALID
  except (errors.Error, OSError) as e:
    logging.error('%s failed: %s', args.command, e)
    code = EXIT_RUNTIME

  if args.metrics_out:
    prometheus_client.write_to_textfile(args.metrics_out, prometheus_client.REGISTRY)
  return code


if __name__ == '__main__':
  faulthandler.enable()
  sys.exit(main(sys.argv))
