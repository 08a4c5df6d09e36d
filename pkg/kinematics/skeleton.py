import errors

import json
import logging
import os

from typing import Any, Dict, List, NamedTuple

import numpy as np


# Overrides the shipped skeleton for every command that takes --skeleton.
SKELETON_ENV = 'HOIK_SKELETON'

SHIPPED_SKELETON = os.path.join(os.path.dirname(__file__), 'data', 'skeleton24.json')

CHAIN_NAMES = (
  'left_arm',
  'right_arm',
  'left_leg',
  'right_leg',
  'body',
)

ROOT = 0
ROOT_PARENT = -1

# Body parts are labelled 1..PART_COUNT; NO_CONTACT is the extra label used
# for object points that touch nothing.
PART_COUNT = 14
NO_CONTACT = 15


class Part(NamedTuple):
  label: int
  name: str
  chain: str
  target: int


class KinematicTree(NamedTuple):
  names: List[str]
  parents: List[int]
  rest_template: np.ndarray
  chains: Dict[str, List[int]]
  part_of_joint: List[int]
  parts: Dict[int, Part]

  @property
  def joint_count(self) -> int:
    return len(self.parents)

  def Children(self, joint: int) -> List[int]:
    return [i for i, p in enumerate(self.parents) if p == joint]

  def Depth(self, joint: int) -> int:
    depth = 0
    while self.parents[joint] != ROOT_PARENT:
      joint = self.parents[joint]
      depth += 1
    return depth


def DefaultPath() -> str:
  return os.environ.get(SKELETON_ENV) or SHIPPED_SKELETON


def Validate(tree: KinematicTree) -> None:
  """Checks the tree invariants.

  Raises:
    StructureError on any violation.
  """
  n = tree.joint_count
  if n < 1:
    raise errors.StructureError('skeleton has no joints')
  if tree.parents[ROOT] != ROOT_PARENT:
    raise errors.StructureError(f'joint 0 must be the root (parent {ROOT_PARENT})')

  for i in range(1, n):
    p = tree.parents[i]
    if p < 0 or p >= n or p == i:
      raise errors.StructureError(f'joint {i} has invalid parent {p}')

  # Walking up from any joint must reach the root within n steps.
  for i in range(n):
    j, steps = i, 0
    while j != ROOT:
      j = tree.parents[j]
      steps += 1
      if steps > n:
        raise errors.StructureError(f'cycle through joint {i}')

  if tree.rest_template.shape != (n, 3):
    raise errors.StructureError(
      f'template has shape {tree.rest_template.shape}, expected ({n}, 3)')
  if not np.all(np.isfinite(tree.rest_template)):
    raise errors.StructureError('template has non-finite entries')

  if sorted(tree.chains.keys()) != sorted(CHAIN_NAMES):
    raise errors.StructureError(
      f'expected chains {list(CHAIN_NAMES)}, got {sorted(tree.chains.keys())}')
  for name, chain in tree.chains.items():
    if not chain or chain[0] != ROOT:
      raise errors.StructureError(f'chain "{name}" must start at the root')
    for prev, cur in zip(chain, chain[1:]):
      if not 0 <= cur < n or tree.parents[cur] != prev:
        raise errors.StructureError(
          f'chain "{name}": joint {cur} is not a child of {prev}')

  if len(tree.part_of_joint) != n:
    raise errors.StructureError('joint_parts must have one entry per joint')
  for i, part in enumerate(tree.part_of_joint):
    if not 1 <= part <= PART_COUNT:
      raise errors.StructureError(f'joint {i} has invalid part {part}')

  for label, part in tree.parts.items():
    if not 1 <= label <= PART_COUNT:
      raise errors.StructureError(f'invalid part label {label}')
    if part.chain not in tree.chains:
      raise errors.StructureError(f'part {label} references unknown chain "{part.chain}"')
    if part.target not in tree.chains[part.chain]:
      raise errors.StructureError(
        f'part {label} target {part.target} is not on chain "{part.chain}"')


def FromDict(data: Dict[str, Any]) -> KinematicTree:
  """Builds and validates a tree from the parsed skeleton JSON document."""
  try:
    parents = [int(p) for p in data['parents']]
    n = len(parents)
    parts = {}
    for row in data.get('parts', []):
      part = Part(int(row['label']), str(row['name']), str(row['chain']), int(row['target']))
      parts[part.label] = part

    tree = KinematicTree(
      names=list(data.get('names', [f'joint{i}' for i in range(n)])),
      parents=parents,
      rest_template=np.asarray(data['template'], dtype=np.float64),
      chains={k: [int(j) for j in v] for k, v in data['chains'].items()},
      part_of_joint=[int(p) for p in data['joint_parts']],
      parts=parts)
  except (KeyError, TypeError, ValueError) as e:
    raise errors.StructureError(f'malformed skeleton definition: {e!r}') from e

  Validate(tree)
  return tree


def Load(filename: str) -> KinematicTree:
  """Loads a skeleton definition file.

  Raises:
    FileNotFoundError if filename isn't present.
    ParseError if the file is not valid JSON.
    StructureError if the definition violates the tree invariants.
  """
  with open(filename) as f:
    try:
      data = json.load(f)
    except json.JSONDecodeError as e:
      raise errors.ParseError(filename, e.msg, e.lineno) from e

  tree = FromDict(data)
  logging.debug('Loaded skeleton "%s": %d joints, %d parts',
    filename, tree.joint_count, len(tree.parts))
  return tree
