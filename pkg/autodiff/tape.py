"""A small reverse-mode differentiation tape over numpy arrays.

Every primitive is an entry in PRIMITIVES: a forward function and a
vector-Jacobian product. Nodes are appended in evaluation order, so the node
list is already topologically sorted and backward() is one reverse sweep.

  tape = Tape()
  x = tape.Leaf(3.0)
  y = x * x
  grads = tape.Backward(y)
  grads[x]   # 6.0
"""
import errors

from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np


# Vectors shorter than this cannot be normalized.
MIN_NORM = 1e-8

LEAF = 'leaf'
CONST = 'const'


class Primitive(NamedTuple):
  forward: Callable[..., np.ndarray]
  # vjp(g, out, *input_values, **kwargs) -> tuple of input adjoints
  vjp: Callable[..., Tuple[np.ndarray, ...]]


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
  """Sums `g` down to `shape`, undoing numpy broadcasting."""
  while g.ndim > len(shape):
    g = g.sum(axis=0)
  for axis, size in enumerate(shape):
    if size == 1 and g.shape[axis] != 1:
      g = g.sum(axis=axis, keepdims=True)
  return g


def _matmul_vjp(g, out, a, b):
  if a.ndim == 1 and b.ndim == 1:
    return g * b, g * a
  if a.ndim == 1:
    return b @ g, np.outer(a, g)
  if b.ndim == 1:
    return np.outer(g, b), a.T @ g
  return g @ b.T, a.T @ g


def _normalize(v):
  n = np.linalg.norm(v)
  if n < MIN_NORM:
    raise errors.DegenerateGeometryError(f'cannot normalize vector with norm {n}')
  return v / n


def _normalize_vjp(g, out, v):
  n = np.linalg.norm(v)
  return ((g - out * np.dot(out, g)) / n,)


def _norm_vjp(g, out, v):
  if out == 0.0:
    return (np.zeros_like(v),)
  return (g * v / out,)


def _skew(v):
  return np.array([[0.0, -v[2], v[1]],
                   [v[2], 0.0, -v[0]],
                   [-v[1], v[0], 0.0]])


def _skew_vjp(g, out, v):
  return (np.array([g[2, 1] - g[1, 2], g[0, 2] - g[2, 0], g[1, 0] - g[0, 1]]),)


def _index_vjp(g, out, x, key):
  z = np.zeros_like(x)
  np.add.at(z, key, g)
  return (z,)


def _stack_vjp(g, out, *xs):
  return tuple(g[i] for i in range(len(xs)))


def _concat_vjp(g, out, *xs):
  splits = np.cumsum([x.shape[0] for x in xs])[:-1]
  return tuple(np.split(g, splits))


def _mean_vjp(g, out, x):
  return (np.full_like(x, 1.0 / x.size) * g,)


PRIMITIVES: Dict[str, Primitive] = {
  'add': Primitive(
    lambda a, b: a + b,
    lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))),
  'sub': Primitive(
    lambda a, b: a - b,
    lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))),
  'mul': Primitive(
    lambda a, b: a * b,
    lambda g, out, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))),
  'div': Primitive(
    lambda a, b: a / b,
    lambda g, out, a, b: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape))),
  'neg': Primitive(lambda a: -a, lambda g, out, a: (-g,)),
  'matmul': Primitive(lambda a, b: a @ b, _matmul_vjp),
  'sin': Primitive(np.sin, lambda g, out, a: (g * np.cos(a),)),
  'cos': Primitive(np.cos, lambda g, out, a: (-g * np.sin(a),)),
  'tanh': Primitive(np.tanh, lambda g, out, a: (g * (1.0 - out * out),)),
  'sqrt': Primitive(np.sqrt, lambda g, out, a: (g * 0.5 / out,)),
  'norm': Primitive(lambda v: np.asarray(np.linalg.norm(v)), _norm_vjp),
  'normalize': Primitive(_normalize, _normalize_vjp),
  'skew': Primitive(_skew, _skew_vjp),
  'cross': Primitive(
    np.cross,
    lambda g, out, a, b: (np.cross(b, g), np.cross(g, a))),
  'sum': Primitive(lambda x: np.asarray(np.sum(x)), lambda g, out, x: (np.full_like(x, g),)),
  'mean': Primitive(lambda x: np.asarray(np.mean(x)), _mean_vjp),
  'index': Primitive(lambda x, key: x[key], _index_vjp),
  'stack': Primitive(lambda *xs: np.stack(xs), _stack_vjp),
  'concat': Primitive(lambda *xs: np.concatenate(xs), _concat_vjp),
  'reshape': Primitive(lambda x, shape: x.reshape(shape), lambda g, out, x, shape: (g.reshape(x.shape),)),
  'transpose': Primitive(lambda x: x.T, lambda g, out, x: (g.T,)),
}


Operand = Union['Node', float, np.ndarray]


class Node:
  """One recorded value. Arithmetic on nodes records new nodes."""

  __slots__ = ('tape', 'id', 'op', 'inputs', 'value', 'kwargs')

  # Makes numpy defer to the reflected operators, so ndarray + Node records.
  __array_ufunc__ = None

  def __init__(self, tape: 'Tape', op: str, inputs: Tuple['Node', ...], value: np.ndarray,
               kwargs: Optional[Dict[str, Any]]=None):
    self.tape = tape
    self.id = len(tape.nodes)
    self.op = op
    self.inputs = inputs
    self.value = value
    self.kwargs = kwargs or {}

  @property
  def shape(self) -> Tuple[int, ...]:
    return self.value.shape

  def __repr__(self):
    return f'Node({self.id}, {self.op}, shape={self.value.shape})'

  def __add__(self, other: Operand) -> 'Node':
    return self.tape.Apply('add', self, other)

  def __radd__(self, other: Operand) -> 'Node':
    return self.tape.Apply('add', other, self)

  def __sub__(self, other: Operand) -> 'Node':
    return self.tape.Apply('sub', self, other)

  def __rsub__(self, other: Operand) -> 'Node':
    return self.tape.Apply('sub', other, self)

  def __mul__(self, other: Operand) -> 'Node':
    return self.tape.Apply('mul', self, other)

  def __rmul__(self, other: Operand) -> 'Node':
    return self.tape.Apply('mul', other, self)

  def __truediv__(self, other: Operand) -> 'Node':
    return self.tape.Apply('div', self, other)

  def __rtruediv__(self, other: Operand) -> 'Node':
    return self.tape.Apply('div', other, self)

  def __neg__(self) -> 'Node':
    return self.tape.Apply('neg', self)

  def __matmul__(self, other: Operand) -> 'Node':
    return self.tape.Apply('matmul', self, other)

  def __rmatmul__(self, other: Operand) -> 'Node':
    return self.tape.Apply('matmul', other, self)

  def __getitem__(self, key) -> 'Node':
    return self.tape.Apply('index', self, key=key)

  @property
  def T(self) -> 'Node':
    return self.tape.Apply('transpose', self)


class Gradients:
  """Adjoints from one backward sweep, looked up by node."""

  def __init__(self, adjoints: Dict[int, np.ndarray]):
    self._adjoints = adjoints

  def __getitem__(self, node: Node) -> np.ndarray:
    g = self._adjoints.get(node.id)
    if g is None:
      return np.zeros_like(node.value)
    return g


class Tape:
  def __init__(self):
    self.nodes: List[Node] = []
    self.loss: Optional[Node] = None

  def Leaf(self, value) -> Node:
    """Records a differentiable input."""
    return self._Append(LEAF, (), np.array(value, dtype=np.float64))

  def Constant(self, value) -> Node:
    return self._Append(CONST, (), np.asarray(value, dtype=np.float64))

  def Apply(self, op: str, *operands: Operand, **kwargs) -> Node:
    """Evaluates primitive `op` and records it.

    Raises:
      TapeConstructionError for an unknown primitive or a node from another tape.
    """
    prim = PRIMITIVES.get(op)
    if prim is None:
      raise errors.TapeConstructionError(f'unsupported primitive "{op}"')

    inputs = tuple(self._Lift(x) for x in operands)
    value = np.asarray(prim.forward(*[x.value for x in inputs], **kwargs), dtype=np.float64)
    return self._Append(op, inputs, value, kwargs)

  def Backward(self, output: Optional[Node]=None, seed: Optional[np.ndarray]=None) -> Gradients:
    """Propagates adjoints from `output` (default: the loss node).

    A scalar output is seeded with 1; a non-scalar output needs `seed`, which
    yields the vector-Jacobian product seed^T J.

    Raises:
      TapeStateError if nothing has been recorded or the output is unknown.
    """
    output = output if output is not None else self.loss
    if output is None or not self.nodes:
      raise errors.TapeStateError('backward called before a forward pass was recorded')
    if output.tape is not self:
      raise errors.TapeStateError('output node belongs to a different tape')

    if seed is None:
      if output.value.size != 1:
        raise errors.TapeStateError(f'non-scalar output {output!r} needs an explicit seed')
      seed = np.ones_like(output.value)

    adjoints: Dict[int, np.ndarray] = {output.id: np.asarray(seed, dtype=np.float64)}
    for node in reversed(self.nodes[:output.id + 1]):
      g = adjoints.get(node.id)
      if g is None or not node.inputs:
        continue
      prim = PRIMITIVES[node.op]
      grads = prim.vjp(g, node.value, *[x.value for x in node.inputs], **node.kwargs)
      for x, gx in zip(node.inputs, grads):
        if x.op == CONST:
          continue
        prev = adjoints.get(x.id)
        adjoints[x.id] = gx if prev is None else prev + gx

    return Gradients(adjoints)

  def _Lift(self, x: Operand) -> Node:
    if isinstance(x, Node):
      if x.tape is not self:
        raise errors.TapeConstructionError('node belongs to a different tape')
      return x
    return self.Constant(x)

  def _Append(self, op: str, inputs: Tuple[Node, ...], value: np.ndarray,
              kwargs: Optional[Dict[str, Any]]=None) -> Node:
    node = Node(self, op, inputs, value, kwargs)
    self.nodes.append(node)
    return node


def record(fn: Callable[..., Node], *values) -> Tuple[Tape, Node, List[Node]]:
  """Records fn(tape, *leaves) with one leaf per value.

  Returns:
    The tape (with tape.loss set), the output node and the leaves.
  """
  tape = Tape()
  leaves = [tape.Leaf(v) for v in values]
  tape.loss = fn(tape, *leaves)
  return tape, tape.loss, leaves


# Thin functional helpers so taped code reads like numpy.
def sin(x: Node) -> Node:
  return x.tape.Apply('sin', x)


def cos(x: Node) -> Node:
  return x.tape.Apply('cos', x)


def tanh(x: Node) -> Node:
  return x.tape.Apply('tanh', x)


def sqrt(x: Node) -> Node:
  return x.tape.Apply('sqrt', x)


def norm(x: Node) -> Node:
  return x.tape.Apply('norm', x)


def normalize(x: Node) -> Node:
  return x.tape.Apply('normalize', x)


def skew(x: Node) -> Node:
  return x.tape.Apply('skew', x)


def cross(a: Node, b: Operand) -> Node:
  return a.tape.Apply('cross', a, b)


def sum(x: Node) -> Node:
  return x.tape.Apply('sum', x)


def mean(x: Node) -> Node:
  return x.tape.Apply('mean', x)


def stack(xs: Sequence[Node]) -> Node:
  return xs[0].tape.Apply('stack', *xs)


def concat(xs: Sequence[Node]) -> Node:
  return xs[0].tape.Apply('concat', *xs)


def reshape(x: Node, shape: Tuple[int, ...]) -> Node:
  return x.tape.Apply('reshape', x, shape=shape)
