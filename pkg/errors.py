"""Exception types shared across the kinematics, solver and contact code.

Everything derives from ValueError so callers that only care about "bad
input" can catch that.
"""


class Error(ValueError):
  pass


class InvalidArgumentError(Error):
  pass


class DegenerateGeometryError(Error):
  """Raised for zero-length bones, zero vectors and collinear point sets."""


class StructureError(Error):
  """Raised when a skeleton definition does not describe a valid tree."""


class ConfigurationError(Error):
  pass


class ProjectionError(Error):
  """Raised when a point is on or behind the camera plane."""


class TapeStateError(Error):
  pass


class TapeConstructionError(Error):
  pass


class ParseError(Error):
  def __init__(self, filename: str, message: str, line: int=0):
    self.filename = filename
    self.line = line
    where = f'{filename}:{line}' if line else filename
    super().__init__(f'{where}: {message}')
