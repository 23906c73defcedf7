"""Exception hierarchy shared across the package.

Each class doubles as the machine-parsable error category printed by the
CLI (one line, ``error: <Category>: <message>``). ``exit_code`` follows the
process contract: 2 usage, 3 data error, 4 budget or selection exhaustion.
"""


class BaseposeError(Exception):
    """Root of the package exception hierarchy."""

    exit_code = 3

    @property
    def category(self) -> str:
        return type(self).__name__


class InvalidConfig(BaseposeError):
    """A configuration value violates its documented constraints."""


class PlacementFailure(BaseposeError):
    """Random placement could not satisfy the geometric constraints."""


class NonPositiveDepth(BaseposeError):
    """Point at or behind the camera near plane cannot be projected."""


class DepthOutOfRange(BaseposeError):
    """Requested depth lies outside the camera's valid depth range."""


class EmptyInput(BaseposeError):
    """Operation received an empty sequence where data is required."""


class EmptyCloud(BaseposeError):
    """Point cloud with zero points where points are required."""


class EmptyDataset(BaseposeError):
    """Dataset with zero entries where training data is required."""


class WrongPointCount(BaseposeError):
    """Observation point count does not match the model configuration."""


class DimensionMismatch(BaseposeError):
    """Pose dimension does not match the mixture dimension."""


class IoFailure(BaseposeError):
    """File could not be read or written."""


class FormatVersionMismatch(BaseposeError):
    """Serialized artifact has an unknown magic header or format version."""


class NoValidViewpoint(BaseposeError):
    """Every sampled viewpoint failed the collision or visibility filter."""

    exit_code = 4


class RegionEmpty(BaseposeError):
    """Pose sampling region produced no acceptable sample within budget."""

    exit_code = 4


class SelectionExhausted(BaseposeError):
    """Pose selection rejected the maximum number of sampled candidates."""

    exit_code = 4


class BudgetExhausted(BaseposeError):
    """Rollout collection ran out of attempts before reaching its quota."""

    exit_code = 4
