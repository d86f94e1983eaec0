"""Exception types shared across the library."""


class GraspPlanningError(Exception):
    """Base class for all library-specific failures."""


class EmptyInputError(GraspPlanningError, ValueError):
    """An operation that requires points received an empty cloud."""


class EmptyAfterPreprocessError(GraspPlanningError):
    """Preprocessing removed every point of the input cloud."""


class InsufficientPointsError(GraspPlanningError, ValueError):
    """Fewer points than the operation's minimum (e.g. k-NN with n < k)."""


class DimensionError(GraspPlanningError, ValueError):
    """Vector or joint-configuration dimensions do not match the model."""


class NoTrajectoryFoundError(GraspPlanningError):
    """The sampler exhausted its budget without reaching the goal region."""


class NoCandidatesError(GraspPlanningError):
    """Endpoint selection was invoked without candidate trajectories."""


class InvalidSceneError(GraspPlanningError, ValueError):
    """Scene configuration cannot be synthesized (e.g. camera inside object)."""
