"""Exception types shared across the planning stack."""


class CloudPlanError(Exception):
    """Base class for every library error."""


class UnknownObject(CloudPlanError):
    """An object id is not present in the cloud it was applied to."""


class EmptyCloud(CloudPlanError):
    """A point set that must be non-empty is empty."""


class InvalidVoxelSize(CloudPlanError):
    """Voxel size must be strictly positive."""


class DegenerateInput(CloudPlanError):
    """Not enough well-conditioned data to estimate a transform."""


class InvalidSpec(CloudPlanError):
    """A scene spec is internally inconsistent or cannot be realized."""


class MissingObject(CloudPlanError):
    """A task spec references an object the cloud does not contain."""


class EmptyDataset(CloudPlanError):
    """A fitting routine received no transitions."""


class UnfittedModel(CloudPlanError):
    """A model was queried before it was fitted."""


class NoApplicableMode(CloudPlanError):
    """No stored placement mode matches any anchor in the scene."""


class MismatchedObjects(CloudPlanError):
    """Clouds passed to a deviation computation disagree in objects or sizes."""


class NoPlanFound(CloudPlanError):
    """Search terminated without reaching any goal node.

    Carries the final search statistics in ``stats`` and the per-node search
    trace in ``trace`` when raised by a planner.
    """

    def __init__(self, message, stats=None, trace=()):
        super().__init__(message)
        self.stats = stats
        self.trace = tuple(trace)


class SchemaMismatch(CloudPlanError):
    """A persisted file carries an unexpected schema tag or version."""


class CorruptRecord(CloudPlanError):
    """A persisted file failed to parse; nothing was loaded."""


class ScriptFailure(CloudPlanError):
    """A scripted demonstration policy could not act in a sampled scene."""


class ConfigError(CloudPlanError):
    """A benchmark configuration is invalid."""
