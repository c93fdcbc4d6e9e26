"""Exception types shared across the package.

Everything raised on purpose derives from NewvisionError so callers can catch
one base class at module boundaries (the CLI and the HTTP service rely on
this to map failures onto exit codes and status codes).
"""


class NewvisionError(Exception):
    """Base class for all deliberate failures."""


# --- tensor / autodiff ---

class ShapeMismatch(NewvisionError):
    """Operands have incompatible shapes."""


class NotScalar(NewvisionError):
    """backward() was asked to differentiate a non-scalar value."""


class DetachedLoss(NewvisionError):
    """The value handed to backward() is not a node of the given tape."""


class AllIgnored(NewvisionError):
    """Every row of a cross-entropy batch carries the ignore label."""


class OutOfRange(NewvisionError):
    """An index or target id falls outside the valid range."""


class NanGradient(NewvisionError):
    """A non-finite value appeared in a gradient during training."""


class ConfigError(NewvisionError):
    """A configuration value is invalid or inconsistent."""


# --- model inputs ---

class BadImageShape(NewvisionError):
    """Image array is not (H, W, 3) with the configured resolution."""


class MissingRoleToken(NewvisionError):
    """Token ids lack the role marker required by the requested pathway."""


class MissingImage(NewvisionError):
    """A grounded pathway was invoked without image features."""


class TooLong(NewvisionError):
    """A token sequence exceeds the configured maximum length."""


# --- data generation ---

class CannotFalsify(NewvisionError):
    """No perturbation of a statement flips its truth within the budget."""


class UnknownPolicy(NewvisionError):
    """Augmentation policy name is not one of the supported set."""


class CorpusExhausted(NewvisionError):
    """Could not generate enough mutually distinguishable scenes."""


# --- training / evaluation ---

class MissingCorpus(NewvisionError):
    """Training was started without a usable data directory."""


class MissingTeacher(NewvisionError):
    """Distillation requires a teacher checkpoint and none was given."""


class EmptySplit(NewvisionError):
    """The requested evaluation split contains no examples."""


class MissingHead(NewvisionError):
    """The checkpoint lacks the task head this operation needs."""


# --- checkpoint file format ---

class BadMagic(NewvisionError):
    """File does not start with the checkpoint magic bytes."""


class UnsupportedVersion(NewvisionError):
    """Checkpoint format version is newer than this code understands."""


class TruncatedFile(NewvisionError):
    """Checkpoint ends before all declared tensor bytes are present."""


# --- inference ---

class EmptyQuestion(NewvisionError):
    """answer_question() was called with a blank question."""


class EmptyCandidates(NewvisionError):
    """Retrieval was asked to rank an empty candidate list."""


# --- device simulation ---

class NegativeEcho(NewvisionError):
    """Ultrasonic echo time must be non-negative."""


class UnknownWaypoint(NewvisionError):
    """The requested navigation target is not in the world map."""


class NoPath(NewvisionError):
    """No route exists between the agent and the requested waypoint."""


class UnknownModule(NewvisionError):
    """Health update names a module the device does not have."""
