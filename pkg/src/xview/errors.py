"""Exception hierarchy shared by every xview module."""


class XViewError(Exception):
    """Base class; the CLI maps any subclass to a nonzero exit status."""


class ShapeError(XViewError, ValueError):
    pass


class DomainError(XViewError, ValueError):
    """Input outside the mathematical domain of an operation (e.g. log of x <= 0)."""


class ContractError(XViewError, ValueError):
    """A caller violated an operation precondition."""


class ConfigError(XViewError, ValueError):
    pass


class InfeasibleTargetError(XViewError, ValueError):
    """CTC target cannot be aligned within the available number of frames."""


class UndefinedMetricError(XViewError, ValueError):
    pass


class TrainingDivergedError(XViewError, RuntimeError):
    pass


class LabelInventoryMismatch(XViewError, ValueError):
    pass


class FormatError(XViewError, ValueError):
    """Base class for on-disk container problems."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class InfeasibleLabelsError(FormatError, InfeasibleTargetError):
    """A stored utterance carries labels that CTC cannot align to its frames."""

    def __init__(self, utterance_id, n_labels, n_frames):
        self.utterance_id = utterance_id
        super().__init__(
            f"utterance {utterance_id!r}: {n_labels} labels cannot be aligned "
            f"to {n_frames} frames"
        )
