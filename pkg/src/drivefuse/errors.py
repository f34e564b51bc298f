"""Exception types shared across the pipeline.

Config/usage problems raise ConfigError (CLI exit code 2); everything else
is a runtime failure (CLI exit code 1).
"""


class DrivefuseError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(DrivefuseError):
    """Invalid configuration value, unknown override key, or bad CLI usage."""


class UnknownLabel(DrivefuseError):
    """An annotation label does not normalize to any known activity class."""

    def __init__(self, raw_label, row=None):
        self.raw_label = raw_label
        self.row = row
        where = f" (row {row})" if row is not None else ""
        super().__init__(f"unknown activity label {raw_label!r}{where}")


class MalformedRow(DrivefuseError):
    """An annotation CSV row is structurally invalid."""

    def __init__(self, row, reason):
        self.row = row
        self.reason = reason
        super().__init__(f"malformed annotation row {row}: {reason}")


class EmptyGraph(DrivefuseError):
    """Operation requires at least one node."""


class MissingEmbedding(DrivefuseError):
    """Recorded embedding store has no entry for a frame id."""

    def __init__(self, frame_id):
        self.frame_id = frame_id
        super().__init__(f"no stored embedding for frame {frame_id!r}")


class PluginFailure(DrivefuseError):
    """External embedding backend failed for a frame."""

    def __init__(self, frame_id, detail):
        self.frame_id = frame_id
        super().__init__(f"embedding plugin failed for frame {frame_id!r}: {detail}")


class DuplicateFrameId(DrivefuseError):
    """Two records share a frame id where uniqueness is required."""


class BranchMismatch(DrivefuseError):
    """Branch inputs do not match the requested method variant."""


class DimensionMismatch(DrivefuseError):
    """Input vector length does not match model parameter shapes."""


class MissingFeature(DrivefuseError):
    """A manifest frame has no record in a feature file for an active branch."""

    def __init__(self, frame_id, branch):
        self.frame_id = frame_id
        self.branch = branch
        super().__init__(f"frame {frame_id!r} has no {branch} record")


class VariantMismatch(DrivefuseError):
    """Reports from different method variants cannot be aggregated."""


class ReportError(DrivefuseError):
    """A metrics report is structurally unusable (e.g. empty per-class table)."""
