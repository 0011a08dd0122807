"""Exception hierarchy shared by every evk module."""


class EvkError(Exception):
    """Base class for all evk errors."""


class ParseError(EvkError):
    pass


class EmptyMesh(EvkError):
    pass


class DegenerateExtent(EvkError):
    pass


class BadMagic(EvkError):
    pass


class DimOverflow(EvkError):
    pass


class NonFinite(EvkError):
    pass


class ZeroDepth(EvkError):
    pass


class SizeMismatch(EvkError):
    pass


class EmptyMask(EvkError):
    pass


class DomainMismatch(EvkError):
    pass


class DimMismatch(EvkError):
    pass


class DenoiserFailure(EvkError):
    pass


class ShapeMismatch(EvkError):
    pass


class EmptyCloud(EvkError):
    pass


class MissingNormals(EvkError):
    pass


class TooSmall(EvkError):
    pass


class EmbedderFailure(EvkError):
    pass


class WidthMismatch(EvkError):
    pass


class PoolTooSmall(EvkError):
    pass


class NoReports(EvkError):
    pass


class MissingArtifact(EvkError):
    """A pipeline stage could not find an input it needs."""

    def __init__(self, sample: str, stage: str, path: str):
        super().__init__(f"sample {sample!r}, stage {stage!r}: missing {path}")
        self.sample = sample
        self.stage = stage
        self.path = path


class StageFailure(EvkError):
    def __init__(self, sample: str, stage: str, reason: str):
        super().__init__(f"sample {sample!r}, stage {stage!r}: {reason}")
        self.sample = sample
        self.stage = stage
        self.reason = reason
