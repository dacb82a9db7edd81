class TopokeepError(Exception):
    """Base class for every error raised by topokeep."""


class DimensionError(TopokeepError, ValueError):
    pass


class ValidationError(TopokeepError, ValueError):
    def __init__(self, message: str, *, index: int | None = None) -> None:
        super().__init__(message)
        self.index = index


class ConfigError(ValidationError):
    pass


class QuantizationOverflowError(TopokeepError, OverflowError):
    pass


class CorruptStreamError(TopokeepError):
    def __init__(self, message: str, *, section: str | None = None) -> None:
        super().__init__(f"[{section}] {message}" if section else message)
        self.section = section


class BadMagicError(CorruptStreamError):
    pass


class UnsupportedVersionError(CorruptStreamError):
    pass


class TruncatedStreamError(CorruptStreamError):
    pass


class CorruptMetadataError(CorruptStreamError):
    pass
