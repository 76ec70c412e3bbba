"""Exception types raised across the package."""


class TTLBPError(Exception):
    """Base class for all package errors."""


class ConfigError(TTLBPError, ValueError):
    pass


class ShapeError(TTLBPError, ValueError):
    def __init__(self, message, layer=None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer!r}: {message}"
        super().__init__(message)


class ArchitectureError(TTLBPError, ValueError):
    def __init__(self, message, layer=None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)


class DataError(TTLBPError, ValueError):
    pass


class ParseError(DataError):
    """Malformed input file. ``offset`` is the byte offset where parsing failed."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ContractViolation(TTLBPError, RuntimeError):
    pass


class OracleSizeError(TTLBPError, ValueError):
    """The network is too large for brute-force unrolling."""
