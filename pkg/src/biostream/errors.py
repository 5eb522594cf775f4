"""Shared exception types.

The CLI maps these onto process exit codes: ConfigError is 2, OSError is 3,
ProtocolError (and subclasses) is 4.
"""


class ProtocolError(Exception):
    """Malformed wire data or a protocol-level rule violation."""


class ChunkError(ProtocolError):
    """A chunk violated its invariants (timestamps, shape) and was rejected."""


class RegistrationError(ProtocolError):
    """Stream registration conflict, e.g. a duplicate source_id."""


class ConfigError(Exception):
    """Invalid or inconsistent session configuration."""
