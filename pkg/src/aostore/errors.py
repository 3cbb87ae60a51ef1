"""Exception hierarchy shared by every layer of the store.

Errors that can cross the wire carry a stable ``code`` string; the protocol
layer uses :data:`ERROR_CODES` to rebuild the right subclass on the caller's
side.
"""

from __future__ import annotations


class StoreError(Exception):
    """Base class for all store errors."""

    code = "internal"

    def __init__(self, message: str = "", *, backend_id: int | None = None):
        super().__init__(message)
        self.message = message
        self.backend_id = backend_id

    def __str__(self) -> str:
        if self.backend_id is not None:
            return f"[{self.code} @ backend {self.backend_id}] {self.message}"
        return f"[{self.code}] {self.message}"


# -- value model and registry -------------------------------------------------


class DecodeError(StoreError):
    code = "decode-error"

    def __init__(self, message: str, offset: int = 0, **kw):
        super().__init__(f"{message} (at byte offset {offset})", **kw)
        self.offset = offset


class SchemaConflict(StoreError):
    code = "schema-conflict"


class SchemaViolation(StoreError):
    code = "schema-violation"


class ClassNotRegistered(StoreError):
    code = "class-not-registered"


class NotExecutableHere(StoreError):
    code = "not-executable-here"


class MethodNotFound(StoreError):
    """Unknown method, or a call whose arity does not match the descriptor."""

    code = "method-not-found"


# -- protocol / transport -----------------------------------------------------


class ProtocolMismatch(StoreError):
    code = "protocol-mismatch"


class FrameTooLarge(StoreError):
    code = "frame-too-large"


class UnsupportedMessage(StoreError):
    code = "unsupported-message"


class TransportError(StoreError):
    code = "transport-error"


class RemoteError(StoreError):
    """Generic remote failure whose code has no dedicated local class."""

    def __init__(self, code: str, message: str = "", **kw):
        super().__init__(message, **kw)
        self.code = code


# -- placement / services -----------------------------------------------------


class ObjectNotFound(StoreError):
    code = "object-not-found"


class AlreadyRegistered(StoreError):
    code = "already-registered"


class BackendUnavailable(StoreError):
    code = "backend-unavailable"


class TransferFailed(StoreError):
    code = "transfer-failed"


class ReadOnlyReplica(StoreError):
    code = "read-only-replica"


class Redirect(StoreError):
    """The object lives elsewhere; ``target_backend`` names where."""

    code = "redirect"

    def __init__(self, message: str = "", target_backend: int = 0, **kw):
        super().__init__(message, **kw)
        self.target_backend = target_backend


class RemoteExecutionError(StoreError):
    code = "remote-execution"


# -- workloads ----------------------------------------------------------------


class DatasetTooShort(StoreError):
    code = "dataset-too-short"


class ParseError(StoreError):
    code = "parse-error"

    def __init__(self, message: str, line: int = 0, **kw):
        super().__init__(f"line {line}: {message}", **kw)
        self.line = line


class DataOrderError(StoreError):
    code = "data-order"


class ShapeError(StoreError):
    code = "shape-error"


class DivergenceError(StoreError):
    code = "divergence"


class SolverStalled(StoreError):
    code = "solver-stalled"


class ConfigConflict(StoreError):
    code = "config-conflict"


class InvalidDataset(StoreError):
    code = "invalid-dataset"


ERROR_CODES: dict[str, type[StoreError]] = {
    cls.code: cls
    for cls in (
        DecodeError, SchemaConflict, SchemaViolation, ClassNotRegistered,
        NotExecutableHere, MethodNotFound, ProtocolMismatch, FrameTooLarge,
        UnsupportedMessage, TransportError, ObjectNotFound, AlreadyRegistered,
        BackendUnavailable, TransferFailed, ReadOnlyReplica, Redirect,
        RemoteExecutionError, DatasetTooShort, ParseError, DataOrderError,
        ShapeError, DivergenceError, SolverStalled, ConfigConflict,
        InvalidDataset,
    )
}


def rebuild_error(code: str, message: str, backend_id: int | None,
                  target_backend: int | None = None) -> StoreError:
    """Recreate a typed error received over the wire."""
    cls = ERROR_CODES.get(code)
    if cls is None:
        return RemoteError(code, message, backend_id=backend_id)
    err = cls.__new__(cls)
    StoreError.__init__(err, message, backend_id=backend_id)
    if cls is Redirect:
        err.target_backend = target_backend or 0
    if cls is DecodeError:
        err.offset = 0
    if cls is ParseError:
        err.line = 0
    return err
