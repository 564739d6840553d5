"""Exception hierarchy. Every error raised on purpose by the toolkit derives from
:class:`AuditError` so the CLI can map it to a stage diagnostic."""


class AuditError(Exception):
    """Base class for toolkit errors."""


class DegenerateInputError(AuditError, ValueError):
    """Zero-norm vectors, zero spread, all-tied samples and similar."""


class DegenerateDirectionError(DegenerateInputError):
    """A bias direction cannot be formed (no attribute separation)."""


class MissingEntityError(AuditError, KeyError):
    def __init__(self, entity_id, where="embedding space"):
        self.entity_id = entity_id
        super().__init__(f"entity {entity_id!r} not found in {where}")

    def __str__(self):
        return self.args[0]


class InsufficientDataError(AuditError, ValueError):
    pass


class ValidationError(AuditError, ValueError):
    """Group, config or schema constraint violated."""


class ContaminationError(ValidationError):
    """A test entity also belongs to an attribute-defining group."""


class ParseError(AuditError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}" if loc else f"line {line}"
        super().__init__(f"{loc}: {message}" if loc else message)


class DuplicateIdError(ParseError):
    pass


class SerializationError(AuditError, ValueError):
    pass
