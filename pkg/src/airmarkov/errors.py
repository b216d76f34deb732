"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Grids do not line up (extent mismatch, incompatible shapes)."""


class FormatError(ValueError):
    """A text input (field file, density file, grid config, manifest) is malformed."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        if loc:
            message = f"{loc}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line


class StabilityError(RuntimeError):
    """Requested time step violates the explicit-scheme stability bound."""


class IntegrityError(RuntimeError):
    """A stored operator file is corrupt or violates a structural invariant."""


class RealizationError(RuntimeError):
    """A stage of an ensemble pipeline failed for one realization."""

    def __init__(self, realization_id, stage, message):
        super().__init__(f"realization {realization_id!r}, stage {stage}: {message}")
        self.realization_id = realization_id
        self.stage = stage
