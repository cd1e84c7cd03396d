"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so keep new errors under one of the
three roots below.
"""


class AttnEditError(Exception):
    pass


class ValidationError(AttnEditError, ValueError):
    """Bad user input: config values, prompts, word pairs, shapes."""


class InvalidRangeError(ValidationError):
    pass


class AmbiguityError(ValidationError):
    pass


class MisalignmentError(ValidationError):
    pass


class ShapeMismatchError(ValidationError):
    pass


class StoreError(AttnEditError):
    """Attention store is incomplete, corrupt or does not match the job."""


class StaleCacheError(StoreError):
    pass


class BackendError(AttnEditError, RuntimeError):
    """A denoiser/codec/embedder backend or the controller failed mid-run."""

    def __init__(self, message: str, *, step: int | None = None, layer: int | None = None):
        ctx = []
        if step is not None:
            ctx.append(f"step={step}")
        if layer is not None:
            ctx.append(f"layer={layer}")
        if ctx:
            message = f"{message} [{', '.join(ctx)}]"
        super().__init__(message)
        self.step = step
        self.layer = layer
