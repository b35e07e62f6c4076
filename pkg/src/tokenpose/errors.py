"""Exception and warning types shared across the package."""


class TokenPoseError(Exception):
    pass


class ShapeMismatch(TokenPoseError, ValueError):
    pass


class DegenerateShape(TokenPoseError, ValueError):
    pass


class NotScalar(TokenPoseError, ValueError):
    pass


class InvalidStride(TokenPoseError, ValueError):
    pass


class ConfigError(TokenPoseError, ValueError):
    pass


class NonDivisiblePatch(ConfigError):
    def __init__(self, h, w, patch_h, patch_w):
        super().__init__(
            f"image {h}x{w} is not divisible into {patch_h}x{patch_w} patches"
        )
        self.h, self.w, self.patch_h, self.patch_w = h, w, patch_h, patch_w


class NonDivisible(ConfigError):
    pass


class IndivisibleHeads(ConfigError):
    def __init__(self, d, h):
        super().__init__(f"embed_dim {d} is not divisible by num_heads {h}")
        self.d, self.h = d, h


class InvalidLayerIndex(TokenPoseError, IndexError):
    pass


class NoVisibleKeypoints(TokenPoseError, ValueError):
    pass


class EmptyEvalSet(TokenPoseError, ValueError):
    pass


class MissingHeadSize(TokenPoseError, ValueError):
    pass


class TemplateInvalid(TokenPoseError, ValueError):
    pass


class SchemaError(TokenPoseError, ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class DegenerateBox(TokenPoseError, ValueError):
    pass


class IncompatibleCheckpoint(TokenPoseError, ValueError):
    pass


class BatchError(TokenPoseError, RuntimeError):
    """A training step failed; the original exception is the ``__cause__``."""

    def __init__(self, step: int, sample_ids, cause: BaseException):
        ids = ", ".join(sample_ids[:4]) + (" ..." if len(sample_ids) > 4 else "")
        super().__init__(f"step {step} (samples {ids}): {type(cause).__name__}: {cause}")
        self.step = step
        self.sample_ids = list(sample_ids)


class DisconnectedGraphWarning(UserWarning):
    pass


class AllInvisibleWarning(UserWarning):
    pass
