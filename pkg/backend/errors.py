"""
Error types raised by the SceneForge pipeline.
Library code raises these; only the CLI catches them and maps them to exit codes.
"""

from typing import Optional


class SceneForgeError(Exception):
    """Base class for every pipeline error"""


# Masks and outlines

class EmptyMask(SceneForgeError):
    """Mask has no foreground pixel"""


class AnchorOutsideMask(SceneForgeError):
    """Pixel nearest to the anchor is background or outside the image"""


class JitterExhausted(SceneForgeError):
    """Too many consecutive jittered anchors fell outside the mask"""


class DegeneratePolygon(SceneForgeError):
    """Polygon encloses zero area"""


# Linear systems

class NonConvergence(SceneForgeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations

    def __reduce__(self):
        return (NonConvergence, (self.args[0], self.residual, self.iterations))


class ZeroDiagonal(SceneForgeError):
    """Jacobi preconditioner undefined"""


class AsymmetricMatrix(SceneForgeError):
    pass


class NoUnknownPixels(SceneForgeError):
    """Trimap has no UNKNOWN pixel, so there is nothing to solve"""


# Compositing

class RegionTouchesBorder(SceneForgeError):
    pass


class OutOfBounds(SceneForgeError):
    pass


# Files, records and manifests

class DimensionMismatch(SceneForgeError):
    pass


class DecodeError(SceneForgeError):
    pass


class VersionUnsupported(SceneForgeError):
    pass


class ParseError(SceneForgeError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column

    def __reduce__(self):
        # message already carries the location
        return (ParseError, (self.args[0],))


class DuplicateRecord(SceneForgeError):
    pass


# Synthesis and annotations

class EmptyPool(SceneForgeError):
    pass


class PlacementInfeasible(SceneForgeError):
    pass


class DuplicateCategory(SceneForgeError):
    pass


class IntegrityError(SceneForgeError):
    """COCO referential or structural integrity violated"""


class ConfigError(SceneForgeError):
    pass


class JobFailed(SceneForgeError):
    def __init__(self, job_index: int, scene_id: str, stage: str, cause: Exception):
        super().__init__(f"job {job_index} (scene {scene_id}) failed at stage '{stage}': {cause}")
        self.job_index = job_index
        self.scene_id = scene_id
        self.stage = stage
        self.cause = cause

    def __reduce__(self):
        # keeps the error picklable across the worker pool
        return (JobFailed, (self.job_index, self.scene_id, self.stage, self.cause))
