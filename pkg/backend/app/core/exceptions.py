"""
Custom exceptions for the latent space element method pipeline.

Every failure the pipeline can diagnose derives from ``LSEMError`` and carries
a stable ``error_code`` that the CLI reports alongside the message.
"""
from typing import Any, Dict, Optional


class LSEMError(Exception):
    """Base exception for all pipeline errors."""

    def __init__(self, detail: str, error_code: str = "LSEM_ERROR"):
        super().__init__(detail)
        self.detail = detail
        self.error_code = error_code

    def to_dict(self) -> Dict[str, Any]:
        return {"error_code": self.error_code, "detail": self.detail}


class ValidationError(LSEMError):
    """Invalid argument, shape or value."""

    def __init__(self, detail: str, field: Optional[str] = None):
        error_code = f"VALIDATION_ERROR_{field.upper()}" if field else "VALIDATION_ERROR"
        super().__init__(detail=detail, error_code=error_code)
        self.field = field


class ConfigurationError(LSEMError):
    """Experiment config could not be read or is inconsistent."""

    def __init__(self, detail: str):
        super().__init__(detail=detail, error_code="CONFIGURATION_ERROR")


class LayoutError(LSEMError):
    """Grid cannot be tiled with the requested elements and overlap."""

    def __init__(self, detail: str):
        super().__init__(detail=detail, error_code="LAYOUT_ERROR")


class SolverConvergenceError(LSEMError):
    """Implicit inner iteration did not reach tolerance."""

    def __init__(self, step: int, residual: float, iterations: int):
        super().__init__(
            detail=(
                f"Nonlinear iteration failed at time step {step}: residual {residual:.3e} "
                f"after {iterations} iterations"
            ),
            error_code="SOLVER_CONVERGENCE_ERROR",
        )
        self.step = step
        self.residual = residual
        self.iterations = iterations


class NonFiniteStateError(LSEMError):
    """A full-order or latent trajectory produced NaN or Inf."""

    def __init__(self, step: int, where: str = "state"):
        super().__init__(
            detail=f"Non-finite {where} encountered at step {step}",
            error_code="NON_FINITE_STATE",
        )
        self.step = step
        self.where = where


class SpectrumError(LSEMError):
    """Eigenvalue computation failed."""

    def __init__(self, detail: str):
        super().__init__(detail=detail, error_code="SPECTRUM_ERROR")


class TrainingDivergedError(LSEMError):
    """Loss or gradient became non-finite during training."""

    def __init__(self, epoch: int, detail: str = "non-finite loss or gradient"):
        super().__init__(
            detail=f"Training diverged at epoch {epoch}: {detail}",
            error_code="TRAINING_DIVERGED",
        )
        self.epoch = epoch


class ZeroNormError(LSEMError):
    """Relative error requested against an all-zero reference."""

    def __init__(self, detail: str = "Reference field has zero norm"):
        super().__init__(detail=detail, error_code="ZERO_NORM")


class FileFormatError(LSEMError):
    """Stored snapshot or model file is malformed."""

    def __init__(self, detail: str, path: Optional[str] = None):
        message = f"{path}: {detail}" if path else detail
        super().__init__(detail=message, error_code="FILE_FORMAT_ERROR")
        self.path = path


class StorageError(LSEMError):
    """Reading or writing an output file failed at the OS level."""

    def __init__(self, detail: str, path: Optional[str] = None):
        message = f"{path}: {detail}" if path else detail
        super().__init__(detail=message, error_code="STORAGE_ERROR")
        self.path = path


class IncompatibleModelError(LSEMError):
    """Trained model does not fit the layout it is applied to."""

    def __init__(self, detail: str):
        super().__init__(detail=detail, error_code="INCOMPATIBLE_MODEL")
