"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class MMStripError(Exception):
    """Base class for every error raised by this package."""


class NumericalError(MMStripError):
    """A numerical precondition failed.

    ``layer`` and ``omega`` carry context when the failure happened inside a
    layer loop or at a particular grid frequency.
    """

    def __init__(self, message: str, *, layer: int | None = None, omega: float | None = None):
        self.base_message = message
        self.layer = layer
        self.omega = omega
        ctx = []
        if layer is not None:
            ctx.append(f"layer {layer}")
        if omega is not None:
            ctx.append(f"omega={omega:.17g}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)

    def at_layer(self, layer: int) -> "NumericalError":
        """Return a copy of this error annotated with a layer index."""
        return type(self)(self.base_message, layer=layer, omega=self.omega)


class NonFinite(NumericalError):
    pass


class AsymmetricInput(NumericalError):
    pass


class NotUnitary(NumericalError):
    pass


class CommutationViolation(NumericalError):
    pass


class ReflectorTooStrong(NumericalError):
    pass


class SingularBlock(NumericalError):
    pass


class NotReciprocal(NumericalError):
    pass


class NotLossless(NumericalError):
    pass


class DegenerateWindow(NumericalError):
    pass


class NearSingularPeel(NumericalError):
    pass


class TooStrong(NumericalError):
    pass


class UnderdeterminedFit(NumericalError):
    pass


class BranchOverflow(NumericalError):
    pass


class ConfigError(MMStripError):
    """Malformed or schema-violating configuration file."""


class IngestionError(MMStripError):
    """A data file could not be read or failed validation."""
