class ShapeError(ValueError):
    """Dimension mismatch between an input and what a net or solver expects."""


class NumericalError(FloatingPointError):
    """A NaN or Inf showed up during training or a solve."""

    def __init__(self, message, **context):
        self.context = context
        if context:
            message = message + " (" + ", ".join(f"{k}={v}" for k, v in context.items()) + ")"
        super().__init__(message)
