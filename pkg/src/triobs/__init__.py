"""Time-varying Luenberger and switching observers for triangular nonlinear systems."""

__version__ = "0.1.0"
