"""Crash-stop to crash-recovery consensus wrapper, simulators and checkers."""

__version__ = "0.1.0"
