"""Quantum bit commitment keyed by correlation-immune Boolean functions.

Modules
-------
qcore      single-qubit states, measurements, density operators
boolfn     truth tables, Walsh spectra, correlation immunity
encode     blob encoders and verifiers
protocol   commit/open state machines and transcripts
adversary  attack strategies with Monte Carlo trial functions
analysis   closed-form predictions
harness    experiment runner, socket transport, CLI
"""

from .errors import ConfigError, DomainError, FrameError, ParameterError, ProtocolError, QbcError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DomainError", "FrameError", "ParameterError", "ProtocolError", "QbcError"]
