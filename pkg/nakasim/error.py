# Copyright (C) 2024 - nakasim contributors
# SPDX-License-Identifier: GPL-2.0-only
"""Exceptions raised by the nakasim package."""

from typing import Optional

# fmt: off

class NakaError(Exception):
    """Base class for exceptions raised by package."""
    pass

class NakaDomainError(NakaError, ValueError):
    """Raised when an argument lies outside the domain of a formula."""
    pass

class NakaConfigError(NakaError):
    """Raised if a scenario configuration is invalid."""

    def __init__(self, message: str, line: Optional[int] = None):
        """Create the error, optionally anchored to a source line."""
        super().__init__(message)
        self.line = line

class NakaTopologyError(NakaError):
    """Raised if a topology cannot be built or is not connected."""
    pass

class NakaSimulationError(NakaError):
    """Raised upon inconsistent simulation state."""
    pass

class NakaFitError(NakaError):
    """Raised if a regression cannot be computed from the given points."""
    pass

class NakaUsageError(NakaError):
    """Raised if command-line flags are inconsistent."""
    pass

# fmt: on
