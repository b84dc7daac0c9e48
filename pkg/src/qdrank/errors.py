"""Exception hierarchy shared across the package.

Two families matter for the CLI exit code: ``QdrankError`` (bad input or
domain violation, exit 1) and its subclass ``JudgeBackendError`` (remote
judge / network trouble, exit 2).
"""

from __future__ import annotations


class QdrankError(Exception):
    """Base class for all errors raised by this package."""


class JudgeBackendError(QdrankError):
    """Remote judge failed: auth, network, or protocol problems."""
