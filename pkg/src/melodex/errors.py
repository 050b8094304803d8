"""Shared exception hierarchy."""


class MelodexError(Exception):
    """Base class for all errors raised by this package."""
