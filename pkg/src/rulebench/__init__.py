"""Desk-scale bench for testing whether sequence models learn identity-independent rules."""

__version__ = "0.1.0"
