"""Desk-scale mixture-invariant training toolkit for music source separation."""

__version__ = "0.1.0"
