"""Distributed time-stepped simulation over anonymizing transports."""

__version__ = "0.1.0"
