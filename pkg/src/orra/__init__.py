"""Distributed online coordination of battery fleets on AGC ramping duty."""

__version__ = "0.1.0"
