"""Corridor traffic microsimulation with multi-agent signal control and
event-triggered transit signal priority."""

__version__ = "0.1.0"
