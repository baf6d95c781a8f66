"""Simulator for self-repairing overlay botnets and the SOAP mitigation."""

__version__ = "0.1.0"
