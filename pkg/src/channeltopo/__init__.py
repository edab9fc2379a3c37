"""Topological analysis of communication channels in software ecosystems."""

__version__ = "0.1.0"
