"""In-context tabular prediction with a dual-axis transformer, plus the tooling around it."""

__version__ = "0.1.0"
