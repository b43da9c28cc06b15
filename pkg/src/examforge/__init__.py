"""examforge: workspace-backed engine for parameterized multi-stage exercises."""

__version__ = "0.1.0"
