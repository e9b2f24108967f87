"""SDF-based neural point field: training, relighting, and point editing."""

__version__ = "0.1.0"
