"""Time-aware federated learning with freshness-weighted aggregation."""

__version__ = "0.1.0"
