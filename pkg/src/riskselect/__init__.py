"""Risk- and intent-aware feature selection for vehicle-infrastructure cooperative perception."""

__version__ = "0.1.0"
