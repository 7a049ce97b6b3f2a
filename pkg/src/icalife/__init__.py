"""Battery SoH/RUL estimation from single diagnostic charge cycles."""

__version__ = "0.1.0"
