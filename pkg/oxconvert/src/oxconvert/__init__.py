"""One-shot converter from the Oxford degradation .mat archive to CSVs."""

__version__ = "0.1.0"
