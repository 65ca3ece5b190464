"""sift: streaming data selection for instruction-tuning corpora."""

__version__ = "0.1.0"
