"""Blood-lactate forecasting benchmark: ingestion, imputation, models and evaluation."""

__version__ = "0.1.0"
