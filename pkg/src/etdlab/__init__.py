"""Off-policy linear TD laboratory: emphatic, centered and regularized learners."""

__version__ = "0.1.0"
