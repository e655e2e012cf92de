"""Named-entity sentiment classification with half-masked dual-pass heads."""

from hamam.dataset import Record, SentimentLabel

__version__ = "0.1.0"

__all__ = ["Record", "SentimentLabel", "__version__"]
