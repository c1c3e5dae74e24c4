"""Scene text synthesis - embed annotated text into background images."""

__version__ = "0.1.0"
