"""Weekly dropout-risk prediction for online courses from raw clickstreams."""

__version__ = "0.1.0"
