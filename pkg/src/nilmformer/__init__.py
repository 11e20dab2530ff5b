"""Energy disaggregation toolkit built around a stationarizing
sequence-to-sequence transformer with timestamp positional encoding."""

__version__ = "0.1.0"
