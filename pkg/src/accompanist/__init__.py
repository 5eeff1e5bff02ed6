"""Style-planned, corpus-grounded piano accompaniment generation."""

__version__ = "0.1.0"
