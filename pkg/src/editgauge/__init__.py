"""editgauge: automated, human-aligned evaluation of text-guided image editing."""

__version__ = "0.1.0"
