"""vidinstruct: video-instruction dataset factory and evaluation bench."""

__version__ = "0.1.0"
