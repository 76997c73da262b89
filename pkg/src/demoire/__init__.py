"""RAW-to-sRGB demoireing with test-time-training attention and a flow-matching prior."""

__version__ = "0.1.0"
