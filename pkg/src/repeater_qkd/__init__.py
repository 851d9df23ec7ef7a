"""Rate, error and scaling model for memory-assisted two-segment QKD."""
__version__ = "0.1.0"
