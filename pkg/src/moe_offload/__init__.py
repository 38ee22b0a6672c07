"""Policy engine and simulator for MoE inference with offloaded experts."""

__version__ = "0.1.0"
