"""Dual-attention depthwise ConvLSTM streamflow modeling toolkit."""

__version__ = "0.1.0"
