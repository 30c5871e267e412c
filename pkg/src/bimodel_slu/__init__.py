"""Bi-model BLSTM semantic frame parsing: joint intent detection and slot filling."""

__version__ = "0.1.0"
