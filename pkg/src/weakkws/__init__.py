"""Temporally weakly labelled keyword spotting: data synthesis, a small
TC-ResNet8-style classifier trained with hand-written backprop, and metrics."""

__version__ = "0.1.0"
