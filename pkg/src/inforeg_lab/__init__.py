"""Multimodal training lab: Fisher-trace prime-window detection and proximal
regulation of dominant modalities, on synthetic data."""

__version__ = "0.1.0"
