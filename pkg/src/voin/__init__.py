"""Occlusion-aware video object inpainting: synthetic benchmark, shape and
flow completion, flow-guided propagation, gated inpainting, training and
evaluation tooling."""

__version__ = "0.1.0"
