"""Region-wise loss maps, gradients and stability diagnostics for segmentation."""

__version__ = "0.1.0"
