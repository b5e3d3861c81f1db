"""Fine-tune and export detector bundles for the bargewatch monitoring pipeline."""

__version__ = "0.1.0"
