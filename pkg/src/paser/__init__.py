"""PaSeR - cost-aware patch routing for image segmentation."""

__version__ = "0.1.0"
