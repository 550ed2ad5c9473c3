"""Quality assessment and FAZ segmentation pipeline for OCTA images."""

__version__ = "0.1.0"
