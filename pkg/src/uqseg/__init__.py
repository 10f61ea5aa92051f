"""Evidential segmentation with gated uncertainty supervision at desk scale."""

from .grids import LabelGrid, PixelIndex, ScalarGrid, UnitVector2

__version__ = "0.1.0"

__all__ = ["ScalarGrid", "LabelGrid", "PixelIndex", "UnitVector2", "__version__"]
