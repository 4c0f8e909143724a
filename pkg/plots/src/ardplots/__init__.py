"""Figure rendering for ardnet experiment CSVs."""

from .render import FigureSpec, RenderReport, SchemaError, render

__all__ = ["FigureSpec", "RenderReport", "SchemaError", "render"]
__version__ = "0.1.0"
