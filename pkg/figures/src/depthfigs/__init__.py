"""Figure rendering for the depth-scaling experiment CSVs.

Everything here is read-only plotting: the statistics arrive
precomputed in the CSV files written by the simulation package, and
the renderers only do axis transforms and pixel placement.
"""

from .io import SchemaError
from .plots import KINDS, PlotJob, render

__all__ = ["KINDS", "PlotJob", "SchemaError", "render"]
__version__ = "0.1.0"
