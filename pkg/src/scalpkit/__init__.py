"""scalpkit: batch toolkit for hair-mask work on microscopic scalp images."""

__version__ = "0.1.0"

from . import fusion, guidance, planner, prompter, pseudogen, raster, segclient  # noqa: F401,E402
