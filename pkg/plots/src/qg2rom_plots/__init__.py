"""Offline figure generation from qg2rom CSV outputs.

This package reads only the CSV files written by the qg2rom command-line
pipeline (field maps, modal-coefficient series, probability mass functions,
singular-value spectra, enstrophy/kinetic-energy series, and difference
maps) and renders them as raster images.  It never reads the primary
package's binary artifacts, so the two packages can be installed and
tested independently.
"""

from .render import KINDS, PlotError, PlotJob, render, render_all

__all__ = ["KINDS", "PlotError", "PlotJob", "render", "render_all"]
