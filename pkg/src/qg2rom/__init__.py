"""Two-layer quasi-geostrophic finite-volume solver with a POD-LSTM reduced order model."""

from .grid import Field, Grid, GridSpec, build_grid, face_gradients, integrate
from .fom import PhysParams, State, TimeConfig, initial_state, munk_scale, run_fom, step

__all__ = [
    "Field", "Grid", "GridSpec", "build_grid", "face_gradients", "integrate",
    "PhysParams", "State", "TimeConfig", "initial_state", "munk_scale",
    "run_fom", "step",
]

__version__ = "0.1.0"
