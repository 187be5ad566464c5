"""Voxel radiance-field rendering and render-based camera pose estimation."""
from ._backend import BACKEND

__version__ = "0.1.0"
