"""Volumetric musculoskeletal modelling engine.

Turns a tetrahedralized skin-and-bone volume plus annotated muscle curves
into per-tissue likelihood fields, a manifold volumetric segmentation,
per-tissue meshes, and per-muscle fiber direction fields.
"""

__version__ = "0.1.0"

from .tetmesh import TetMesh, load_tetmesh, remove_bone_tets  # noqa: F401
from .curves import MuscleCurve  # noqa: F401
