"""Adaptive H-matrix boundary elements for linear elastostatics."""
from importlib.resources import files

__version__ = "0.1.0"


def mesh_path(name: str):
    """Path of a shipped mesh, e.g. ``mesh_path("cube_488")``."""
    return files(__name__) / "data" / "meshes" / f"{name}.off"
