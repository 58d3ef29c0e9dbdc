"""Rotation-equivariant 3D group convolutions over the cube rotation groups."""

__version__ = "0.1.0"
