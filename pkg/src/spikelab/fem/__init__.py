"""Graded meshes, weights and the weighted Neumann operator."""
from .weights import (WeightField, ConstantWeight, MonomialWeight, BumpWeight,
                      ProductWeight, weight_from_spec)
from .mesh import Mesh, MeshError, build_mesh, resolution_floor

__all__ = ["WeightField", "ConstantWeight", "MonomialWeight", "BumpWeight",
           "ProductWeight", "weight_from_spec", "Mesh", "MeshError", "build_mesh",
           "resolution_floor"]
