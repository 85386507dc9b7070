"""Adjoint-based layout optimisation of tidal turbine arrays.

Submodules are imported on first attribute access so that the command line
can configure BLAS threading before numpy is loaded.
"""
from __future__ import annotations

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "Mesh": "mesh", "Rect": "mesh", "Tag": "mesh", "generate_channel_mesh": "mesh",
    "read_tfmesh": "mesh", "write_tfmesh": "mesh",
    "build_spaces": "spaces",
    "ModelConfig": "swe", "BoundaryForcing": "swe", "Sinusoid": "swe", "ShallowWater": "swe",
    "solve_steady": "swe", "solve_unsteady": "swe",
    "TurbineFarm": "turbine", "FrictionField": "turbine", "Mode": "turbine",
    "power_steady": "power", "power_unsteady": "power",
    "compute_gradient": "adjoint",
    "ReducedFunctional": "optimise", "ConstraintSpec": "optimise", "sqp_optimise": "optimise",
    "sqp_minimise": "sqp",
    "MMSCase": "verify", "taylor_test": "verify",
    "ScenarioConfig": "scenarios", "load_config": "scenarios",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(importlib.import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module 'tidalopt' has no attribute {name!r}")
