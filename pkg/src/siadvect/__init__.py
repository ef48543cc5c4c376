"""Semi-implicit kappa-schemes for level set advection on Cartesian grids."""

from .core import (Field, Grid2D, TimeStepping, VelocityField,
                   courant_numbers, make_grid, sample_field)
from .schemes1d import Kappa
from .schemes2d import (ImplicitDomain, NodeClass, RectBoundary, SchemeSpec,
                        assemble_step_2d, build_operator)
from .solver import (AssemblyError, LinearStep, SweepPolicy, fast_sweep_solve,
                     residual)
from .stability import (SamplingSpec, StabilityReport, WaveProbe,
                        amplification_factor, box_threshold,
                        max_amplification, max_amplification_box, ray_fan,
                        stability_threshold)

__version__ = "0.1.0"

__all__ = [
    "AssemblyError", "Field", "Grid2D", "ImplicitDomain", "Kappa",
    "LinearStep", "NodeClass", "RectBoundary", "SamplingSpec", "SchemeSpec",
    "StabilityReport", "SweepPolicy", "TimeStepping", "VelocityField",
    "WaveProbe", "amplification_factor", "assemble_step_2d", "box_threshold",
    "build_operator", "courant_numbers", "fast_sweep_solve",
    "make_grid", "max_amplification", "max_amplification_box", "ray_fan",
    "residual", "sample_field", "stability_threshold", "__version__",
]
