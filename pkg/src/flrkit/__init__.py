"""Finite-Larmor-radius gyrokinetic toolkit.

Subpackages by pipeline:

- domain:          grids, fields, distributions, configuration, file formats
- bessel:          self-contained J0 evaluation
- gyroaverage:     gyro-circle averages and the Maxwellian polarization
- quasineutrality: electroneutrality field solve for the potential
- gyrotransport:   semi-Lagrangian integration of the reduced 5D model
- fullkinetic:     6D characteristics reference solver and the scale-ratio
                   convergence experiment
- steadystate:     1D slab boundary-value solver with hypothesis audit
- cli:             batch scenario runner
"""

__version__ = "0.1.0"

from . import bessel, domain, fullkinetic, gyroaverage, gyrotransport
from . import quasineutrality, steadystate
from .domain import (
    GyroDistribution,
    ParallelAxis,
    PerpGrid,
    ScalarField,
    ScenarioConfig,
    VelocityGrid,
    build_grids,
    load_field,
    save_field,
)
