"""Random mass splitting on the 1-D lattice.

A unit of mass starts at the origin among a Poisson(1) crowd of simple
random walkers and is split equally among the walkers sharing a site at
each step.  The package computes the resulting mass field exactly by
dynamic programming, samples the equivalent walk in the space-time
environment defined by the walkers, and ships a statistical harness that
checks the model's limit laws at desk scale.
"""

from .environment import (
    Environment,
    EnvSeedSpec,
    WalkerSet,
    crossings_from_walkers,
    deserialize,
    evolve_walkers,
    generate,
    sample_initial_counts,
    serialize,
)
from .mass import MassField, QuenchedMoments, mass_run, mass_step, path_sum_oracle
from .walks import CoupledPaths, DifferenceDecomposition, LazyWalk, WalkPath, decompose

__version__ = "0.1.0"
