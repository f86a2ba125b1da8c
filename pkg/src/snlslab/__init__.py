"""Numerical laboratory for multi-soliton dynamics of stochastic NLS equations.

Focusing nonlinear Schrodinger flows with conservative multiplicative noise,
written in the gauge-transformed (random-coefficient) form, with tooling to

* compute and certify ground states and their rescalings,
* assemble solitary waves, modulated ansatz fields, and blow-up profiles,
* sample rough Brownian drives with spatial envelopes and iterated integrals,
* evolve the direct, gauged, and auxiliary equations by split-step methods,
* decompose states into modulated solitons plus a small remainder,
* monitor localized masses, momenta, energies, and coercive quadratic forms,
* run backward-from-infinity construction experiments end to end.
"""

__version__ = "0.1.0"

from .grid import Field, GridMismatch, SpatialGrid

__all__ = ["Field", "GridMismatch", "SpatialGrid", "__version__"]
