"""Moment-closure solvers for the 1D BGK equation.

Subpackages by responsibility:

* :mod:`bgkclosure.moment_core` -- Hermite utilities, moment states,
  system-matrix assembly, variable transforms.
* :mod:`bgkclosure.closure_hyperbolic` -- prescribed-eigenvalue closure rows
  (Vieta / Hermite-basis algebra) and gradient coefficients.
* :mod:`bgkclosure.ml_closure_runtime` -- MLCW weight files and network
  inference for learned closures.
* :mod:`bgkclosure.pathcons_solvers` -- first-order and WENO5/SSP-RK3
  path-conservative finite-volume solvers.
* :mod:`bgkclosure.kinetic_dvm` -- discrete-velocity BGK reference solver.
* :mod:`bgkclosure.datagen` -- random initial conditions and BGKD trajectory
  datasets.
* :mod:`bgkclosure.cli` -- the ``bgkclosure`` command.
"""

__version__ = "0.1.0"
