"""Generalized Debye sources for time-harmonic Maxwell scattering.

Modules:

* :mod:`~debye_bie.specfun` spherical Bessel/Hankel functions and harmonics
* :mod:`~debye_bie.sphere_ops` exact diagonal formulation on the unit sphere
* :mod:`~debye_bie.rootfinder` zeros of the sphere multipliers
* :mod:`~debye_bie.surface` grids and surface calculus on surfaces of revolution
* :mod:`~debye_bie.layerpot` Nystrom discretization of the layer potentials
* :mod:`~debye_bie.solver` normal, hybrid and k-Neumann solves
* :mod:`~debye_bie.cli` command-line front end
"""

import os as _os

# Cap BLAS/OpenMP threads before numpy is loaded.
_threads = _os.environ.get("DEBYE_BIE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ[_var] = _threads

__version__ = "0.1.0"

from . import specfun, sphere_ops, rootfinder, surface, layerpot, solver  # noqa: E402

__all__ = ["specfun", "sphere_ops", "rootfinder", "surface", "layerpot", "solver", "__version__"]
