"""Numerical and combinatorial model of Weinstein handle attachment.

Submodules: ``geometry`` (coordinates and forms), ``handle`` (model
hypersurfaces), ``flows`` (closed-form flows and the passage through the
handle), ``ambient`` (chord atlases), ``words`` (word enumeration),
``surgery`` (chord and orbit solvers), ``asymptotics`` (spectra and curve
tails), ``strips`` (basic strips) and ``cli``.
"""
from .handle import HandleParams

__all__ = ["HandleParams"]
