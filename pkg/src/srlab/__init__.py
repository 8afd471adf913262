"""Numerical toolkit for sub-Riemannian structures given by vector fields.

Subpackages and modules, bottom up: ``symcalc`` (expressions, fields, the
structure DSL), ``brackets``, ``gram``, ``branches``, ``popp``, ``laplace`` and
the ``cli`` front end.
"""
__version__ = "0.1.0"

from .errors import SRError  # noqa: E402

__all__ = ["SRError", "__version__"]
