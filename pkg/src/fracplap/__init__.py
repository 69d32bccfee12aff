"""Maximum principles and sliding comparisons for the fractional p-Laplacian."""
from .core import (DomainSpec, ExteriorRule, Field, Grid, Nonlinearity, OperatorParams,
                   ball, constant_exterior, epigraph, half_space, make_allen_cahn,
                   make_fisher_kpp, periodic_tangential, prescribed_exterior, strip,
                   zero_exterior)
from .operator import QuadratureConfig, eval_field, eval_point, tail_integral

__version__ = "0.1.0"
