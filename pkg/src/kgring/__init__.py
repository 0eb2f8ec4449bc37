"""kgring: stationary states of a thermally driven stochastic Klein-Gordon
field on a ring.

Subpackages map onto the pipeline stages: ``model`` (Fourier representation,
quadrature, coupling data), ``spectrum`` (non-normal drift operator
eigentheory), ``covariance`` (stationary covariances and the propagator),
``renorm`` (tadpole-killing fixed point), ``diagrams`` (perturbative
corrections to the two-point function), ``sde`` (Monte-Carlo oracle),
``validate`` (numerical checks of the uniform estimates), ``cli``.
"""

__version__ = "0.1.0"

from . import model
from .model import (
    CoeffSeq,
    Coupling,
    GridFunction,
    PotentialProfile,
    RunConfig,
    Temperatures,
    default_coupling,
    example_config,
    from_grid,
    integrate,
    load_config,
    to_grid,
    validate_coupling,
)

__all__ = [
    "__version__",
    "model",
    "CoeffSeq",
    "Coupling",
    "GridFunction",
    "PotentialProfile",
    "RunConfig",
    "Temperatures",
    "default_coupling",
    "example_config",
    "from_grid",
    "integrate",
    "load_config",
    "to_grid",
    "validate_coupling",
]
