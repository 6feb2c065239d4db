"""Deep ReLU networks built weight-by-weight from quasi-optimal polynomial data.

The pipeline has three stages, one subpackage each plus shared plumbing:

1. ``multiindex``: coefficient-decay models ``|c_nu| <= exp(-b(nu))``, greedy
   selection of the best m multi-indices, sublevel-set volume estimates and
   rigorous tail brackets.
2. ``orthopoly``: shifted-Legendre / monomial tensor products in factored root
   form, synthetic target expansions with seeded signs.
3. ``synth`` on top of ``netcore``: exact sawtooth squaring units, polarization
   products, per-factor ReLU layers, and the assembled approximation network,
   audited unit by unit.

``verify`` measures sup errors and convergence/depth/complexity envelopes;
``cli`` exposes everything as subcommands.
"""

from qopnet.errors import (
    QopnetError,
    ConfigurationError,
    DimensionMismatchError,
    ResourceCapError,
    NonConvergenceError,
    NetworkFormatError,
    SynthesisError,
    VerificationError,
)

__all__ = [
    "QopnetError",
    "ConfigurationError",
    "DimensionMismatchError",
    "ResourceCapError",
    "NonConvergenceError",
    "NetworkFormatError",
    "SynthesisError",
    "VerificationError",
]

__version__ = "0.1.0"
