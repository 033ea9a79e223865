"""Rigorous covering relations for the Rossler return map.

Interval arithmetic, a Taylor/Lohner integrator, Poincare map enclosures,
covering relation checks, perturbation robustness and symbolic dynamics.
"""

__version__ = "0.1.0"

from .interval import Box, IArray, Interval, set_rounding, get_rounding, rounding  # noqa: E402
from .system import rossler  # noqa: E402
from .poincare import Section  # noqa: E402
from .covering import HSet, Subdivision, LEMMA_PATTERN  # noqa: E402

__all__ = ["Box", "IArray", "Interval", "set_rounding", "get_rounding", "rounding", "rossler", "Section", "HSet", "Subdivision", "LEMMA_PATTERN"]
