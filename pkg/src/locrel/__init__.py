"""Location-based rate selection with probably-correct reliability.

Two base stations on a line serve a UE that knows its position only through
a TOA estimate. The package computes the localization CRLB, a Monte-Carlo
radio map of the maximum achievable rate, three rate selectors and their
meta-probability of exceeding the target outage level.
"""
__version__ = "0.1.0"

from .config import Numerics, SystemConfig, load_config  # noqa: E402

__all__ = ["Numerics", "SystemConfig", "load_config", "__version__"]
