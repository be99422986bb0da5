"""Single-image super-resolution by kernel low-rank sparse coding over self-examples."""

from .config import MODES, ConfigError, SrConfig, load_config
from .pipeline import RunReport, super_resolve, upscale_color

__version__ = "0.1.0"

__all__ = ["MODES", "ConfigError", "SrConfig", "load_config", "RunReport", "super_resolve",
           "upscale_color", "__version__"]
