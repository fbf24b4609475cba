"""Action-balance exploration: per-action distillation bonuses combined with
next-state novelty bonuses, and grid-world benchmarks for them."""

from abx.errors import ConfigurationError, UsageError

__version__ = "0.1.0"

__all__ = ["ConfigurationError", "UsageError", "__version__"]
