"""Runtime settings, experiment schema, and named profiles."""

from uflossmri.config.settings import Config, config

__all__ = ["Config", "config"]
