from . import config, drivers

__all__ = ["config", "drivers"]
