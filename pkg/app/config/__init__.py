# Makes the config directory a package and exposes the validated settings models

from .config_models import RunConfig, Settings
from .loader import ConfigLoader

__all__ = ['Settings', 'RunConfig', 'ConfigLoader']
