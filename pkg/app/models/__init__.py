from .mmhco import Backbone, BackboneConfig
from .network import MMHCOHAR

__all__ = ['Backbone', 'BackboneConfig', 'MMHCOHAR']
