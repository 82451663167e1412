"""
Utility functions for the refmod package.
"""

from .geometry import wrap_angle
from .run_manifest import config_hash, write_manifest

__all__ = ['wrap_angle', 'config_hash', 'write_manifest']
