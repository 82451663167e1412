"""
refmod - pure pursuit with a learned steering modification, plus the
simulator, global planner and evaluation worlds needed to measure it.
"""

__version__ = "0.1.0"
