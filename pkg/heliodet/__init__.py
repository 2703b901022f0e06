"""
HelioDet - one-stage solar cell detection toolkit
"""

__version__ = "1.0.0"
