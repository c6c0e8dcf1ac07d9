"""
frax - Darcy flow and tracer transport in 2D fractured porous media
"""

__version__ = "0.1.0"
__author__ = "Fabian Braun"
__email__ = "fsbraun@gmx.de"
