"""Driving-context classification from evidential occupancy grids.

The pipeline: simulated 2D lidar scans are fused into Dempster-Shafer
occupancy grids, a small from-scratch CNN classifies each grid into one of
five driving contexts, and a genetic algorithm searches the CNN's
hyperparameters (optimizer, loss, FC widths).
"""

__version__ = "0.1.0"
