"""Synthetic magnetic-catheter workbench.

A desk-scale reproduction pipeline: a hysteretic servo-driven plant, a
10 Hz acquisition protocol, a stacked-LSTM tip-position surrogate trained
from scratch on numpy, and DQN/TD3 controllers for tip regulation and
waypoint path following.
"""

__version__ = "0.1.0"
