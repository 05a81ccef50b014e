"""Polar-costmap SAC local planner workbench.

Deterministic 2D navigation simulator, costmap renderers, shaped reward,
classic planners (Dijkstra / DWA / shortest-path) and a Soft Actor-Critic
learner with random-shift augmentation.
"""

__version__ = "0.1.0"
