"""Latent-space sampling-based motion planning for a visual planar robot.

A small, deterministic stack: a from-scratch neural network library, a
planar ground-truth world with an exact collision oracle, training for the
encoder/decoder/dynamics/collision networks, a latent-space tree planner,
true-state baselines (RRT-BestNear, FMT*), and a benchmark CLI.
"""

__version__ = "0.1.0"

from . import baselines, bench, cli, data, nn, planner, report, training, treesearch, world

__all__ = ["baselines", "bench", "cli", "data", "nn", "planner", "report",
           "training", "treesearch", "world", "__version__"]
