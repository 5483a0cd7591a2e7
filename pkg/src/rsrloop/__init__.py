"""Real-sim-real loop for planar pushing.

Subpackages: ``core`` (states, datasets), ``diffsim`` (differentiable
pushing model and the hidden-parameter proxy), ``density`` (KDE, KL,
Wasserstein), ``infogap`` (gap-weighted intrinsic reward), ``tuner``
(parameter fitting), ``policy`` (PPO) and ``harness`` (the outer loop).
"""

__version__ = "0.1.0"
