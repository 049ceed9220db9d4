"""Desk-scale sparse-view neural radiance field lab.

Differentiable cone-based volume rendering with deformable sampling, a
weight/offset mutual-information regularizer, and pose-perturbation
consistency training, all on a self-contained reverse-mode autodiff engine
validated against brute-force oracles.
"""

__version__ = "0.1.0"
