"""Graph-diffusion TSP solver with progressive distillation of its DDIM sampler."""

__version__ = "0.1.0"
