"""courtside: a toy court world, a masked game-state diffusion animator, and a
volumetric renderer, built on a small taped-autodiff numerics core."""

__version__ = "0.1.0"
