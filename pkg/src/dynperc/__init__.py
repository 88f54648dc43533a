"""Monte Carlo laboratory for biased random walks on dynamical percolation."""

__version__ = "0.1.0"
