"""State estimation for hybrid dynamical systems with saltation-matrix covariance updates."""

__version__ = "0.1.0"
