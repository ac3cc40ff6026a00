"""Budget-constrained adversarial perturbation of continuous-control action streams."""

__version__ = "0.1.0"
