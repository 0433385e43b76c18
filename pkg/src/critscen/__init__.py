"""Sample-efficient search for critical driving scenarios with Gaussian-process
Bayesian optimization, checked against an exhaustive grid baseline."""

__version__ = "0.1.0"
