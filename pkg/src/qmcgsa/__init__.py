"""Monte Carlo and quasi Monte Carlo pricing, greeks and Sobol' sensitivity analysis."""

__version__ = "0.1.0"
