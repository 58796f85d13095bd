"""Simulation lab for classical, noisy delayed-rejection and quantum Metropolis-Hastings."""
__version__ = "0.1.0"
