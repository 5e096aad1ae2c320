"""Directed polymers in intermediate disorder: partition functions, weight
families, path statistics, Tracy-Widom tables and a reproducible Monte Carlo
driver."""

__version__ = "0.1.0"
