"""Shipboard carbon-capture plant simulation, hybrid modelling and economic MPC."""

__version__ = "0.1.0"
