"""Aging-aware battery control: aging model, QP solver, MPC policies, simulation."""

__version__ = "0.1.0"
