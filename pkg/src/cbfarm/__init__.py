"""Torque-level safe passive control for serial manipulators.

A passive impedance law tracks a dynamical-system motion plan while a
relaxed exponential-CBF quadratic program enforces joint-limit,
self-collision, external-collision and singularity constraints, validated
in a built-in closed-loop simulator.
"""

__version__ = "0.1.0"
