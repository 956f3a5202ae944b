"""Simulation of hyperloop pod on-board systems.

Modules: ``world`` (trajectory and sensors), ``estimation`` (cascaded scalar
Kalman filter), ``battery`` (ICC fault detection), ``busnet`` (priority bus and
vehicle controller), ``inverter`` (bridge output and RC filtering), plus the
``config``/``runner``/``report``/``cli`` plumbing.
"""

__version__ = "0.1.0"
