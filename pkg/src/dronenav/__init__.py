"""Delivery-drone navigation stack.

Library pieces: coordinate frames (``frames``), sectioned path geometry
(``planner``), artificial-vector-field guidance (``vectorfield``), the
bias-augmented extended Kalman filter (``ekf``), UWB TDoA multilateration
(``uwb``), and the closed-loop mission simulator (``simworld``).  The
``cli`` module wires these into run/batch/report commands.
"""

__version__ = "0.1.0"
