"""Polarization eye-tracking toolkit: PFA capture simulation, demosaicking,
Stokes products, model-input formation, feature stability, calibration and
gaze-error statistics."""

__version__ = "0.1.0"
