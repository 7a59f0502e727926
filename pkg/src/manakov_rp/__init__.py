"""Dual-polarization regular-perturbation channel models for WDM fiber links
and achievable-rate estimation with particle filtering."""

__version__ = "0.1.0"
