"""Networked ISAC toolkit: diffusion sparse TLS sensing, steady-state MSE theory
and joint sensing/communication beamforming."""

__version__ = "0.1.0"
