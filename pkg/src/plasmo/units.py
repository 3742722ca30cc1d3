"""Unit conversions.

Internally lengths are in micrometres and frequencies in units of c/(1 um),
so a vacuum wavelength of 1 um has frequency 1 and angular frequency 2*pi.
"""

import numpy as np

HC_EV_UM = 1.239841984  # h*c in eV*um
C0 = 299_792_458.0  # m/s
EPS0 = 8.8541878128e-12  # F/m
MU0 = 1.25663706212e-6  # H/m
ETA0 = np.sqrt(MU0 / EPS0)  # ohm
LENGTH_UNIT = 1e-6  # m


def nm_to_um(x):
    return np.asarray(x, dtype=float) * 1e-3


def wavelength_nm_to_omega(wavelength_nm):
    """Angular frequency (program units) of a vacuum wavelength in nm."""
    return 2.0 * np.pi / nm_to_um(wavelength_nm)


def ev_to_omega(energy_ev):
    return 2.0 * np.pi * np.asarray(energy_ev, dtype=float) / HC_EV_UM


def omega_to_ev(omega):
    return np.asarray(omega, dtype=float) * HC_EV_UM / (2.0 * np.pi)


def wavelength_nm_to_ev(wavelength_nm):
    return HC_EV_UM / nm_to_um(wavelength_nm)


def conductivity_si_to_program(sigma):
    """S/m -> units of eps0*c/a."""
    return np.asarray(sigma, dtype=float) * LENGTH_UNIT / (EPS0 * C0)
