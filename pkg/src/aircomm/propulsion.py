"""Fixed-wing longitudinal flight: drag law, thrust balance, energy.

The drag model is the sum of a parasitic term growing with v^2 and a
lift-induced term decaying with v^-2, valid only inside the admissible
speed interval; the optimizer realizes the out-of-range branch as hard
speed bounds rather than a penalty, keeping the program smooth.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import PropulsionCoeffs

__all__ = [
    "PhysicalAirframe",
    "coeffs_from_physical",
    "drag",
    "required_thrust",
    "propulsion_power",
    "propulsion_energy",
    "constant_speed_energy",
]

GRAVITY = 9.81


@dataclass(frozen=True)
class PhysicalAirframe:
    """Geometric/aerodynamic description of a fixed-wing airframe."""

    air_density: float          # kg/m^3
    zero_lift_drag_coeff: float
    wing_area: float            # m^2
    oswald_factor: float
    aspect_ratio: float
    mass: float                 # kg

    @property
    def lift(self) -> float:
        """Level-flight lift equals weight."""
        return self.mass * GRAVITY


def coeffs_from_physical(af: PhysicalAirframe) -> PropulsionCoeffs:
    """Collapse an airframe description into the two drag coefficients."""
    for name in ("air_density", "zero_lift_drag_coeff", "wing_area",
                 "oswald_factor", "aspect_ratio", "mass"):
        if getattr(af, name) <= 0:
            raise ValueError(f"airframe field {name} must be positive")
    cd1 = af.air_density * af.zero_lift_drag_coeff * af.wing_area / 2.0
    cd2 = 2.0 * af.lift ** 2 / (
        math.pi * af.oswald_factor * af.aspect_ratio * af.air_density * af.wing_area)
    return PropulsionCoeffs(cd1=cd1, cd2=cd2)


def _check_speed(v, bounds):
    if bounds is None:
        if np.any(np.asarray(v) <= 0):
            raise ValueError("speed must be positive")
        return
    lo, hi = bounds
    arr = np.asarray(v, dtype=float)
    if np.any(arr < lo - 1e-12) or np.any(arr > hi + 1e-12):
        raise ValueError(f"speed outside admissible range [{lo}, {hi}]")


def drag(v, coeffs: PropulsionCoeffs, speed_bounds=None):
    """Resistive force [N] at speed v; errors outside the admissible range."""
    _check_speed(v, speed_bounds)
    arr = np.ascontiguousarray(np.atleast_1d(v), dtype=float)
    d, _ = kernels.drag_terms(arr, coeffs.cd1, coeffs.cd2, need_jac=False)
    return float(d[0]) if np.isscalar(v) or np.ndim(v) == 0 else d


def required_thrust(v, accel, mass, coeffs: PropulsionCoeffs, speed_bounds=None):
    """Thrust balancing drag plus inertial force (may be negative)."""
    out = drag(v, coeffs, speed_bounds) + mass * np.asarray(accel, dtype=float)
    return float(out) if np.ndim(out) == 0 else out


def propulsion_power(v, thrust):
    """Instantaneous mechanical power F*v [W]."""
    return np.asarray(thrust, dtype=float) * np.asarray(v, dtype=float)


def propulsion_energy(times, v, thrust) -> float:
    """Trapezoidal integral of F(t)*v(t) over a common time grid [J]."""
    times = np.asarray(times, dtype=float)
    v = np.asarray(v, dtype=float)
    thrust = np.asarray(thrust, dtype=float)
    if not (times.shape == v.shape == thrust.shape):
        raise ValueError("time, speed and thrust grids differ in length")
    if times.size < 2:
        return 0.0
    return float(np.trapezoid(v * thrust, times))


def constant_speed_energy(v: float, duration: float, coeffs: PropulsionCoeffs) -> float:
    """Energy of level flight at constant speed: T * (cd1*v^3 + cd2/v)."""
    return duration * (coeffs.cd1 * v ** 3 + coeffs.cd2 / v)
