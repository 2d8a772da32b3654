"""Closed-form solutions for special network configurations.

These serve as independent cross-checks of the transcribed solves: the
water-filling power profile for a fixed-trajectory single link, the
two-arc speed profile that maximizes data transfer at full power, and the
decode-order/power assignment minimizing sum power on a two-user shared
band.
"""

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "WaterfillResult",
    "waterfill",
    "SpeedProfile",
    "bangbang_speed",
    "SicResult",
    "sic_order",
]


@dataclass
class WaterfillResult:
    """Power-minimal allocation delivering a data target over a known channel.

    The profile clamps the water level against the effective noise
    ``noise/gain(t)``: zero where the level sits below the noise floor,
    the power cap where the level exceeds floor + cap.
    """

    water_level: float
    power: np.ndarray
    rate: np.ndarray
    achieved_bits: float
    data_residual: float       # |achieved - target| in bits
    at_zero: np.ndarray        # bool mask, lower clamp active
    at_max: np.ndarray         # bool mask, upper clamp active
    energy: float

    def dual_ok(self, tol=1e-9) -> bool:
        """Pointwise first-order check of the clamp structure."""
        return bool(self.data_residual <= max(1.0, tol * self.achieved_bits))


def waterfill(times, gains, data_bits, bandwidth, noise_power, p_max,
              tol_bits=1.0, max_iter=200) -> WaterfillResult:
    """Bisection on the water level until the trapezoidal data integral
    matches ``data_bits`` to within ``tol_bits``.

    ``gains`` is the channel power gain series on ``times``; rates are
    ``B*log2(1 + gain*p/noise)``.  Raises when the target exceeds the
    full-power capacity of the window.
    """
    times = np.asarray(times, dtype=float)
    gains = np.asarray(gains, dtype=float)
    if times.shape != gains.shape:
        raise ValueError("times and gains must share a grid")
    if np.any(gains <= 0):
        raise ValueError("channel gains must be positive")
    if data_bits < 0:
        raise ValueError("data target must be non-negative")
    floor = noise_power / gains

    def profile(level):
        return np.clip(level - floor, 0.0, p_max)

    def achieved(level):
        p = profile(level)
        rate = bandwidth * np.log2(1.0 + gains * p / noise_power)
        return float(np.trapezoid(rate, times)), p, rate

    cap, _, _ = achieved(float(floor.min()) + p_max)
    if data_bits > cap + tol_bits:
        raise ValueError(
            f"infeasible data target: {data_bits:.3e} bits exceeds the "
            f"full-power capacity {cap:.3e} bits")

    lo, hi = 0.0, float(floor.min()) + p_max
    level = hi
    for _ in range(max_iter):
        level = 0.5 * (lo + hi)
        got, p, rate = achieved(level)
        if abs(got - data_bits) <= tol_bits:
            break
        if got < data_bits:
            lo = level
        else:
            hi = level
    else:
        got, p, rate = achieved(level)

    return WaterfillResult(
        water_level=level, power=p, rate=rate, achieved_bits=got,
        data_residual=abs(got - data_bits),
        at_zero=p <= 0.0, at_max=p >= p_max,
        energy=float(np.trapezoid(p, times)),
    )


@dataclass
class SpeedProfile:
    """Piecewise-constant speed schedule with exact path integral."""

    breakpoints: np.ndarray    # segment end times, ascending, last = T
    speeds: np.ndarray         # one speed per segment
    switch_time: float         # first switch (t1)
    second_switch: float | None = None

    def sample(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t, side="left")
        idx = np.clip(idx, 0, len(self.speeds) - 1)
        out = self.speeds[idx]
        return float(out) if out.ndim == 0 else out

    def displacement(self) -> float:
        starts = np.concatenate([[0.0], self.breakpoints[:-1]])
        return float(np.sum(self.speeds * (self.breakpoints - starts)))


def bangbang_speed(q_init, q_final, v_min, v_max, horizon) -> SpeedProfile:
    """Data-transfer-maximizing speed schedule past a receiver at the origin.

    Receding geometry (0 < q_init < q_final): dwell at the slow bound
    while close, then sprint, switching at
    t1 = ((q_final - q_init) - v_max*T) / (v_min - v_max).

    Fly-over geometry (q_init < 0 < q_final): sprint, dwell slow while the
    receiver is nearest, sprint again; the slow window is placed so its
    endpoints are mirrored around the closest approach.
    """
    trip = q_final - q_init
    if trip < 0:
        mirrored = bangbang_speed(-q_init, -q_final, v_min, v_max, horizon)
        return mirrored
    if not (0 < v_min <= v_max):
        raise ValueError("need 0 < v_min <= v_max")
    if not (v_min * horizon - 1e-9 <= trip <= v_max * horizon + 1e-9):
        raise ValueError(
            f"endpoints unreachable: trip {trip} m outside "
            f"[{v_min * horizon}, {v_max * horizon}] m")
    if v_max == v_min:
        return SpeedProfile(np.array([horizon]), np.array([v_min]),
                            switch_time=horizon)

    if q_init >= 0 or q_final <= 0:
        # One-sided: the channel improves monotonically toward the origin.
        # Moving away (receding) dwells first; approaching is the mirror
        # image and sprints first.
        t1 = (trip - v_max * horizon) / (v_min - v_max)
        t1 = float(np.clip(t1, 0.0, horizon))
        receding = q_init >= 0
        if receding:
            bps = np.array([t1, horizon])
            spd = np.array([v_min, v_max])
        else:
            bps = np.array([horizon - t1, horizon])
            spd = np.array([v_max, v_min])
        return SpeedProfile(bps, spd, switch_time=float(bps[0]))

    # fly-over: slow window of fixed duration placed symmetrically about
    # the origin crossing
    tau = (v_max * horizon - trip) / (v_max - v_min)
    t1 = (-v_min * tau / 2.0 - q_init) / v_max
    t1 = float(np.clip(t1, 0.0, horizon - tau))
    t2 = t1 + tau
    return SpeedProfile(
        np.array([t1, t2, horizon]), np.array([v_max, v_min, v_max]),
        switch_time=t1, second_switch=t2)


@dataclass
class SicResult:
    """Sum-power-minimal decode schedule for two users on one band."""

    decode_order: tuple[int, ...]   # user indices, first decoded first
    powers: tuple[float, float]
    corner_weight: float            # 0 when user 0 is nearer (or tie)
    sum_power: float


def sic_order(chis, rates, bandwidth, noise_power, alpha,
              gain_const=1.0, h=1.0, p_max=math.inf) -> SicResult:
    """Minimum-power decode order and powers for a two-user shared band.

    The nearer user is decoded first (its signal is cancelled before the
    farther user's), so at the optimum the farther user's single-user
    bound and the sum bound hold with equality.  Ties break to user-id
    order.  Raises when the requested rates need more than ``p_max`` from
    either user.
    """
    if len(chis) != 2 or len(rates) != 2:
        raise ValueError("exactly two users required")
    if min(rates) < 0:
        raise ValueError("rates must be non-negative")
    eta = np.array([gain_const * h / c ** alpha for c in chis])
    if chis[0] <= chis[1]:
        near, far = 0, 1
    else:
        near, far = 1, 0
    lam_sum = noise_power * (2.0 ** ((rates[0] + rates[1]) / bandwidth) - 1.0)
    beta_far = noise_power * (2.0 ** (rates[far] / bandwidth) - 1.0)
    p_far = beta_far / eta[far]
    p_near = (lam_sum - beta_far) / eta[near]
    powers = [0.0, 0.0]
    powers[far] = p_far
    powers[near] = p_near
    if max(powers) > p_max * (1 + 1e-12):
        raise ValueError(
            f"rates unreachable under the {p_max} W cap: needs {max(powers):.3g} W")
    return SicResult(
        decode_order=(near, far),
        powers=(powers[0], powers[1]),
        corner_weight=0.0 if near == 0 else 1.0,
        sum_power=float(p_near + p_far),
    )
