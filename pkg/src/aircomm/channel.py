"""Channel physics: link gains, shared-band rate regions, outage margins,
Rician fading draws and receiver-side decode checks.

Distances enter all formulas as *squared* distances chi [m^2]; the path
loss exponent applies to chi directly, so the effective falloff in true
distance is twice the configured exponent.  This is easy to misread:
with the default exponent 1.5 the received power falls off as d^-3.
"""

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import stats

from . import kernels
from .model import ChannelSpec

__all__ = [
    "link_gain",
    "squared_distance",
    "mac_subset_gap",
    "effective_gain",
    "outage_for_effective_gain",
    "rice_params",
    "fading_ccdf",
    "sample_fading",
    "decode_check",
    "ReceivedPower",
]

# Beyond this many users on one band the constraint count (2^n - 1)
# stops being a sensible optimization target.
MAX_BAND_USERS = 16

# Rice factors at or above this are treated as the no-fading limit.
RICE_K_INF = 1e12


@dataclass(frozen=True)
class ReceivedPower:
    """Planned (outage-margin) and realized received signal power [W]."""

    planned: float
    realized: float


def squared_distance(dq: float, d_offset: float, d_alt: float) -> float:
    """Squared separation from per-axis displacements."""
    return dq * dq + d_offset * d_offset + d_alt * d_alt


def link_gain(chi, h=1.0, gain_const=1.0, alpha=1.5):
    """Channel power gain h*G/chi^alpha for squared distance chi.

    Vectorized over ``chi``.  Raises for non-positive distances, which can
    only arise from coincident nodes.
    """
    chi_arr = np.asarray(chi, dtype=float)
    if np.any(chi_arr <= 0):
        raise ValueError("squared distance must be positive")
    if alpha <= 1:
        raise ValueError("path loss exponent must exceed 1")
    if np.any(np.asarray(h) < 0):
        raise ValueError("channel gain must be non-negative")
    out = h * gain_const / chi_arr ** alpha
    return out if out.ndim else float(out)


def mac_subset_gap(rates, powers, chis, bandwidth, noise_power,
                   h=1.0, gain_const=1.0, alpha=1.5, subset=None):
    """Rate-region gap for one subset of users sharing a receiver band.

    ``rates``, ``powers``, ``chis`` are per-user sequences (or arrays with
    a trailing time axis).  The gap is

        sum(rates) - B * log2(1 + sum(gain_i * p_i) / noise_power)

    over the selected ``subset`` (all users when omitted); the rate tuple
    is achievable iff the gap is <= 0 for every nonempty subset.
    """
    def per_user(x):
        arr = np.asarray(x, dtype=float)
        return arr.reshape(arr.shape[0], -1)

    rates, powers, chis = per_user(rates), per_user(powers), per_user(chis)
    if subset is not None:
        idx = list(subset)
        rates, powers, chis = rates[idx], powers[idx], chis[idx]
    if rates.shape[0] == 0:
        raise ValueError("subset must be nonempty")
    if np.any(chis <= 0):
        raise ValueError("squared distance must be positive")
    h_arr = np.broadcast_to(np.asarray(h, dtype=float), (rates.shape[0],))
    coefs = np.ascontiguousarray(h_arr * gain_const / noise_power)
    gap, _, _ = kernels.capacity_terms(
        np.ascontiguousarray(powers), np.ascontiguousarray(chis),
        np.ascontiguousarray(rates), coefs, alpha, bandwidth, need_jac=False)
    return float(gap[0]) if gap.size == 1 else gap


def all_subset_gaps(rates, powers, chis, bandwidth, noise_power, **kw):
    """Gaps for every nonempty user subset, in (cardinality, lex) order."""
    n = len(rates)
    out = {}
    for size in range(1, n + 1):
        for subset in combinations(range(n), size):
            out[subset] = mac_subset_gap(rates, powers, chis, bandwidth,
                                         noise_power, subset=subset, **kw)
    return out


# ---------------------------------------------------------------------------
# fading

def rice_params(rice_k: float) -> tuple[float, float]:
    """Amplitude distribution parameters (line-of-sight, scatter spread).

    Chosen so the mean power E[nu^2] = s^2 + 2*sigma^2 is exactly 1.
    """
    if rice_k < 0:
        raise ValueError("rice_k must be non-negative")
    s = math.sqrt(rice_k / (rice_k + 1.0))
    sigma = math.sqrt(1.0 / (2.0 * (rice_k + 1.0)))
    return s, sigma


def fading_ccdf(x: float, rice_k: float) -> float:
    """P{h >= x} for the squared Rician amplitude h (first-order Marcum Q)."""
    if x <= 0:
        return 1.0
    if rice_k >= RICE_K_INF:
        return 1.0 if x <= 1.0 else 0.0
    s, sigma = rice_params(rice_k)
    # nu/sigma is Rice-distributed with shape b = s/sigma, so the survival
    # function of h = nu^2 is Q_1(s/sigma, sqrt(x)/sigma).
    return float(stats.rice.sf(math.sqrt(x) / sigma, s / sigma))


def effective_gain(spec: ChannelSpec) -> float:
    """Power-gain margin used for planning.

    AWGN channels have no fading, so the margin is 1.  For slow fading the
    planner uses the gain quantile that is exceeded with probability
    1 - outage, found by bisecting the Rician CCDF to 1e-10.
    """
    if spec.mode == "awgn":
        return 1.0
    if spec.mode != "slow_fading":
        raise ValueError(f"unknown channel mode {spec.mode!r}")
    if not 0 < spec.outage < 1:
        raise ValueError("outage must lie in (0, 1)")
    if spec.rice_k >= RICE_K_INF:
        return 1.0
    target = 1.0 - spec.outage
    lo, hi = 0.0, 1.0
    # CCDF is 1 at 0 and decreasing; expand until it drops below target.
    while fading_ccdf(hi, spec.rice_k) > target:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("effective gain bisection failed to bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if fading_ccdf(mid, spec.rice_k) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-10:
            return 0.5 * (lo + hi)
    raise RuntimeError("effective gain bisection did not converge")


def outage_for_effective_gain(h_eff: float, rice_k: float) -> float:
    """Outage probability that makes the planning margin equal h_eff."""
    if not h_eff > 0:
        raise ValueError("h_eff must be positive")
    return 1.0 - fading_ccdf(h_eff, rice_k)


def sample_fading(rice_k: float, rng: np.random.Generator, size=None):
    """Draw squared Rician amplitudes h with E[h] = 1.

    rice_k = 0 reduces to Rayleigh power (unit-mean exponential); values
    at or above RICE_K_INF return exactly 1 (no fading).
    """
    if rice_k >= RICE_K_INF:
        return 1.0 if size is None else np.ones(size)
    s, sigma = rice_params(rice_k)
    x = rng.normal(s, sigma, size=size)
    y = rng.normal(0.0, sigma, size=size)
    return x * x + y * y


# ---------------------------------------------------------------------------
# decoding

def _snir_ok(planned, realized, members, others, noise_power):
    """Realized SNIR at least planned SNIR for every sub-group of members."""
    denom_plan = noise_power + sum(planned[j] for j in others)
    denom_real = noise_power + sum(realized[j] for j in others)
    for size in range(1, len(members) + 1):
        for group in combinations(members, size):
            lhs = sum(realized[m] for m in group) / denom_real
            rhs = sum(planned[m] for m in group) / denom_plan
            if lhs < rhs - 1e-12 * max(1.0, abs(rhs)):
                return False
    return True


def decode_check(planned, realized, rates, noise_power) -> tuple[int, ...]:
    """Largest decodable user subset on one receiver band.

    ``planned`` and ``realized`` are per-user received powers; users
    outside the decoded set are treated as interference at their realized
    power.  Candidate subsets are scanned in descending cardinality;
    among equal sizes, preference goes to the subset with the larger
    planned received powers.  Returns user indices, sorted.
    """
    n = len(planned)
    if n == 0:
        return ()
    if not len(realized) == len(rates) == n:
        raise ValueError("planned/realized/rates length mismatch")
    if n > MAX_BAND_USERS:
        raise ValueError(f"more than {MAX_BAND_USERS} users on one band")
    users = list(range(n))

    def preference(subset):
        return tuple(sorted((planned[i] for i in subset), reverse=True))

    for size in range(n, 0, -1):
        candidates = sorted(combinations(users, size),
                            key=preference, reverse=True)
        for subset in candidates:
            others = [u for u in users if u not in subset]
            if _snir_ok(planned, realized, subset, others, noise_power):
                return tuple(sorted(subset))
    return ()
