"""Pure-numpy implementations of the hot numerical kernels.

These are the fallback twins of the Cython routines in ``_compiled.pyx``.
Both backends must produce identical results for the same inputs; the
parity test in ``tests/test_kernels.py`` enforces this.
"""

import numpy as np

LN2 = 0.6931471805599453

BACKEND = "python"


def capacity_terms(p, chi, r, coefs, alpha, bandwidth, need_jac=True):
    """Shared-band rate-region gap for one transmitter subset.

    Arrays ``p``, ``chi``, ``r`` have shape (n_users, n_points) and hold the
    per-link transmit powers [W], squared distances [m^2] and rates [bit/s]
    of the subset members.  ``coefs[i]`` collects gain constants divided by
    receiver noise power, so the received SNR contribution of user i is
    ``coefs[i] * p[i] * chi[i]**-alpha``.

    Returns ``(gap, dgap_dp, dgap_dchi)`` where ``gap`` has shape
    (n_points,) and is <= 0 for achievable rate tuples.  The rate partials
    are identically 1 and are not returned.
    """
    chi_pow = chi ** (-alpha)
    terms = coefs[:, None] * p * chi_pow
    snr = terms.sum(axis=0)
    gap = r.sum(axis=0) - bandwidth * np.log2(1.0 + snr)
    if not need_jac:
        return gap, None, None
    common = (bandwidth / LN2) / (1.0 + snr)
    dgap_dp = -common * coefs[:, None] * chi_pow
    dgap_dchi = common * alpha * terms / chi
    return gap, dgap_dp, dgap_dchi


def drag_terms(v, cd1, cd2, need_jac=True):
    """Quadratic-plus-inverse-quadratic drag and its speed derivative."""
    v2 = v * v
    drag = cd1 * v2 + cd2 / v2
    if not need_jac:
        return drag, None
    ddrag = 2.0 * cd1 * v - 2.0 * cd2 / (v2 * v)
    return drag, ddrag


def speed_power_terms(v, cd1, cd2, need_jac=True):
    """Drag power v*D(v) and its derivative, used by the convexified cost."""
    v2 = v * v
    power = cd1 * v2 * v + cd2 / v
    if not need_jac:
        return power, None
    dpower = 3.0 * cd1 * v2 - cd2 / v2
    return power, dpower


def al_weights(c, lam, mu, eq_mask):
    """Augmented-Lagrangian penalty value and constraint weights.

    Equality rows contribute ``lam*c + mu/2*c**2`` with weight
    ``lam + mu*c``.  Inequality rows (c <= 0) use the slack-eliminated
    quadratic penalty: active where ``lam + mu*c > 0``, flat elsewhere.
    Returns ``(penalty, w)`` with ``w`` such that the penalty gradient is
    ``J.T @ w``.
    """
    s = lam + mu * c
    w = np.where(eq_mask, s, np.maximum(s, 0.0))
    penalty = np.where(
        eq_mask | (s > 0.0),
        (w * w - lam * lam) / (2.0 * mu),
        -lam * lam / (2.0 * mu),
    )
    return float(penalty.sum()), w
