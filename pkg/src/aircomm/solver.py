"""Nonlinear program solver and first-order optimality diagnostics.

Method: an augmented-Lagrangian outer loop around a bound-constrained
inner minimization.  Inequality rows are handled through slack variables
eliminated in closed form, which yields the one-sided quadratic penalty
computed in ``kernels.al_weights``: a slack s >= 0 with equality c + s = 0
minimizes the augmented term at s = max(0, -(lam/mu + c)).

The default inner minimizer is a projected Newton-CG: conjugate gradients
on the free-variable block with exact Hessian-vector products of the
augmented Lagrangian (Gauss-Newton penalty term plus the constraint and
cost curvature supplied by the transcription), a Jacobi preconditioner
built from the penalty diagonal, and a projected Armijo backtracking line
search.  A quasi-Newton (L-BFGS-B) inner is available as an option but
stalls on the long integrator chains of fine meshes; the free-horizon
cross-curvature is the one term the Hessian model omits.

Multipliers update classically: when the inner solve reaches the current
feasibility target the estimates absorb mu*c and the targets tighten;
otherwise the penalty grows.  Everything runs in the scaled space set up
by the transcription, so the default tolerances are dimensionless.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .transcribe import SparseNlp

__all__ = ["SolveOptions", "SolveResult", "KktResidual", "solve", "kkt_residual"]


@dataclass
class SolveOptions:
    max_outer: int = 60
    max_inner: int = 250           # Newton steps per outer iteration
    cg_max: int = 400              # CG floor per Newton step (scales with n)
    kkt_tol: float = 1e-6          # stationarity + complementarity target
    feas_tol: float = 1e-6         # scaled constraint violation target
    mu0: float = 10.0
    mu_growth: float = 4.0
    mu_max: float = 1e12
    lam_max: float = 1e10          # multiplier safeguard
    eta0: float = 1.0              # first multiplier-update feasibility gate
    omega0: float = 1e-3           # first inner projected-gradient target
    omega_min: float = 1e-9
    init_strategy: str = "straight_line"   # straight_line | midpoint | warm
    warm_x: np.ndarray | None = None
    warm_lam: np.ndarray | None = None
    inner_method: str = "newton_cg"        # newton_cg | lbfgsb
    lbfgs_memory: int = 30

    def __post_init__(self):
        if self.kkt_tol <= 0 or self.feas_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolveResult:
    x: np.ndarray                 # scaled decision vector
    lam: np.ndarray               # constraint multipliers (scaled rows)
    status: str                   # converged | iteration_limit | infeasible
    outer_iters: int
    inner_iters: int
    objective: float              # physical units
    kkt: "KktResidual"
    max_violation: float
    worst_constraint: str
    mu_final: float = 0.0
    log: list[str] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status == "converged"


@dataclass(frozen=True)
class KktResidual:
    stationarity: float
    feasibility: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.feasibility, self.complementarity)


def _violation(c, eq_mask):
    return np.abs(np.where(eq_mask, c, np.maximum(c, 0.0)))


def _projected_grad(g, x, lb, ub):
    """Gradient with components pointing out of the box zeroed."""
    r = g.copy()
    at_lo = x <= lb + 1e-12
    at_hi = x >= ub - 1e-12
    r[at_lo] = np.minimum(r[at_lo], 0.0)
    r[at_hi] = np.maximum(r[at_hi], 0.0)
    return r


def kkt_residual(nlp: SparseNlp, x, lam) -> KktResidual:
    """Scaled first-order optimality residuals at a candidate point.

    Bound multipliers are implicit: stationarity is the infinity norm of
    the projected Lagrangian gradient.  Multipliers for inequality rows
    are clipped to be non-negative before the complementarity check.
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    f, g, c, jac = nlp.eval_all(x)
    eq = nlp.eq_mask
    lam_eff = np.where(eq, lam, np.maximum(lam, 0.0))
    grad_l = g + jac.T.dot(lam_eff)
    stat = float(np.abs(_projected_grad(grad_l, x, nlp.lb, nlp.ub)).max(initial=0.0))
    feas = float(_violation(c, eq).max(initial=0.0))
    comp = float(np.abs(np.where(eq, 0.0, lam_eff * c)).max(initial=0.0))
    denom = 1.0 + float(np.abs(lam_eff).max(initial=0.0))
    return KktResidual(stat / denom, feas, comp / denom)


def _initial_point(nlp: SparseNlp, opts: SolveOptions):
    if opts.init_strategy == "warm" and opts.warm_x is not None:
        return np.clip(opts.warm_x, nlp.lb, nlp.ub)
    if opts.init_strategy == "midpoint":
        lo = np.where(np.isfinite(nlp.lb), nlp.lb, -1.0)
        hi = np.where(np.isfinite(nlp.ub), nlp.ub, 1.0)
        return np.clip(0.5 * (lo + hi), nlp.lb, nlp.ub)
    # straight_line: the transcription's kinematically consistent guess
    return nlp.x0.copy()


def _steihaug(hv, g, mdiag, radius, tol, maxiter):
    """Trust-region CG (preconditioned): min g@d + d@H@d/2, |d|_M <= radius.

    Returns the step; handles negative and vanishing curvature by walking
    to the trust boundary.  Norm bookkeeping uses the standard M-norm
    recurrences.
    """
    n = g.size
    d = np.zeros(n)
    r = g.copy()
    z = r / mdiag
    p = -z
    rz = float(r @ z)
    g_norm = math.sqrt(max(rz, 1e-300))
    d_m = 0.0          # |d|_M^2
    dp_m = 0.0         # d.M.p
    p_m = rz           # |p|_M^2

    def to_boundary(d, p, d_m, dp_m, p_m):
        disc = max(dp_m * dp_m + p_m * (radius * radius - d_m), 0.0)
        tau = (-dp_m + math.sqrt(disc)) / max(p_m, 1e-300)
        return d + tau * p

    for _ in range(maxiter):
        hp = hv(p)
        php = float(p @ hp)
        if php <= 1e-14 * p_m:
            return to_boundary(d, p, d_m, dp_m, p_m)
        alpha = rz / php
        d_m_new = d_m + 2.0 * alpha * dp_m + alpha * alpha * p_m
        if d_m_new >= radius * radius:
            return to_boundary(d, p, d_m, dp_m, p_m)
        d = d + alpha * p
        r = r + alpha * hp
        z = r / mdiag
        rz_new = float(r @ z)
        if math.sqrt(rz_new) <= tol * g_norm:
            return d
        beta = rz_new / rz
        dp_m = beta * (dp_m + alpha * p_m)
        p_m = rz_new + beta * beta * p_m
        d_m = d_m_new
        p = -z + beta * p
        rz = rz_new
    return d


def _inner_newton(nlp, x, lam, mu, gtol, opts, radius0=10.0):
    """Projected trust-region Newton-CG on the augmented Lagrangian."""
    eq = nlp.eq_mask
    lb, ub = nlp.lb, nlp.ub
    movable = (ub - lb) > 1e-14

    def full_eval(z):
        f, g_obj, c, jac = nlp.eval_all(z)
        pen, w = kernels.al_weights(c, lam, mu, eq)
        return f + pen, g_obj + jac.T.dot(w), c, jac, w

    def merit_and_c(z):
        f, _, c, _ = nlp.eval_all(z, need_jac=False)
        pen, _ = kernels.al_weights(c, lam, mu, eq)
        return f + pen, c

    merit, grad, c, jac, w = full_eval(x)
    radius = radius0
    n_steps = 0
    pg = np.abs(_projected_grad(grad, x, lb, ub)).max(initial=0.0)
    for _ in range(opts.max_inner):
        pg = np.abs(_projected_grad(grad, x, lb, ub)).max(initial=0.0)
        if pg <= gtol:
            break
        free = movable & ~((x <= lb + 1e-12) & (grad > 0)) \
                       & ~((x >= ub - 1e-12) & (grad < 0))
        if not free.any():
            break
        jac_t = jac.T.tocsr()
        g_free = grad[free]
        cg_budget = min(max(opts.cg_max, int(free.sum())), 3000)
        cg_tol = min(0.1, math.sqrt(float(np.abs(g_free).max())))

        # rows with active penalty at the current point; rejected steps
        # that activate further rows fold them into the model and retry
        mask = eq | (lam + mu * c > 0.0)

        def make_model(mask_now):
            act = mask_now.astype(float)

            def hess_free(v_free):
                v = np.zeros(nlp.n)
                v[free] = v_free
                out = nlp.hess_vec(x, w, v)
                out += mu * jac_t.dot(act * jac.dot(v))
                return out[free]

            diag_pen = mu * np.asarray(jac.power(2).T.dot(act)).ravel()
            mdiag = np.maximum(diag_pen[free], 0.0) + 1.0
            return hess_free, mdiag

        hess_free, mdiag = make_model(mask)
        accepted = False
        for _attempt in range(40):
            d_free = _steihaug(hess_free, g_free, mdiag, radius, cg_tol,
                               cg_budget)
            d = np.zeros(nlp.n)
            d[free] = d_free
            x_try = np.clip(x + d, lb, ub)
            step_free = (x_try - x)[free]
            m_try, c_try = merit_and_c(x_try)
            grew = (~mask) & (lam + mu * c_try > 0.0)
            if grew.any():
                # the step runs into penalty walls the model cannot see;
                # teach the model and retry at the same radius
                mask = mask | grew
                hess_free, mdiag = make_model(mask)
                continue
            pred = -(float(g_free @ step_free)
                     + 0.5 * float(step_free @ hess_free(step_free)))
            ared = merit - m_try
            if pred <= 0.0 or not math.isfinite(m_try):
                radius *= 0.25
                if radius < 1e-12:
                    break
                continue
            rho = ared / pred
            if rho >= 1e-4:
                boundary_hit = (float(step_free @ (mdiag * step_free))
                                >= 0.8 * radius * radius)
                x = x_try
                accepted = True
                if boundary_hit and rho > 0.75:
                    radius = min(radius * 2.5, 50.0)
                elif boundary_hit and rho > 0.3:
                    radius = min(radius * 1.6, 50.0)
                elif rho < 0.25:
                    radius = max(radius * 0.5, 1e-12)
                break
            radius *= 0.25
            if radius < 1e-12:
                break
        if not accepted:
            break
        merit, grad, c, jac, w = full_eval(x)
        n_steps += 1
    else:
        return x, n_steps, False, radius
    pg = np.abs(_projected_grad(grad, x, lb, ub)).max(initial=0.0)
    return x, n_steps, bool(pg <= gtol), radius


def _inner_lbfgsb(nlp, x, lam, mu, gtol, opts, radius0=10.0):
    eq = nlp.eq_mask

    def fg(z):
        f, g, c, jac = nlp.eval_all(z)
        pen, w = kernels.al_weights(c, lam, mu, eq)
        return f + pen, g + jac.T.dot(w)

    res = minimize(fg, x, jac=True, method="L-BFGS-B",
                   bounds=list(zip(nlp.lb, nlp.ub)),
                   options={"maxiter": opts.max_inner * 20,
                            "maxfun": opts.max_inner * 40,
                            "ftol": 1e-16, "gtol": gtol,
                            "maxcor": opts.lbfgs_memory})
    _, g = fg(res.x)
    pg = np.abs(_projected_grad(g, res.x, nlp.lb, nlp.ub)).max(initial=0.0)
    return res.x, int(res.nit), bool(pg <= gtol), radius0


def solve(nlp: SparseNlp, opts: SolveOptions | None = None) -> SolveResult:
    """Minimize the transcribed program to the requested KKT tolerance.

    Deterministic given identical inputs and options.  On failure the best
    point found is returned with a status explaining why, never silently.
    """
    opts = opts or SolveOptions()
    inner = _inner_newton if opts.inner_method == "newton_cg" else _inner_lbfgsb
    x = _initial_point(nlp, opts)
    m = nlp.eq_mask.size
    if opts.warm_lam is not None and opts.warm_lam.size == m:
        lam = opts.warm_lam.copy()
    elif getattr(nlp, "lam0", None) is not None:
        lam = nlp.lam0.copy()
    else:
        lam = np.zeros(m)
    eq = nlp.eq_mask
    mu = opts.mu0
    omega = opts.omega0
    eta = opts.eta0
    log: list[str] = []
    inner_total = 0
    best = None   # (viol_max, x, lam)
    status = "iteration_limit"
    x_prev = x.copy()
    viol_max = math.inf
    f = math.nan
    outer = 0
    mu_stalled = 0
    radius = 10.0
    shifted_ref = math.inf   # feasibility at the last multiplier update

    for outer in range(1, opts.max_outer + 1):
        x, nit, subsolved, radius = inner(nlp, x, lam, mu,
                                          max(omega, opts.omega_min), opts,
                                          radius0=max(radius * 4.0, 1e-3))
        inner_total += nit
        f, g, c, jac = nlp.eval_all(x)
        viol = _violation(c, eq)
        viol_max = float(viol.max(initial=0.0))
        # feasibility measure includes multiplier activity on inactive
        # inequality rows, as in safeguarded multiplier methods
        shifted = float(np.abs(
            np.where(eq, c, np.maximum(c, -lam / mu))).max(initial=0.0))
        step = float(np.linalg.norm(x - x_prev))
        x_prev = x.copy()

        if best is None or viol_max < best[0]:
            best = (viol_max, x.copy(), lam.copy())

        if step < 1e-7:
            # the inner cannot move: whatever point it sits at is the best
            # answer this subproblem will give
            subsolved = True
        # the gate is relative as well as scheduled: multipliers keep
        # learning as long as feasibility is not degrading, while genuine
        # blow-ups fall through to the penalty branch
        gate = max(eta, 0.8 * shifted_ref, opts.feas_tol)
        if shifted <= gate or m == 0:
            shifted_ref = min(shifted, shifted_ref)
            lam = np.where(eq, lam + mu * c, np.maximum(0.0, lam + mu * c))
            np.clip(lam, -opts.lam_max, opts.lam_max, out=lam)
            kkt = kkt_residual(nlp, x, lam)
            log.append(_log_line(outer, nit, f, viol_max,
                                 kkt.stationarity, kkt.complementarity,
                                 mu, step))
            if (viol_max <= opts.feas_tol
                    and kkt.stationarity <= opts.kkt_tol
                    and kkt.complementarity <= opts.kkt_tol):
                status = "converged"
                break
            eta = max(eta / mu ** 0.5, opts.feas_tol * 0.1)
            omega = max(omega / 5.0, opts.omega_min)
        elif subsolved or nit < 2:
            # inner solve finished (or could not move) yet feasibility
            # missed its gate: sharpen the penalty
            log.append(_log_line(outer, nit, f, viol_max,
                                 math.nan, math.nan, mu, step))
            if mu >= opts.mu_max:
                mu_stalled += 1
                if mu_stalled >= 3 and viol_max > 1e3 * opts.feas_tol:
                    status = "infeasible"
                    break
            mu = min(mu * opts.mu_growth, opts.mu_max)
            eta = max(opts.eta0 / mu ** 0.1, opts.feas_tol * 0.1)
            omega = max(opts.omega0 / mu ** 0.5, opts.omega_min)
        else:
            # ran out of inner budget mid-descent: keep everything and
            # continue the same subproblem from the partial point
            log.append(_log_line(outer, nit, f, viol_max,
                                 math.nan, math.nan, mu, step))

    if status != "converged" and best is not None and best[0] < viol_max:
        _, x, lam = best
        f, g, c, jac = nlp.eval_all(x)
        viol = _violation(c, eq)
        viol_max = float(viol.max(initial=0.0))

    kkt = kkt_residual(nlp, x, lam)
    worst = ""
    if viol_max > 0 and nlp.families:
        idx = int(np.argmax(viol))
        for fam in nlp.families:
            if fam.row_start <= idx < fam.row_start + fam.rows:
                worst = f"{fam.name}#{idx - fam.row_start}"
                break
    return SolveResult(x, lam, status, outer, inner_total,
                       f * nlp.obj_scale, kkt, viol_max, worst, mu, log)


def _log_line(outer, inner, obj, feas, stat, comp, mu, step):
    return (f"iter={outer} inner={inner} obj={obj:.12e} feas={feas:.3e} "
            f"stat={stat:.3e} comp={comp:.3e} mu={mu:.1e} step={step:.3e}")
