"""High-level solve drivers shared by the CLI, simulation and tests.

Free-trajectory programs are solved in two stages: first with the
longitudinal profile pinned to the transcription's initial guess (a
convex transmission-allocation problem), then released with the first
stage's point and multipliers as a warm start.  Pinning reuses the same
row/column layout, so multipliers transfer one-to-one.
"""

from dataclasses import replace

import numpy as np

from .model import ScenarioConfig
from .ocp import OcpOptions, build_ocp
from .solution import Solution
from .solver import SolveOptions, SolveResult, solve
from .transcribe import Mesh, SparseNlp, extract_solution, transcribe

__all__ = ["solve_scenario", "SolveOutput"]


class SolveOutput:
    def __init__(self, solution: Solution, result: SolveResult, nlp: SparseNlp):
        self.solution = solution
        self.result = result
        self.nlp = nlp

    @property
    def success(self) -> bool:
        return self.result.success


def _pin_mobility(nlp: SparseNlp):
    """Clamp q/v blocks to the initial guess; returns the original bounds."""
    saved = (nlp.lb.copy(), nlp.ub.copy())
    for block in nlp.blocks:
        if block.kind in ("q", "v"):
            sl = slice(block.start, block.start + block.count)
            nlp.lb[sl] = nlp.x0[sl]
            nlp.ub[sl] = nlp.x0[sl]
    return saved


def solve_scenario(cfg: ScenarioConfig, options: OcpOptions | None = None,
                   mesh_k: int = 200, scheme: str = "trapezoidal",
                   solve_options: SolveOptions | None = None,
                   two_stage: bool | None = None) -> SolveOutput:
    """Build, transcribe and solve one scenario window.

    ``two_stage`` defaults to on for free-trajectory energy problems and
    off otherwise.
    """
    options = options or OcpOptions()
    base_opts = solve_options or SolveOptions()
    problem = build_ocp(cfg, options)
    mesh = Mesh.uniform(problem.t0, problem.horizon, mesh_k)
    nlp = transcribe(problem, mesh, scheme)

    has_free_mobility = any(b.kind == "v" for b in nlp.blocks)
    if two_stage is None:
        two_stage = has_free_mobility and options.objective == "energy"

    if two_stage and has_free_mobility:
        saved = _pin_mobility(nlp)
        stage_opts = replace(base_opts, init_strategy="straight_line",
                             warm_x=None, warm_lam=None,
                             max_outer=min(base_opts.max_outer, 40))
        stage = solve(nlp, stage_opts)
        nlp.lb, nlp.ub = saved
        # keep the penalty the first stage ended on: releasing the
        # trajectory under a weak penalty would walk feasibility back out
        final_opts = replace(base_opts, init_strategy="warm",
                             warm_x=stage.x.copy(), warm_lam=stage.lam.copy(),
                             mu0=max(base_opts.mu0, stage.mu_final))
        result = solve(nlp, final_opts)
        result.log = stage.log + ["stage: releasing pinned trajectory"] + result.log
        result.inner_iters += stage.inner_iters
    else:
        result = solve(nlp, base_opts)

    solution = extract_solution(result.x, nlp)
    solution.diagnostics = {
        "status": result.status,
        "outer_iters": result.outer_iters,
        "inner_iters": result.inner_iters,
        "kkt_stationarity": result.kkt.stationarity,
        "kkt_feasibility": result.kkt.feasibility,
        "kkt_complementarity": result.kkt.complementarity,
        "max_violation": result.max_violation,
        "worst_constraint": result.worst_constraint,
        "log": result.log,
    }
    return SolveOutput(solution, result, nlp)
