"""Continuous-time problem assembly.

Builds the joint transmission/mobility optimal control problem for a
scenario: per-link power/rate/distance trajectories, per-node buffers,
longitudinal flight states, shared-band rate-region constraints over all
transmitter subsets, and the reformulation toggles (distance relaxation,
convexified propulsion cost, frozen trajectories, single-hop chains and
offline pruning of inactive rate bounds).
"""

import math
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .channel import MAX_BAND_USERS, effective_gain
from .model import ScenarioConfig, validate_scenario

__all__ = [
    "OcpOptions",
    "Link",
    "Band",
    "OcpProblem",
    "build_ocp",
    "enumerate_mac_subsets",
    "prune_sic",
    "dump_problem",
]


@dataclass(frozen=True)
class OcpOptions:
    """Reformulation and objective switches.

    distance_relaxation   squared-distance slacks bounded below by geometry
                          instead of pinned to it (tight at optima wherever
                          power flows, so the solution is unchanged)
    convex_cost_substitution
                          propulsion cost rewritten as drag power plus the
                          kinetic-energy increment; thrust is eliminated and
                          only a finite upper thrust bound is kept
    fixed_trajectory      freeze every aerial node to its constant-speed
                          reference profile and drop mobility constraints
    single_hop_chain      keep only consecutive-node links with single-user
                          rate bounds and a common minimum rate
    sic_pruning           drop provably inactive single-user bounds on
                          two-user bands (fixed trajectories only)
    objective             "energy" (transmit + propulsion) or "throughput"
                          (maximize delivered bits at pinned max power)
    """

    distance_relaxation: bool = False
    convex_cost_substitution: bool = False
    fixed_trajectory: bool = False
    single_hop_chain: bool = False
    sic_pruning: bool = False
    objective: str = "energy"
    min_rate: float = 0.0
    free_terminal_time: bool = False
    overtime_weight: float = 0.0
    wind_offset: float = 0.0

    FLAGS = ("distance_relaxation", "convex_cost_substitution",
             "fixed_trajectory", "single_hop_chain", "sic_pruning",
             "free_terminal_time")

    @classmethod
    def from_string(cls, text: str) -> "OcpOptions":
        """Parse 'flag1,flag2,key=value' option lists (CLI surface)."""
        kwargs = {}
        for item in filter(None, (s.strip() for s in text.split(","))):
            if "=" in item:
                key, value = item.split("=", 1)
                key = key.strip()
                if key == "objective":
                    kwargs[key] = value.strip()
                elif key in ("min_rate", "overtime_weight", "wind_offset"):
                    kwargs[key] = float(value)
                else:
                    raise ValueError(f"unknown option {key!r}")
            elif item in cls.FLAGS:
                kwargs[item] = True
            else:
                raise ValueError(f"unknown option flag {item!r}")
        return cls(**kwargs)


@dataclass(frozen=True)
class Link:
    """Directed transmitter -> receiver pair with its band allocation."""

    tx: str
    rx: str
    bandwidth: float      # Hz available to this link's receiver band
    noise_power: float    # W over that band
    gain_const: float
    # Constant part of the squared distance (offset and altitude deltas).
    chi_const: float

    @property
    def name(self) -> str:
        return f"{self.tx}->{self.rx}"


@dataclass(frozen=True)
class Band:
    """One receiver band: the links sharing it and their subset bounds."""

    rx: str
    links: tuple[int, ...]               # indices into OcpProblem.links
    bandwidth: float
    noise_power: float
    subsets: tuple[tuple[int, ...], ...]  # link-index subsets with rate bounds


@dataclass(frozen=True)
class BoundaryData:
    """Per-node boundary values resolved against the solve window."""

    s0: float
    sT_ub: float
    q0: float | None = None
    qT: float | None = None
    v0: float | None = None
    vT: float | None = None


@dataclass(frozen=True)
class OcpProblem:
    cfg: ScenarioConfig
    options: OcpOptions
    t0: float
    horizon: float                      # terminal time (absolute)
    h_eff: float
    links: tuple[Link, ...]
    bands: tuple[Band, ...]
    boundary: tuple[tuple[str, "BoundaryData"], ...]
    # Frozen longitudinal profiles for fixed-trajectory mode, as
    # (node_id, position_intercept, signed_speed); q(t) = icpt + slope*t.
    frozen_profiles: tuple[tuple[str, float, float], ...] = ()

    def boundary_for(self, node_id: str) -> BoundaryData:
        for nid, b in self.boundary:
            if nid == node_id:
                return b
        raise KeyError(node_id)

    def aerial_ids(self) -> list[str]:
        if self.options.fixed_trajectory:
            return []
        return [n.id for n in self.cfg.nodes if n.is_aerial]

    def frozen_profile(self, node_id: str) -> tuple[float, float]:
        for nid, icpt, slope in self.frozen_profiles:
            if nid == node_id:
                return icpt, slope
        raise KeyError(node_id)


def enumerate_mac_subsets(transmitters) -> list[tuple]:
    """All nonempty transmitter subsets, ordered by size then lexicographic."""
    items = sorted(transmitters)
    if len(items) > MAX_BAND_USERS:
        raise ValueError(
            f"{len(items)} transmitters on one band exceeds the "
            f"{MAX_BAND_USERS}-user enumeration cap")
    out = []
    for size in range(1, len(items) + 1):
        out.extend(combinations(items, size))
    return out


def _chain_links(cfg: ScenarioConfig) -> list[tuple[str, str]]:
    """Consecutive-node links in declared node order."""
    ids = [n.id for n in cfg.nodes]
    return [(ids[i], ids[i + 1]) for i in range(len(ids) - 1)]


def build_ocp(cfg: ScenarioConfig, options: OcpOptions | None = None,
              t0: float = 0.0, state_override: dict | None = None,
              horizon: float | None = None) -> OcpProblem:
    """Assemble the problem for a validated scenario.

    ``state_override`` replaces boundary data per node id with measured
    values when replanning mid-flight, e.g.
    ``{"uav": {"s0": ..., "q0": ..., "v0": ...}}``; the keys ``qT``/``vT``
    may be set to None to free a terminal condition.  ``horizon`` replaces
    the scenario terminal time (used by the free-terminal-time fallback
    once the nominal deadline has passed).
    """
    options = options or OcpOptions()
    violations = validate_scenario(cfg)
    if violations:
        raise ValueError("scenario invalid: " + "; ".join(map(str, violations)))
    if options.objective not in ("energy", "throughput"):
        raise ValueError(f"unknown objective {options.objective!r}")
    t_end = cfg.horizon if horizon is None else float(horizon)
    if not t0 < t_end:
        raise ValueError(f"solve window [{t0}, {t_end}] is empty")
    if options.single_hop_chain and options.min_rate < 0:
        raise ValueError("min_rate must be non-negative")

    mask = _chain_links(cfg) if options.single_hop_chain else list(cfg.link_mask)

    # Band layout: orthogonal equal sub-bands for receivers listed under
    # split_bandwidth, one shared band otherwise.  Noise power scales with
    # sub-band width relative to the reference bandwidth.
    links: list[Link] = []
    band_members: dict[str, list[int]] = {}
    for tx, rx in mask:
        band_members.setdefault(rx, [])
    for rx, members in band_members.items():
        incoming = [(tx, r) for tx, r in mask if r == rx]
        if rx in cfg.comm.split_bandwidth and len(incoming) > 0:
            sub_b = cfg.comm.bandwidth / len(incoming)
        else:
            sub_b = None
        for tx, _ in incoming:
            tx_node, rx_node = cfg.node(tx), cfg.node(rx)
            chi_const = ((tx_node.lateral_offset - rx_node.lateral_offset) ** 2
                         + (tx_node.altitude - rx_node.altitude) ** 2)
            bw = sub_b if sub_b is not None else cfg.comm.bandwidth
            links.append(Link(
                tx=tx, rx=rx, bandwidth=bw,
                noise_power=cfg.comm.noise_power * bw / cfg.comm.bandwidth,
                gain_const=cfg.comm.antenna_gain,
                chi_const=chi_const,
            ))
            members.append(len(links) - 1)

    bands: list[Band] = []
    for rx, members in band_members.items():
        if rx in cfg.comm.split_bandwidth:
            # Orthogonal sub-channels: one single-user bound per link.
            for li in members:
                bands.append(Band(rx=rx, links=(li,),
                                  bandwidth=links[li].bandwidth,
                                  noise_power=links[li].noise_power,
                                  subsets=((li,),)))
        else:
            subsets = tuple(enumerate_mac_subsets(members))
            if options.single_hop_chain:
                subsets = tuple(s for s in subsets if len(s) == 1)
            bands.append(Band(rx=rx, links=tuple(members),
                              bandwidth=cfg.comm.bandwidth,
                              noise_power=cfg.comm.noise_power,
                              subsets=subsets))

    h_eff = effective_gain(cfg.channel)

    override = state_override or {}
    boundary = []
    frozen = []
    for n in cfg.nodes:
        ov = override.get(n.id, {})
        s0 = float(ov.get("s0", n.data_init))
        sT_ub = min(n.memory, n.data_final)
        b = BoundaryData(s0=s0, sT_ub=sT_ub)
        if n.is_aerial:
            v_avg = n.trip_length / cfg.horizon
            if options.fixed_trajectory:
                # Constant-speed reference profile over the full horizon.
                slope = n.direction * v_avg
                frozen.append((n.id, n.q_init - slope * 0.0, slope))
            else:
                q0 = float(ov.get("q0", n.q_init if t0 == 0.0
                                   else n.q_init + n.direction * v_avg * t0))
                v0 = ov.get("v0", n.v_init)
                qT = ov.get("qT", n.q_final)
                vT = ov.get("vT", n.v_final)
                b = replace(b, q0=q0,
                            qT=None if qT is None else float(qT),
                            v0=None if v0 is None else float(v0),
                            vT=None if vT is None else float(vT))
        boundary.append((n.id, b))

    problem = OcpProblem(
        cfg=cfg, options=options, t0=t0, horizon=t_end, h_eff=h_eff,
        links=tuple(links), bands=tuple(bands), boundary=tuple(boundary),
        frozen_profiles=tuple(frozen),
    )
    if options.sic_pruning:
        problem = prune_sic(problem, cfg)
    return problem


def _frozen_chi(problem: OcpProblem, link: Link, times: np.ndarray) -> np.ndarray:
    """Squared distances along frozen/static node profiles."""
    def q_of(node_id):
        node = problem.cfg.node(node_id)
        if not node.is_aerial:
            return np.full_like(times, node.q_init)
        icpt, slope = problem.frozen_profile(node_id)
        return icpt + slope * times

    dq = q_of(link.rx) - q_of(link.tx)
    return dq * dq + link.chi_const


def prune_sic(problem: OcpProblem, cfg: ScenarioConfig) -> OcpProblem:
    """Drop the nearer user's single-user bound on two-user fixed bands.

    At a sum-power optimum the nearer transmitter is decoded first, so its
    single-user bound is slack everywhere; removing it cannot change the
    solution.  No-op unless the distance ordering is strict over the whole
    window, and on bands that are not exactly two users.
    """
    if not problem.options.fixed_trajectory:
        return problem
    times = np.linspace(problem.t0, problem.horizon, 1001)
    new_bands = []
    changed = False
    for band in problem.bands:
        if len(band.links) != 2:
            new_bands.append(band)
            continue
        la, lb = band.links
        chi_a = _frozen_chi(problem, problem.links[la], times)
        chi_b = _frozen_chi(problem, problem.links[lb], times)
        if np.all(chi_a < chi_b):
            nearer = la
        elif np.all(chi_b < chi_a):
            nearer = lb
        else:
            new_bands.append(band)
            continue
        subsets = tuple(s for s in band.subsets if s != (nearer,))
        new_bands.append(replace(band, subsets=subsets))
        changed = True
    if not changed:
        return problem
    return replace(problem, bands=tuple(new_bands))


def dump_problem(problem: OcpProblem) -> str:
    """Human-readable constraint listing for debugging."""
    lines = []
    opts = problem.options
    lines.append(f"window [{problem.t0:g}, {problem.horizon:g}] s, "
                 f"objective={opts.objective}, margin gain={problem.h_eff:.6g}")
    flags = [f for f in OcpOptions.FLAGS if getattr(opts, f)]
    if flags:
        lines.append("active options: " + ", ".join(flags))
    for band in problem.bands:
        for subset in band.subsets:
            names = ", ".join(problem.links[i].tx for i in subset)
            lines.append(
                f"rate-region band={band.rx} users={{{names}}}: "
                f"sum(r) - B*log2(1 + sum(g*p)/noise) <= 0  [per grid point]")
    for link in problem.links:
        if opts.fixed_trajectory:
            lines.append(f"distance {link.name}: chi pinned to frozen profile")
        elif opts.distance_relaxation:
            lines.append(f"distance {link.name}: |X|^2 - chi <= 0  [relaxed]")
        else:
            lines.append(f"distance {link.name}: chi - |X|^2 = 0")
    for n in problem.cfg.nodes:
        lines.append(f"buffer dynamics {n.id}: ds/dt = inflow - outflow")
    for nid in problem.aerial_ids():
        lines.append(f"kinematics {nid}: dq/dt = dir*v + wind, dv/dt = a")
        if opts.convex_cost_substitution:
            node = problem.cfg.node(nid)
            if math.isfinite(node.thrust_bounds[1]):
                lines.append(f"thrust ceiling {nid}: D(v) + m*a <= F_max")
            lines.append(f"cost {nid}: integral v*D(v) + kinetic increment")
        else:
            lines.append(f"force balance {nid}: F - D(v) - m*a = 0")
    for nid, b in problem.boundary:
        parts = [f"s(0)={b.s0:g}", f"s(T)<={b.sT_ub:g}"]
        if b.q0 is not None:
            parts += [f"q(0)={b.q0:g}", f"q(T)={b.qT:g}"]
        if b.v0 is not None:
            parts.append(f"v(0)={b.v0:g}")
        if b.vT is not None:
            parts.append(f"v(T)={b.vT:g}")
        lines.append(f"boundary {nid}: " + ", ".join(parts))
    if opts.free_terminal_time:
        lines.append(f"free terminal time: cost += {opts.overtime_weight:g} "
                     "* horizon stretch")
    return "\n".join(lines) + "\n"
