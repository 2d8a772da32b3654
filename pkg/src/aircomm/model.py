"""Scenario schema: nodes, channel, physics and simulation parameters.

All quantities are SI scalars: positions in meters, speeds in m/s, thrust
in newtons, powers in watts, bandwidth in Hz, data in bits, rates in
bit/s, energies in joules.  Rate expressions use base-2 logarithms.
Unbounded memory or terminal-data requirements are written as the string
"inf" in scenario files and held as ``math.inf`` internally.
"""

import json
import math
from dataclasses import dataclass, replace

__all__ = [
    "NodeSpec",
    "CommParams",
    "ChannelSpec",
    "SimParams",
    "PropulsionCoeffs",
    "ScenarioConfig",
    "Violation",
    "SchemaError",
    "load_scenario",
    "loads_scenario",
    "save_scenario",
    "scenario_to_dict",
    "validate_scenario",
]

# Default constants shared by every bundled scenario.
DEFAULT_BANDWIDTH = 1e5          # Hz
DEFAULT_NOISE_POWER = 1e-10      # W, referenced to DEFAULT_BANDWIDTH
DEFAULT_MAX_POWER = 100.0        # W
DEFAULT_PATH_LOSS_EXP = 1.5      # applies to the squared distance
DEFAULT_HORIZON = 1200.0         # s
DEFAULT_SPEED_BOUNDS = (12.0, 28.0)   # m/s, aerial nodes
DEFAULT_MASS = 3.0               # kg
DEFAULT_MEMORY = 8e9             # bits (1 GB)
DEFAULT_CD1 = 9.26e-4            # kg/m
DEFAULT_CD2 = 2250.0             # kg m^3 / s^4

NODE_KINDS = ("aerial", "ground", "access_point")


class SchemaError(ValueError):
    """Raised for malformed or unknown scenario-file content."""


@dataclass(frozen=True)
class PropulsionCoeffs:
    """Drag model D(v) = cd1*v^2 + cd2/v^2, valid on the speed interval."""

    cd1: float = DEFAULT_CD1
    cd2: float = DEFAULT_CD2


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: str
    altitude: float = 0.0
    lateral_offset: float = 0.0
    q_init: float = 0.0
    q_final: float = 0.0
    v_init: float | None = None
    v_final: float | None = None
    speed_bounds: tuple[float, float] = (0.0, 0.0)
    thrust_bounds: tuple[float, float] = (-math.inf, math.inf)
    mass: float = DEFAULT_MASS
    memory: float = DEFAULT_MEMORY
    data_init: float = 0.0
    data_final: float = math.inf

    @property
    def direction(self) -> int:
        """Travel direction along the longitudinal axis (+1 or -1)."""
        return -1 if self.q_final < self.q_init else 1

    @property
    def is_aerial(self) -> bool:
        return self.kind == "aerial"

    @property
    def trip_length(self) -> float:
        return abs(self.q_final - self.q_init)


@dataclass(frozen=True)
class CommParams:
    bandwidth: float = DEFAULT_BANDWIDTH
    noise_power: float = DEFAULT_NOISE_POWER
    antenna_gain: float = 1.0
    path_loss_exponent: float = DEFAULT_PATH_LOSS_EXP
    max_power: float = DEFAULT_MAX_POWER
    # Receivers whose incoming links use equal orthogonal sub-bands instead
    # of a shared band.  Noise power scales proportionally with sub-band
    # width (noise_power is referenced to `bandwidth`).
    split_bandwidth: tuple[str, ...] = ()


@dataclass(frozen=True)
class ChannelSpec:
    mode: str = "awgn"               # "awgn" | "slow_fading"
    rice_k: float = 10.0             # LoS-to-scatter power ratio
    outage: float = 0.01             # per-codeword outage budget
    packet_interval: float = 1.0     # s


@dataclass(frozen=True)
class SimParams:
    control_interval: float = 10.0   # s between replans
    wind_speed: float = 0.0          # m/s added to ground speed
    seed: int = 0
    wind_filter_window: int = 3      # replan intervals averaged


@dataclass(frozen=True)
class ScenarioConfig:
    nodes: tuple[NodeSpec, ...]
    comm: CommParams = CommParams()
    channel: ChannelSpec = ChannelSpec()
    link_mask: tuple[tuple[str, str], ...] = ()
    horizon: float = DEFAULT_HORIZON
    physics: tuple[tuple[str, PropulsionCoeffs], ...] = ()
    sim: SimParams = SimParams()

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def coeffs(self, node_id: str) -> PropulsionCoeffs:
        for nid, c in self.physics:
            if nid == node_id:
                return c
        return PropulsionCoeffs()

    def receivers(self) -> list[str]:
        seen = []
        for _, rx in self.link_mask:
            if rx not in seen:
                seen.append(rx)
        return seen

    def links_into(self, node_id: str) -> list[tuple[str, str]]:
        return [lk for lk in self.link_mask if lk[1] == node_id]

    def with_updates(self, **kwargs) -> "ScenarioConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class Violation:
    node_id: str | None
    rule: str
    message: str

    def __str__(self):
        where = self.node_id or "<scenario>"
        return f"{where}: {self.rule}: {self.message}"


# ---------------------------------------------------------------------------
# serialization

def _num(value, key):
    """Parse a numeric field; the strings 'inf'/'-inf' mark unbounded values."""
    if isinstance(value, str):
        if value == "inf":
            return math.inf
        if value == "-inf":
            return -math.inf
        raise SchemaError(f"{key}: expected number or 'inf', got {value!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{key}: expected number, got {type(value).__name__}")
    return float(value)


def _pair(value, key):
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise SchemaError(f"{key}: expected a [low, high] pair")
    return (_num(value[0], key), _num(value[1], key))


def _check_keys(obj, allowed, where):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise SchemaError(f"{where}: unknown keys {sorted(unknown)}")


_NODE_KEYS = (
    "id", "kind", "altitude", "lateral_offset", "q_init", "q_final",
    "v_init", "v_final", "speed_bounds", "thrust_bounds", "mass",
    "memory", "data_init", "data_final",
)


def _parse_node(obj) -> NodeSpec:
    if not isinstance(obj, dict):
        raise SchemaError("node entries must be objects")
    _check_keys(obj, _NODE_KEYS, f"node {obj.get('id', '?')}")
    if "id" not in obj or not isinstance(obj["id"], str):
        raise SchemaError("every node needs a string 'id'")
    kind = obj.get("kind", "ground")
    if kind not in NODE_KINDS:
        raise SchemaError(f"node {obj['id']}: unknown kind {kind!r}")
    fields = {"id": obj["id"], "kind": kind}
    for key in ("altitude", "lateral_offset", "q_init", "q_final", "mass",
                "memory", "data_init", "data_final"):
        if key in obj:
            fields[key] = _num(obj[key], key)
    for key in ("v_init", "v_final"):
        if key in obj and obj[key] is not None:
            fields[key] = _num(obj[key], key)
    if "speed_bounds" in obj:
        fields["speed_bounds"] = _pair(obj["speed_bounds"], "speed_bounds")
    elif kind == "aerial":
        fields["speed_bounds"] = DEFAULT_SPEED_BOUNDS
    if "thrust_bounds" in obj:
        fields["thrust_bounds"] = _pair(obj["thrust_bounds"], "thrust_bounds")
    return NodeSpec(**fields)


_TOP_KEYS = ("nodes", "comm", "channel", "link_mask", "horizon", "physics", "sim")
_COMM_KEYS = ("bandwidth", "noise_power", "antenna_gain", "path_loss_exponent",
              "max_power", "split_bandwidth")
_CHANNEL_KEYS = ("mode", "rice_k", "outage", "packet_interval")
_SIM_KEYS = ("control_interval", "wind_speed", "seed", "wind_filter_window")


def loads_scenario(text: str) -> ScenarioConfig:
    """Parse a scenario from JSON text, applying defaults."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError("top level must be an object")
    _check_keys(raw, _TOP_KEYS, "scenario")
    if "nodes" not in raw or not isinstance(raw["nodes"], list):
        raise SchemaError("scenario needs a 'nodes' list")

    nodes = tuple(_parse_node(n) for n in raw["nodes"])
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise SchemaError(f"duplicate node ids: {dup}")

    comm_raw = raw.get("comm", {})
    _check_keys(comm_raw, _COMM_KEYS, "comm")
    split = comm_raw.get("split_bandwidth", [])
    if not isinstance(split, list) or not all(isinstance(s, str) for s in split):
        raise SchemaError("comm.split_bandwidth must be a list of node ids")
    comm = CommParams(
        bandwidth=_num(comm_raw.get("bandwidth", DEFAULT_BANDWIDTH), "bandwidth"),
        noise_power=_num(comm_raw.get("noise_power", DEFAULT_NOISE_POWER), "noise_power"),
        antenna_gain=_num(comm_raw.get("antenna_gain", 1.0), "antenna_gain"),
        path_loss_exponent=_num(
            comm_raw.get("path_loss_exponent", DEFAULT_PATH_LOSS_EXP),
            "path_loss_exponent"),
        max_power=_num(comm_raw.get("max_power", DEFAULT_MAX_POWER), "max_power"),
        split_bandwidth=tuple(split),
    )

    ch_raw = raw.get("channel", {})
    _check_keys(ch_raw, _CHANNEL_KEYS, "channel")
    mode = ch_raw.get("mode", "awgn")
    if mode not in ("awgn", "slow_fading"):
        raise SchemaError(f"channel.mode must be awgn or slow_fading, got {mode!r}")
    channel = ChannelSpec(
        mode=mode,
        rice_k=_num(ch_raw.get("rice_k", 10.0), "rice_k"),
        outage=_num(ch_raw.get("outage", 0.01), "outage"),
        packet_interval=_num(ch_raw.get("packet_interval", 1.0), "packet_interval"),
    )

    mask_raw = raw.get("link_mask", [])
    if not isinstance(mask_raw, list):
        raise SchemaError("link_mask must be a list of [from, to] pairs")
    link_mask = []
    for entry in mask_raw:
        if (not isinstance(entry, (list, tuple)) or len(entry) != 2
                or not all(isinstance(e, str) for e in entry)):
            raise SchemaError(f"link_mask entry {entry!r} is not a [from, to] pair")
        link_mask.append((entry[0], entry[1]))

    phys_raw = raw.get("physics", {})
    if not isinstance(phys_raw, dict):
        raise SchemaError("physics must map node ids to drag coefficients")
    physics = []
    for nid, coeffs in phys_raw.items():
        _check_keys(coeffs, ("cd1", "cd2"), f"physics.{nid}")
        physics.append((nid, PropulsionCoeffs(
            cd1=_num(coeffs.get("cd1", DEFAULT_CD1), "cd1"),
            cd2=_num(coeffs.get("cd2", DEFAULT_CD2), "cd2"))))

    sim_raw = raw.get("sim", {})
    _check_keys(sim_raw, _SIM_KEYS, "sim")
    sim = SimParams(
        control_interval=_num(sim_raw.get("control_interval", 10.0), "control_interval"),
        wind_speed=_num(sim_raw.get("wind_speed", 0.0), "wind_speed"),
        seed=int(sim_raw.get("seed", 0)),
        wind_filter_window=int(sim_raw.get("wind_filter_window", 3)),
    )

    return ScenarioConfig(
        nodes=nodes,
        comm=comm,
        channel=channel,
        link_mask=tuple(link_mask),
        horizon=_num(raw.get("horizon", DEFAULT_HORIZON), "horizon"),
        physics=tuple(physics),
        sim=sim,
    )


def load_scenario(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return loads_scenario(fh.read())


def _enc(value):
    if value == math.inf:
        return "inf"
    if value == -math.inf:
        return "-inf"
    return value


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    """Full resolved configuration as a JSON-serializable dict."""
    nodes = []
    for n in cfg.nodes:
        entry = {
            "id": n.id, "kind": n.kind, "altitude": n.altitude,
            "lateral_offset": n.lateral_offset,
            "q_init": n.q_init, "q_final": n.q_final,
            "speed_bounds": [n.speed_bounds[0], n.speed_bounds[1]],
            "thrust_bounds": [_enc(n.thrust_bounds[0]), _enc(n.thrust_bounds[1])],
            "mass": n.mass, "memory": _enc(n.memory),
            "data_init": n.data_init, "data_final": _enc(n.data_final),
        }
        if n.v_init is not None:
            entry["v_init"] = n.v_init
        if n.v_final is not None:
            entry["v_final"] = n.v_final
        nodes.append(entry)
    return {
        "nodes": nodes,
        "comm": {
            "bandwidth": cfg.comm.bandwidth,
            "noise_power": cfg.comm.noise_power,
            "antenna_gain": cfg.comm.antenna_gain,
            "path_loss_exponent": cfg.comm.path_loss_exponent,
            "max_power": cfg.comm.max_power,
            "split_bandwidth": list(cfg.comm.split_bandwidth),
        },
        "channel": {
            "mode": cfg.channel.mode,
            "rice_k": cfg.channel.rice_k,
            "outage": cfg.channel.outage,
            "packet_interval": cfg.channel.packet_interval,
        },
        "link_mask": [[a, b] for a, b in cfg.link_mask],
        "horizon": cfg.horizon,
        "physics": {nid: {"cd1": c.cd1, "cd2": c.cd2} for nid, c in cfg.physics},
        "sim": {
            "control_interval": cfg.sim.control_interval,
            "wind_speed": cfg.sim.wind_speed,
            "seed": cfg.sim.seed,
            "wind_filter_window": cfg.sim.wind_filter_window,
        },
    }


def save_scenario(cfg: ScenarioConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(cfg), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# validation

def validate_scenario(cfg: ScenarioConfig) -> list[Violation]:
    """Check all structural and feasibility invariants.

    Returns an empty list for a usable scenario; violations are data, not
    exceptions.
    """
    out = []
    ids = [n.id for n in cfg.nodes]
    if len(set(ids)) != len(ids):
        out.append(Violation(None, "unique-ids", "node ids must be unique"))

    if not cfg.horizon > 0:
        out.append(Violation(None, "horizon-positive", f"horizon {cfg.horizon} <= 0"))

    c = cfg.comm
    if not c.bandwidth > 0:
        out.append(Violation(None, "bandwidth-positive", f"B={c.bandwidth}"))
    if not c.noise_power > 0:
        out.append(Violation(None, "noise-positive", f"noise={c.noise_power}"))
    if not c.path_loss_exponent > 1:
        out.append(Violation(None, "path-loss-exponent",
                             f"alpha={c.path_loss_exponent} must exceed 1"))
    if not c.max_power > 0:
        out.append(Violation(None, "max-power-positive", f"P_max={c.max_power}"))
    if not c.antenna_gain > 0:
        out.append(Violation(None, "antenna-gain-positive", f"G={c.antenna_gain}"))
    for rid in c.split_bandwidth:
        if rid not in ids:
            out.append(Violation(None, "split-band-node", f"unknown receiver {rid}"))

    ch = cfg.channel
    if ch.rice_k < 0:
        out.append(Violation(None, "rice-k-nonneg", f"rice_k={ch.rice_k}"))
    if not 0 < ch.outage < 1:
        out.append(Violation(None, "outage-range", f"outage={ch.outage}"))
    if not ch.packet_interval > 0:
        out.append(Violation(None, "packet-interval-positive",
                             f"t_p={ch.packet_interval}"))

    sim = cfg.sim
    if not sim.control_interval > 0:
        out.append(Violation(None, "control-interval-positive",
                             f"t_c={sim.control_interval}"))
    else:
        ratio = cfg.horizon / sim.control_interval
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            out.append(Violation(None, "control-interval-divides-horizon",
                                 f"t_c={sim.control_interval} does not divide "
                                 f"T={cfg.horizon}"))
        pratio = sim.control_interval / ch.packet_interval
        if ch.packet_interval > 0 and abs(pratio - round(pratio)) > 1e-9 * max(1.0, pratio):
            out.append(Violation(None, "packet-interval-divides-control",
                                 f"t_p={ch.packet_interval} does not divide "
                                 f"t_c={sim.control_interval}"))

    for a, b in cfg.link_mask:
        if a == b:
            out.append(Violation(a, "no-self-link", "node linked to itself"))
        for end in (a, b):
            if end not in ids:
                out.append(Violation(end, "link-unknown-node",
                                     f"link ({a}->{b}) references unknown node"))

    for n in cfg.nodes:
        lo, hi = n.speed_bounds
        if not 0 <= lo <= hi:
            out.append(Violation(n.id, "speed-bounds-order",
                                 f"need 0 <= {lo} <= {hi}"))
        if n.thrust_bounds[0] > n.thrust_bounds[1]:
            out.append(Violation(n.id, "thrust-bounds-order",
                                 f"{n.thrust_bounds} out of order"))
        if not 0 <= n.data_init <= n.memory:
            out.append(Violation(n.id, "data-within-memory",
                                 f"data_init={n.data_init} outside [0, {n.memory}]"))
        if n.data_final < 0:
            out.append(Violation(n.id, "data-final-nonneg",
                                 f"data_final={n.data_final}"))
        if n.mass <= 0:
            out.append(Violation(n.id, "mass-positive", f"mass={n.mass}"))
        if n.kind in ("ground", "access_point"):
            if n.q_init != n.q_final:
                out.append(Violation(n.id, "static-node-moves",
                                     "ground node endpoints differ"))
            if n.altitude != 0:
                out.append(Violation(n.id, "ground-node-altitude",
                                     "ground node altitude must be 0"))
            if n.speed_bounds != (0.0, 0.0):
                out.append(Violation(n.id, "static-node-speed",
                                     "ground node speed bounds must be (0, 0)"))
        else:
            trip = n.trip_length
            reach_lo = lo * cfg.horizon
            reach_hi = hi * cfg.horizon
            if not (reach_lo <= trip <= reach_hi):
                out.append(Violation(
                    n.id, "unreachable-endpoint",
                    f"trip {trip} m outside speed envelope "
                    f"[{reach_lo}, {reach_hi}] m"))
            for v_bc in (n.v_init, n.v_final):
                if v_bc is not None and not (lo <= v_bc <= hi):
                    out.append(Violation(n.id, "boundary-speed-in-bounds",
                                         f"boundary speed {v_bc} outside [{lo}, {hi}]"))

    for nid, coeffs in cfg.physics:
        if nid not in ids:
            out.append(Violation(nid, "physics-unknown-node",
                                 "drag coefficients for unknown node"))
        if coeffs.cd1 <= 0 or coeffs.cd2 <= 0:
            out.append(Violation(nid, "drag-coeffs-positive",
                                 f"cd1={coeffs.cd1}, cd2={coeffs.cd2}"))

    return out
