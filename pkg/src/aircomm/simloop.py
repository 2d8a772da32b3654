"""Closed-loop receding-horizon simulation with fading, ARQ and wind.

Each control interval replans the remaining window from measured state
(decreasing horizon, fixed terminal time), then plays out the plan packet
by packet: per-packet channel draws, planned-vs-realized received-power
decode checks, 1-bit ACK/NAK accounting with retransmission of anything
undelivered.  Buffers hold integer bits; plans are real-valued and floored
at delivery, so total data is conserved exactly.

When the fixed-terminal-time problem becomes infeasible twice in a row
(typically near the deadline after a run of NAKs), planning switches to a
free terminal time that minimizes energy plus weighted overtime.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import decode_check, link_gain, sample_fading
from .model import ScenarioConfig
from .ocp import OcpOptions, build_ocp
from .solution import Solution
from .solver import SolveOptions, SolveResult, solve
from .transcribe import Mesh, extract_solution, shift_warm_start, transcribe

__all__ = ["PacketRecord", "SimLog", "SimState", "run_closed_loop",
           "nmpc_step", "packet_round", "wind_estimate"]

RATE_EPS = 1e-3   # bit/s below which a planned link is idle for a packet


@dataclass
class PacketRecord:
    index: int              # global packet counter
    time: float             # packet start [s]
    link: str
    planned_rate: float
    planned_power: float
    planned_beta: float
    realized_beta: float
    decoded: bool
    bits_moved: int


@dataclass
class SimState:
    t: float
    buffers: dict[str, int]
    position: dict[str, float]
    speed: dict[str, float]
    wind_estimate: float
    wind_history: list[float] = field(default_factory=list)
    plan: Solution | None = None
    packet_counter: int = 0
    consecutive_failures: int = 0
    variable_horizon: bool = False


@dataclass
class SimLog:
    records: list[PacketRecord]
    replans: list[dict]
    summary: dict

    def write_packets_csv(self, path):
        import csv
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "time_s", "link", "planned_rate_bps",
                        "planned_power_w", "planned_beta_w",
                        "realized_beta_w", "decoded", "bits_moved"])
            for r in self.records:
                w.writerow([r.index, f"{r.time:.3f}", r.link,
                            repr(r.planned_rate), repr(r.planned_power),
                            repr(r.planned_beta), repr(r.realized_beta),
                            int(r.decoded), r.bits_moved])

    def write_summary(self, path, extra=None):
        import json
        payload = dict(self.summary)
        if extra:
            payload.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, default=float)
            fh.write("\n")


def wind_estimate(residuals, window: int) -> float:
    """Moving average of measured ground-speed deviations."""
    if not residuals:
        return 0.0
    recent = residuals[-window:]
    return float(sum(recent) / len(recent))


def _packet_rng(seed: int, link_index: int, packet_index: int):
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed,
                               spawn_key=(link_index, packet_index)))


def _int_floor(x: float) -> int:
    return int(math.floor(x + 1e-9))


class _Loop:
    def __init__(self, cfg: ScenarioConfig, seed: int,
                 solve_options: SolveOptions | None = None,
                 collect_logs: bool = False):
        if cfg.channel.mode != "slow_fading":
            raise ValueError("closed-loop simulation requires slow fading; "
                             "use an open-loop solve for AWGN scenarios")
        self.cfg = cfg
        self.seed = seed
        self.t_c = cfg.sim.control_interval
        self.t_p = cfg.channel.packet_interval
        self.packets_per_step = int(round(self.t_c / self.t_p))
        self.solve_options = solve_options or SolveOptions()
        self.collect_logs = collect_logs
        self.link_index = {f"{a}->{b}": i for i, (a, b) in enumerate(cfg.link_mask)}
        self.records: list[PacketRecord] = []
        self.replans: list[dict] = []
        self.prev_nlp = None
        self.prev_result: SolveResult | None = None
        self.energy_tx = {n.id: 0.0 for n in cfg.nodes}
        self.energy_prop = {n.id: 0.0 for n in cfg.nodes}
        self.initial_bits = {n.id: _int_floor(n.data_init) for n in cfg.nodes}
        self.required_empty = {
            n.id: min(n.memory, n.data_final) for n in cfg.nodes}
        self.residual_at_nominal_T: int | None = None
        self.overtime_weight = 0.0
        self._h_eff = _plan_margin(cfg)

    # -- planning -----------------------------------------------------------

    def _overrides(self, state: SimState, drop_terminal_position: bool):
        ov = {}
        for n in self.cfg.nodes:
            entry = {"s0": float(state.buffers[n.id])}
            if n.is_aerial:
                entry["q0"] = state.position[n.id]
                entry["v0"] = state.speed[n.id]
                if drop_terminal_position:
                    entry["qT"] = None
                    entry["vT"] = None
            ov[n.id] = entry
        return ov

    def replan(self, state: SimState) -> Solution:
        plan, ok = self._attempt(state, variable=state.variable_horizon)
        if not ok:
            state.consecutive_failures += 1
            # retry once from a cold start before declaring the fixed
            # horizon unworkable
            plan_retry, ok2 = self._attempt(state, variable=state.variable_horizon,
                                            cold=True)
            if ok2:
                state.consecutive_failures = 0
                return plan_retry
            state.consecutive_failures += 1
            if not state.variable_horizon:
                state.variable_horizon = True
                plan_vt, ok3 = self._attempt(state, variable=True, cold=True)
                if ok3:
                    state.consecutive_failures = 0
                    return plan_vt
                plan = plan_vt
            raise RuntimeError(
                f"replanning failed at t={state.t:.1f}s even with a free "
                f"terminal time: {self.replans[-1]}")
        state.consecutive_failures = 0
        return plan

    def _attempt(self, state: SimState, variable: bool, cold: bool = False):
        cfg = self.cfg
        t = state.t
        past_deadline = t >= cfg.horizon - 1e-9
        if variable:
            href = max(2.0 * self.t_c, min(4.0 * self.t_c, cfg.horizon - t))
            horizon = t + href if past_deadline else cfg.horizon
            opts = OcpOptions(
                distance_relaxation=True, convex_cost_substitution=False,
                free_terminal_time=True, overtime_weight=self.overtime_weight,
                wind_offset=state.wind_estimate)
        else:
            horizon = cfg.horizon
            opts = OcpOptions(distance_relaxation=True,
                              wind_offset=state.wind_estimate)
        problem = build_ocp(
            cfg, opts, t0=t,
            state_override=self._overrides(state, past_deadline),
            horizon=horizon)
        k = max(1, int(round((horizon - t) / self.t_c)))
        mesh = Mesh.uniform(t, horizon, k)
        nlp = transcribe(problem, mesh)
        sopts = replace(self.solve_options)
        if not cold and self.prev_nlp is not None and not variable:
            x_w, lam_w = shift_warm_start(self.prev_nlp, self.prev_result.x,
                                          self.prev_result.lam, nlp)
            sopts.init_strategy = "warm"
            sopts.warm_x = x_w
            sopts.warm_lam = lam_w
        result = solve(nlp, sopts)
        plan = extract_solution(result.x, nlp)
        boundary_gap = self._boundary_gap(problem, plan)
        self.replans.append({
            "t": t, "status": result.status, "outer": result.outer_iters,
            "inner": result.inner_iters, "objective": result.objective,
            "max_violation": result.max_violation,
            "variable_horizon": variable,
            "time_stretch": plan.time_stretch,
            "boundary_gap": boundary_gap,
        })
        if result.success:
            self.prev_nlp = nlp
            self.prev_result = result
            mean_power = plan.total_energy() / max(
                plan.times[-1] - plan.times[0], 1.0)
            self.overtime_weight = 10.0 * max(mean_power, 1.0)
        return plan, result.success

    def _boundary_gap(self, problem, plan: Solution) -> float:
        """Worst first-grid-point rate-region slack among active links."""
        from .channel import mac_subset_gap
        worst = 0.0
        pmax = self.cfg.comm.max_power
        for band in problem.bands:
            links = [problem.links[i] for i in band.links]
            active = [l for l in links
                      if plan.power[l.name][0] > 1e-3 * pmax]
            if not active:
                continue
            rates = [plan.rate[l.name][0] for l in active]
            powers = [plan.power[l.name][0] for l in active]
            chis = [plan.sq_distance[l.name][0] for l in active]
            gap = mac_subset_gap(
                rates, powers, chis, band.bandwidth, band.noise_power,
                h=problem.h_eff, gain_const=self.cfg.comm.antenna_gain,
                alpha=self.cfg.comm.path_loss_exponent)
            worst = max(worst, abs(float(np.max(np.atleast_1d(gap))))
                        / band.bandwidth)
        return worst

    # -- packet execution ----------------------------------------------------

    def play_packets(self, state: SimState, plan: Solution, duration: float):
        cfg = self.cfg
        n_packets = int(round(duration / self.t_p))
        h_eff = self._h_eff
        for _ in range(n_packets):
            t0 = state.t
            mid = t0 + 0.5 * self.t_p
            by_receiver: dict[str, list] = {}
            for (tx, rx) in cfg.link_mask:
                name = f"{tx}->{rx}"
                r = plan.at(plan.rate, name, mid)
                p = plan.at(plan.power, name, mid)
                if r <= RATE_EPS:
                    continue
                by_receiver.setdefault(rx, []).append((name, tx, r, p))
            for rx, entries in sorted(by_receiver.items()):
                if rx in cfg.comm.split_bandwidth:
                    # orthogonal sub-bands: decode each link in isolation
                    for entry in entries:
                        self._receive(state, plan, rx, [entry], mid, h_eff)
                else:
                    self._receive(state, plan, rx, entries, mid, h_eff)
            state.t = t0 + self.t_p
            state.packet_counter += 1

    def _receive(self, state, plan, rx, entries, mid, h_eff):
        cfg = self.cfg
        alpha = cfg.comm.path_loss_exponent
        g_const = cfg.comm.antenna_gain
        noise = _band_noise(cfg, rx)
        planned, realized, rates, names, txs, powers = [], [], [], [], [], []
        for name, tx, r, p in entries:
            chi = plan.at(plan.sq_distance, name, mid)
            rng = _packet_rng(self.seed, self.link_index[name],
                              state.packet_counter)
            h_tilde = float(sample_fading(cfg.channel.rice_k, rng))
            planned.append(link_gain(chi, h_eff, g_const, alpha) * p)
            realized.append(link_gain(chi, h_tilde, g_const, alpha) * p)
            rates.append(r)
            names.append(name)
            txs.append(tx)
            powers.append(p)
        decoded_set = decode_check(planned, realized, rates, noise)
        for i, name in enumerate(names):
            decoded = i in decoded_set
            bits = 0
            if decoded:
                intended = _int_floor(min(rates[i] * self.t_p,
                                          state.buffers[txs[i]]))
                free = self.required_free(state, rx)
                if intended > free:
                    decoded = False   # receiver overflow counts as a NAK
                else:
                    bits = intended
            if bits:
                state.buffers[txs[i]] -= bits
                state.buffers[rx] += bits
            self.records.append(PacketRecord(
                index=state.packet_counter, time=state.t, link=name,
                planned_rate=rates[i], planned_power=powers[i],
                planned_beta=planned[i], realized_beta=realized[i],
                decoded=decoded, bits_moved=bits))

    def required_free(self, state: SimState, node_id: str) -> float:
        mem = self.cfg.node(node_id).memory
        if math.isinf(mem):
            return math.inf
        return mem - state.buffers[node_id]

    # -- physical propagation -------------------------------------------------

    def advance_vehicle(self, state: SimState, plan: Solution, duration: float):
        cfg = self.cfg
        t0, t1 = state.t, state.t + duration
        grid = np.linspace(t0, t1, 9)
        for n in cfg.nodes:
            if not n.is_aerial:
                continue
            v_cmd = np.interp(grid, plan.times, plan.speed[n.id])
            ground = n.direction * v_cmd + cfg.sim.wind_speed
            dq = float(np.trapezoid(ground, grid))
            state.position[n.id] += dq
            v_end = float(np.interp(t1, plan.times, plan.speed[n.id]))
            # ground-speed deviation from the commanded airspeed reveals wind
            v_avg_cmd = float(np.trapezoid(v_cmd, grid) / duration)
            residual = dq / duration - n.direction * v_avg_cmd
            state.wind_history.append(residual)
            state.speed[n.id] = v_end
            f_cmd = np.interp(grid, plan.times, plan.thrust[n.id])
            self.energy_prop[n.id] += float(np.trapezoid(f_cmd * v_cmd, grid))
        for (tx, rx) in cfg.link_mask:
            name = f"{tx}->{rx}"
            p = np.interp(grid, plan.times, plan.power[name])
            self.energy_tx[tx] += float(np.trapezoid(p, grid))
        state.wind_estimate = wind_estimate(state.wind_history,
                                            cfg.sim.wind_filter_window)

    # -- main loop -------------------------------------------------------------

    def residual_bits(self, state: SimState) -> int:
        total = 0
        for n in self.cfg.nodes:
            need = self.required_empty[n.id]
            if math.isfinite(need):
                total += max(0, state.buffers[n.id] - _int_floor(need))
        return total

    def run(self) -> SimLog:
        cfg = self.cfg
        state = SimState(
            t=0.0,
            buffers=dict(self.initial_bits),
            position={n.id: n.q_init for n in cfg.nodes if n.is_aerial},
            speed={n.id: (n.v_init if n.v_init is not None
                          else n.trip_length / cfg.horizon)
                   for n in cfg.nodes if n.is_aerial},
            wind_estimate=0.0,
        )
        conserved_total = sum(self.initial_bits.values())
        max_time = cfg.horizon * 1.5 + 10 * self.t_c
        while True:
            at_deadline = state.t >= cfg.horizon - 1e-9
            if at_deadline and self.residual_at_nominal_T is None:
                self.residual_at_nominal_T = self.residual_bits(state)
            if at_deadline and self.residual_bits(state) == 0:
                break
            if state.t > max_time:
                break
            if at_deadline and not state.variable_horizon:
                state.variable_horizon = True
            plan = self.replan(state)
            state.plan = plan
            window = min(self.t_c, plan.times[-1] - state.t)
            window = max(window, self.t_p)
            t_before = state.t
            self.play_packets(state, plan, window)
            state.t = t_before
            self.advance_vehicle(state, plan, window)
            state.t = t_before + window
            assert sum(state.buffers.values()) == conserved_total, \
                "bit conservation broken"

        final_t = state.t
        overtime = max(0.0, final_t - cfg.horizon)
        decoded = sum(1 for r in self.records if r.decoded)
        summary = {
            "seed": self.seed,
            "final_time_s": final_t,
            "nominal_horizon_s": cfg.horizon,
            "overtime_s": overtime,
            "residual_at_nominal_T_bits": self.residual_at_nominal_T or 0,
            "residual_final_bits": self.residual_bits(state),
            "delivered_all": self.residual_bits(state) == 0,
            "packets": len(self.records),
            "packets_decoded": decoded,
            "decode_rate": decoded / len(self.records) if self.records else 1.0,
            "transmit_energy_j": dict(self.energy_tx),
            "propulsion_energy_j": dict(self.energy_prop),
            "total_energy_j": (sum(self.energy_tx.values())
                               + sum(self.energy_prop.values())),
            "replans": len(self.replans),
            "final_buffers_bits": dict(state.buffers),
            "wind_estimate_mps": state.wind_estimate,
        }
        return SimLog(records=self.records, replans=self.replans,
                      summary=summary)


def _plan_margin(cfg: ScenarioConfig) -> float:
    from .channel import effective_gain
    return effective_gain(cfg.channel)


def _band_noise(cfg: ScenarioConfig, rx: str) -> float:
    n_in = len(cfg.links_into(rx))
    if rx in cfg.comm.split_bandwidth and n_in:
        return cfg.comm.noise_power / n_in
    return cfg.comm.noise_power


def run_closed_loop(cfg: ScenarioConfig, seed: int | None = None,
                    solve_options: SolveOptions | None = None) -> SimLog:
    """Simulate the scenario under its configured fading and wind."""
    loop = _Loop(cfg, cfg.sim.seed if seed is None else seed, solve_options)
    return loop.run()


def nmpc_step(cfg: ScenarioConfig, state: SimState,
              solve_options: SolveOptions | None = None) -> Solution:
    """One receding-horizon replan from a measured state."""
    loop = _Loop(cfg, cfg.sim.seed, solve_options)
    return loop.replan(state)


def packet_round(cfg: ScenarioConfig, state: SimState, plan: Solution,
                 seed: int | None = None) -> list[PacketRecord]:
    """Play one packet interval of the plan and return its records."""
    loop = _Loop(cfg, cfg.sim.seed if seed is None else seed)
    loop.records = []
    loop.play_packets(state, plan, cfg.channel.packet_interval)
    return loop.records
