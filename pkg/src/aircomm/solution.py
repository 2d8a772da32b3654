"""Time-gridded solution container with energy accounting."""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Solution"]


@dataclass
class Solution:
    """Trajectories on the solve mesh plus solver diagnostics.

    Link series are keyed "tx->rx"; node series by node id.  All series
    share the ``times`` grid and interpolate linearly between grid points.
    """

    times: np.ndarray
    power: dict[str, np.ndarray]
    rate: dict[str, np.ndarray]
    sq_distance: dict[str, np.ndarray]
    buffer: dict[str, np.ndarray]
    position: dict[str, np.ndarray] = field(default_factory=dict)
    speed: dict[str, np.ndarray] = field(default_factory=dict)
    accel: dict[str, np.ndarray] = field(default_factory=dict)
    thrust: dict[str, np.ndarray] = field(default_factory=dict)
    transmit_energy: dict[str, float] = field(default_factory=dict)
    propulsion_energy: dict[str, float] = field(default_factory=dict)
    objective: float = math.nan
    time_stretch: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def horizon(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def total_transmit_energy(self) -> float:
        return sum(self.transmit_energy.values())

    def total_propulsion_energy(self) -> float:
        return sum(self.propulsion_energy.values())

    def total_energy(self) -> float:
        return self.total_transmit_energy() + self.total_propulsion_energy()

    def at(self, series: dict[str, np.ndarray], key: str, t) -> float:
        """Linear interpolation of one series at time t."""
        return float(np.interp(t, self.times, series[key]))

    def energy_summary(self) -> dict:
        return {
            "transmit_energy_j": dict(self.transmit_energy),
            "propulsion_energy_j": dict(self.propulsion_energy),
            "total_transmit_j": self.total_transmit_energy(),
            "total_propulsion_j": self.total_propulsion_energy(),
            "total_j": self.total_energy(),
            "objective": self.objective,
            "time_stretch": self.time_stretch,
        }

    def column_names(self) -> list[str]:
        cols = ["time_s"]
        cols += [f"power_w[{k}]" for k in sorted(self.power)]
        cols += [f"rate_bps[{k}]" for k in sorted(self.rate)]
        cols += [f"sq_distance_m2[{k}]" for k in sorted(self.sq_distance)]
        cols += [f"buffer_bits[{k}]" for k in sorted(self.buffer)]
        cols += [f"position_m[{k}]" for k in sorted(self.position)]
        cols += [f"speed_mps[{k}]" for k in sorted(self.speed)]
        cols += [f"accel_mps2[{k}]" for k in sorted(self.accel)]
        cols += [f"thrust_n[{k}]" for k in sorted(self.thrust)]
        return cols

    def write_csv(self, path) -> None:
        groups = [self.power, self.rate, self.sq_distance, self.buffer,
                  self.position, self.speed, self.accel, self.thrust]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.column_names())
            for i, t in enumerate(self.times):
                row = [f"{t:.6f}"]
                for series in groups:
                    row += [repr(float(series[k][i])) for k in sorted(series)]
                writer.writerow(row)

    def write_summary(self, path, extra: dict | None = None) -> None:
        payload = self.energy_summary()
        payload["diagnostics"] = {
            k: v for k, v in self.diagnostics.items() if k != "log"
        }
        if extra:
            payload.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, default=float)
            fh.write("\n")
