"""Simulation quality metrics: solver diagnostics, full-space gradient
norms, per-group angular momentum, accumulated displacement.

Per-frame metrics are pure functions of (frames, scene): re-running them
offline on exported frames reproduces the live records exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .frames import Frame
from .fullspace import FullSpaceModel, full_gradient
from .mesh import flatten_positions


@dataclass
class MetricsRecord:
    """Per-step solver series plus per-frame physical metrics."""

    dt: float
    # Per step, one entry per SQP iteration.
    newton_decrements: list[list[float]] = field(default_factory=list)
    constraint_inf: list[list[float]] = field(default_factory=list)
    alphas: list[list[float]] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    # Per frame.
    full_gradient_norm: list[float] = field(default_factory=list)
    angular_momentum: dict[str, list[NDArray[np.float64]]] = field(
        default_factory=dict)
    accumulated_displacement: list[float] = field(default_factory=list)
    error: str | None = None

    def validate(self, num_frames: int) -> None:
        series = [self.accumulated_displacement]
        series += list(self.angular_momentum.values())
        if self.full_gradient_norm:  # optional, skipped when not recorded
            series.append(self.full_gradient_norm)
        for s in series:
            if len(s) != num_frames:
                raise ValueError("metric series length does not match frames")
            if not np.all(np.isfinite(np.asarray(s, dtype=np.float64))):
                raise ValueError("non-finite metric value")

    def record_step(self, diagnostics) -> None:
        self.newton_decrements.append(
            [d.newton_decrement for d in diagnostics])
        self.constraint_inf.append([d.constraint_inf for d in diagnostics])
        self.alphas.append([d.alpha for d in diagnostics])
        self.iterations.append(len(diagnostics))


def angular_momentum(x_prev: NDArray[np.float64],
                     x_curr: NDArray[np.float64], dt: float,
                     masses: NDArray[np.float64],
                     group: NDArray[np.int64]) -> NDArray[np.float64]:
    """L = sum_i m_i (x_i - c) x v_i over the group, about its own COM.

    Velocities are finite differences of two consecutive frames; positions
    are |V| x 3 arrays.
    """
    m = masses[group][:, None]
    xg = x_curr[group]
    vg = (x_curr[group] - x_prev[group]) / dt
    com = (m * xg).sum(axis=0) / m.sum()
    return np.sum(m * np.cross(xg - com, vg), axis=0)


def full_space_gradient_norm(model: FullSpaceModel, x: NDArray[np.float64],
                             x_tilde_free: NDArray[np.float64],
                             f_ext_extra: NDArray[np.float64] | None = None) -> float:
    """Inf-norm of the positions-only incremental-potential gradient."""
    g = full_gradient(model, x, x_tilde_free, f_ext_extra)
    return float(np.abs(g).max()) if g.size else 0.0


def compute_frame_metrics(scene, frames: list[Frame], record: MetricsRecord,
                          gradient_norms: bool = True) -> MetricsRecord:
    """Fill the per-frame series of ``record`` from recorded frames.

    ``scene`` supplies geometry, masses, groups, the force script, and the
    coordinate convention used to reconstruct positions from each frame.
    """
    dt = record.dt
    full = scene.full_model() if gradient_norms else None
    masses = scene.ops.M_w.diagonal()
    groups = {name: scene.group_indices(name) for name in scene.config.groups}
    record.full_gradient_norm = []
    record.angular_momentum = {name: [] for name in groups}
    record.accumulated_displacement = []

    rest = scene.mesh.rest_positions
    x_hist = [rest, rest]  # two virtual pre-simulation frames at rest
    accumulated = 0.0
    for fr in frames:
        x = scene.positions_from_frame(fr)
        x_prev, x_prev2 = x_hist[-1], x_hist[-2]
        if gradient_norms:
            x_tilde = x_prev + (x_prev - x_prev2)  # x_prev + dt * v_prev
            extra = scene.nodal_pull_force(fr.time - dt)
            record.full_gradient_norm.append(full_space_gradient_norm(
                full, flatten_positions(x),
                flatten_positions(x_tilde)[full.free_dofs], extra))
        for name, idx in groups.items():
            record.angular_momentum[name].append(
                angular_momentum(x_prev, x, dt, masses, idx))
        accumulated += float(np.linalg.norm(x - x_prev, axis=1).sum())
        record.accumulated_displacement.append(accumulated)
        x_hist = [x_prev, x]
    record.validate(len(frames))
    return record


def write_metrics_csv(record: MetricsRecord, path: str | Path) -> None:
    """One row per frame; solver series summarized by their last iterate."""
    groups = sorted(record.angular_momentum)
    header = ["frame", "time", "iterations", "newton_decrement_last",
              "constraint_inf_last", "alpha_last", "full_gradient_norm",
              "accumulated_displacement"]
    for g in groups:
        header += [f"L_{g}_{ax}" for ax in "xyz"]
    n = len(record.full_gradient_norm) or len(record.accumulated_displacement)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(n):
            row = [i + 1, (i + 1) * record.dt]
            if i < len(record.iterations):
                row += [record.iterations[i],
                        record.newton_decrements[i][-1],
                        record.constraint_inf[i][-1],
                        record.alphas[i][-1]]
            else:
                row += ["", "", "", ""]
            row.append(record.full_gradient_norm[i]
                       if record.full_gradient_norm else "")
            row.append(record.accumulated_displacement[i])
            for g in groups:
                row += list(record.angular_momentum[g][i])
            writer.writerow(row)
