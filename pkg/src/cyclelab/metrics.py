"""Efficiency (mean queue length) and steadiness (second differences) metrics."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .sim import SpecificationError


def efficiency(queue_trace) -> float:
    """Mean queue length over all lanes and time steps (meters)."""
    q = np.asarray(queue_trace, dtype=float)
    if q.ndim != 2 or q.size == 0:
        raise SpecificationError("queue trace must be a non-empty T x M array")
    return float(q.sum() / (q.shape[0] * q.shape[1]))


def second_differences(duration_matrix) -> np.ndarray:
    d = np.asarray(duration_matrix, dtype=float)
    return d[2:] - 2.0 * d[1:-1] + d[:-2]


def steadiness(duration_matrix) -> float:
    """Sum of |second differences| over phases and periods, divided by total duration.

    ``duration_matrix`` has one row per period (K >= 3) and one column per phase.
    """
    d = np.asarray(duration_matrix, dtype=float)
    if d.ndim == 1:
        d = d[:, None]
    if d.ndim != 2 or d.shape[0] < 3:
        raise SpecificationError("steadiness needs at least three periods")
    total = d.sum()
    if total <= 0:
        raise SpecificationError("total duration must be positive")
    return float(np.abs(second_differences(d)).sum() / total)


def green_time_ratio(duration_matrix, grouping: Mapping[str, Sequence[int]]) -> dict[str, np.ndarray]:
    """Share of each period's cycle given to each group of phases (0-based phase indices)."""
    d = np.asarray(duration_matrix, dtype=float)
    if d.ndim == 1:
        d = d[None]
    cycle = d.sum(axis=1)
    return {label: d[:, list(phases)].sum(axis=1) / cycle for label, phases in grouping.items()}


def direction_groups(spec) -> dict[str, list[int]]:
    """Group phases by the approach axis of their movements: ``NS-SN``, ``WE-EW`` or ``mixed``."""
    groups: dict[str, list[int]] = {}
    mask = spec.phase_mask()
    for p in range(spec.n_phases):
        arms = {spec.movements[i].entry_arm for i in np.flatnonzero(mask[p])}
        if arms <= {"N", "S"}:
            label = "NS-SN"
        elif arms <= {"E", "W"}:
            label = "WE-EW"
        else:
            label = "mixed"
        groups.setdefault(label, []).append(p)
    return groups
