"""GNSS-only baseline: independent single point positioning at each epoch."""

from __future__ import annotations

import math
import time
from typing import Iterable, List, Optional

import numpy as np

from ..geo import ecef_to_lla, elevation_azimuth, ned_rotation
from ..gnss import ClockState, GnssEpoch, spp_solve
from .types import EpochSolution, EstimatorConfig, NavState, SolutionStatus


def run_spp(gnss_stream: Iterable[GnssEpoch], config: Optional[EstimatorConfig] = None) -> List[EpochSolution]:
    """Epoch-by-epoch SPP with the estimator's measurement settings. Each fix
    starts from the previous one; attitude and biases are left undefined."""
    c = config or EstimatorConfig()
    out: List[EpochSolution] = []
    prev = None
    nan3 = np.full(3, np.nan)
    for epoch in gnss_stream:
        usable = GnssEpoch(epoch.timestamp, [o for o in epoch.observations if o.constellation in c.constellations])
        t0 = time.perf_counter()
        sol = spp_solve(usable, prev, c.pr_sigma0, c.rate_sigma0, c.elevation_mask, c.cn0_ref)
        elapsed = time.perf_counter() - t0
        if not sol.available:
            state = NavState(epoch.timestamp, nan3, nan3, np.full((3, 3), np.nan), nan3, nan3,
                             ClockState(math.nan, math.nan))
            out.append(EpochSolution(state, SolutionStatus.UNAVAILABLE, {}, elapsed))
            continue
        prev = sol.position
        R_ne = ned_rotation(ecef_to_lla(sol.position))
        vel = R_ne.T @ sol.velocity if sol.velocity_available else nan3
        state = NavState(epoch.timestamp, nan3, vel, np.full((3, 3), np.nan), nan3, nan3, sol.clock)
        counts = {}
        for o in usable.observations:
            if elevation_azimuth(sol.position, o.sat_pos)[0] >= c.elevation_mask:
                counts[o.constellation] = counts.get(o.constellation, 0) + 1
        out.append(EpochSolution(state, SolutionStatus.VALID, counts, elapsed, None, sol.position.copy()))
    return out
