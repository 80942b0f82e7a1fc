"""Per-iteration latency of repeated reconstructions of one frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import build_system
from .reconstruction import ReconstructionContext, reconstruct

__all__ = ["BUDGET_S", "BenchResult", "bench"]

# real-time budget for one iteration on a ~400-node mesh
BUDGET_S = 0.1


@dataclass(eq=False)
class BenchResult:
    iterations: list
    times: np.ndarray
    statuses: list
    budget: float = BUDGET_S

    @property
    def deterministic(self) -> bool:
        return len(set(self.iterations)) == 1 and len(set(self.statuses)) == 1

    @property
    def mean(self) -> float:
        return float(np.mean(self.times))

    def percentile(self, q) -> float:
        return float(np.percentile(self.times, q))

    @property
    def within_budget(self) -> bool:
        return self.mean <= self.budget

    def to_text(self) -> str:
        return "\n".join([
            f"frames {len(self.iterations)}",
            "iterations_per_frame " + " ".join(str(n) for n in self.iterations),
            f"iterations_total {self.times.size}",
            f"deterministic {int(self.deterministic)}",
            f"mean_s {self.mean:.6e}",
            f"p50_s {self.percentile(50):.6e}",
            f"p95_s {self.percentile(95):.6e}",
            f"max_s {float(self.times.max()):.6e}",
            f"budget_s {self.budget:.6e}",
            f"within_budget {int(self.within_budget)}",
        ]) + "\n"


def bench(mesh, measurements, config, frames: int = 10, budget: float = BUDGET_S) -> BenchResult:
    """Reconstruct the same frame `frames` times from a cold start.

    The stiffness factorisation and the per-frame context are built once,
    as a real-time loop would; only the iterations are timed.
    """
    if frames < 1:
        raise ValueError("frames must be at least 1")
    system = build_system(mesh)
    ctx = ReconstructionContext.build(mesh, measurements, config, system)
    iterations, statuses, times = [], [], []
    for _ in range(frames):
        _, history, _ = reconstruct(mesh, measurements, config, ctx=ctx, derive=False)
        iterations.append(history.iterations)
        statuses.append(history.status)
        times.extend(history.times)
    return BenchResult(iterations, np.asarray(times), statuses, budget)
