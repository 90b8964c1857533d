from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional


@dataclass
class FitReport:
    """Outcome of one fit.

    ``log_likelihood_trace`` holds one value per iteration, starting with
    the initial parameters.  For the augmented network it is the negated
    total objective; ``component_traces`` then carries the sequence and
    auxiliary parts separately.
    """

    params: Any
    log_likelihood_trace: list
    iterations: int
    converged: bool
    reason: str
    elapsed: float
    method: str
    options: dict = field(default_factory=dict)
    component_traces: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @property
    def final_log_likelihood(self) -> Optional[float]:
        return self.log_likelihood_trace[-1] if self.log_likelihood_trace else None

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "method": self.method,
            "model": self.params.to_dict(),
            "log_likelihood_trace": list(self.log_likelihood_trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "reason": self.reason,
            "options": self.options,
        }
        if self.component_traces:
            out["component_traces"] = self.component_traces
        if self.metrics:
            out["metrics"] = self.metrics
        if include_timing:
            out["wall_clock_seconds"] = self.elapsed
        return out
