"""Closed-form throughput model for draft/verify pipelines.

All geometric sums are evaluated term by term, so ``alpha == 1`` needs no
special casing.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")


def _check_gamma(gamma: int) -> None:
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")


def geometric_sum(alpha: float, gamma: int) -> float:
    """sum_{j=0}^{gamma} alpha**j."""
    total, term = 0.0, 1.0
    for _ in range(gamma + 1):
        total += term
        term *= alpha
    return total


def rho_recursion(alpha: float, gamma: int, steps: int) -> list[float]:
    """Verification probability at decoding steps 0..steps-1.

    Starts at ``alpha``; a step verifies either after a fallback step whose
    token the drafter matched, or after a fully accepted batch whose bonus
    token the drafter matched.
    """
    _check_alpha(alpha)
    _check_gamma(gamma)
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    full = alpha ** (gamma + 1)
    rho = alpha
    out = [rho]
    for _ in range(steps - 1):
        rho = rho * full + (1.0 - rho) * alpha
        out.append(rho)
    return out


def rho_time_average(alpha: float, gamma: int, steps: int) -> float:
    """Running mean of the recursion over ``steps`` steps (Cesaro average)."""
    return math.fsum(rho_recursion(alpha, gamma, steps)) / steps


def rho_steady_state(alpha: float, gamma: int) -> float:
    _check_alpha(alpha)
    _check_gamma(gamma)
    if alpha == 0.0:
        return 0.0
    return alpha / (1.0 - alpha ** (gamma + 1) + alpha)


def expected_tokens_per_step(alpha: float, gamma: int, rho: float) -> float:
    _check_alpha(alpha)
    _check_gamma(gamma)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    return (1.0 - rho) + rho * geometric_sum(alpha, gamma)


def pipespec_rate(alpha: float, gamma: int) -> float:
    """Tokens per final-stage step of the asynchronous pipeline in steady state."""
    return expected_tokens_per_step(alpha, gamma, rho_steady_state(alpha, gamma))


def sd_speedup(alpha: float, gamma: int, speed_ratio: float) -> float:
    """Lockstep draft/verify speedup over autoregressive decoding.

    ``speed_ratio`` is how many draft tokens fit in one target-model step.
    """
    _check_alpha(alpha)
    _check_gamma(gamma)
    if not speed_ratio > 0:
        raise ValueError(f"speed_ratio must be > 0, got {speed_ratio}")
    return geometric_sum(alpha, gamma) / (gamma / speed_ratio + 1.0)


def pipespec_ideal(alpha: float, gamma: int) -> float:
    _check_alpha(alpha)
    _check_gamma(gamma)
    return geometric_sum(alpha, gamma)


@dataclass(frozen=True)
class AnalyticInputs:
    alpha: float
    gamma: int
    speed_ratio: float = 1.0

    def __post_init__(self) -> None:
        _check_alpha(self.alpha)
        _check_gamma(self.gamma)
        if not self.speed_ratio > 0:
            raise ValueError(f"speed_ratio must be > 0, got {self.speed_ratio}")


@dataclass(frozen=True)
class AnalyticReport:
    alpha: float
    gamma: int
    speed_ratio: float
    rho_steady: float
    expected_tokens: float
    pipespec_rate: float
    sd_speedup: float
    pipespec_ideal: float

    def as_dict(self) -> dict:
        return asdict(self)


def analyze(inputs: AnalyticInputs) -> AnalyticReport:
    a, g, c = inputs.alpha, inputs.gamma, inputs.speed_ratio
    rho = rho_steady_state(a, g)
    en = expected_tokens_per_step(a, g, rho)
    return AnalyticReport(
        alpha=a,
        gamma=g,
        speed_ratio=c,
        rho_steady=rho,
        expected_tokens=en,
        pipespec_rate=en,
        sd_speedup=sd_speedup(a, g, c),
        pipespec_ideal=pipespec_ideal(a, g),
    )
