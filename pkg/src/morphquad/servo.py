"""Size actuator: proportional command and first-order, rate-limited plant."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidConfigError
from .geometry import L_MAX, L_MIN


@dataclass(frozen=True)
class ServoParams:
    # sigma and rate_limit are placeholder values, not measured ones
    sigma: float = 0.5
    rate_limit: float = 0.3
    L_min: float = L_MIN
    L_max: float = L_MAX

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidConfigError(f"servo time constant must be positive, got {self.sigma}")
        if not self.rate_limit > 0:
            raise InvalidConfigError(f"servo rate limit must be positive, got {self.rate_limit}")
        if not self.L_min < self.L_max:
            raise InvalidConfigError("L_min must be below L_max")


@dataclass(frozen=True)
class ServoCommand:
    rate: float
    reference_clamped: bool = False


def servo_command(L_ref, L, params: ServoParams = ServoParams()) -> ServoCommand:
    """Rate ``(L_ref - L) / sigma`` limited to ``+-rate_limit``.

    A reference outside the size bounds is clamped and flagged.
    """
    if not (np.isfinite(L_ref) and np.isfinite(L)):
        raise DomainError("servo inputs must be finite")
    clamped = float(np.clip(L_ref, params.L_min, params.L_max))
    rate = (clamped - float(L)) / params.sigma
    rate = float(np.clip(rate, -params.rate_limit, params.rate_limit))
    return ServoCommand(rate, clamped != L_ref)


def servo_step(L, rate, dt, params: ServoParams = ServoParams()) -> float:
    """``clamp(L + rate * dt, L_min, L_max)``."""
    if not dt > 0:
        raise DomainError(f"servo step must be positive, got {dt}")
    return float(np.clip(L + rate * dt, params.L_min, params.L_max))


def servo_advance(L, L_ref, dt, params: ServoParams = ServoParams(), substeps=1) -> float:
    """Advance the closed loop by ``dt`` using ``substeps`` Euler steps."""
    h = dt / substeps
    for _ in range(substeps):
        L = servo_step(L, servo_command(L_ref, L, params).rate, h, params)
    return L
