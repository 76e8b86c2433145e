"""Differential-privacy noise sampling, budget accounting, and closed-form bounds."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

# Rounding continuous Laplace noise onto the fixed-point grid adds at most
# 0.5 / fixed_point_scale sensitivity slack; reported local epsilons are
# inflated by this factor to absorb it.
ROUNDING_INFLATION = 1.000001

DEGENERATE_SCALE_FLOOR = 1e-9


class BudgetExhaustedError(Exception):
    """Charging another round would exceed the configured privacy cap."""


@dataclass(frozen=True)
class NoiseSpec:
    """Per-count Laplace noise parameters for local statistics."""

    scale_sigma: float
    sensitivity: float = 1.0
    fixed_point_scale: int = 10**6

    @classmethod
    def from_epsilon(cls, epsilon0: float, sensitivity: float = 1.0,
                     fixed_point_scale: int = 10**6) -> "NoiseSpec":
        if epsilon0 <= 0:
            raise ValueError("epsilon0 must be positive")
        return cls(scale_sigma=sensitivity / epsilon0, sensitivity=sensitivity,
                   fixed_point_scale=fixed_point_scale)

    @property
    def local_epsilon(self) -> float:
        """Conservative single-party per-round epsilon, with rounding slack."""
        if self.scale_sigma < DEGENERATE_SCALE_FLOOR:
            return math.inf
        return self.sensitivity / self.scale_sigma * ROUNDING_INFLATION


@dataclass(frozen=True)
class DefenseConfig:
    """Metric-release noise calibrated against attribute inference."""

    epsilon_inf: float
    horizon_T: int
    participant_count_n: int

    @property
    def sigma_def(self) -> float:
        return defense_scale(self.horizon_T, self.epsilon_inf, self.participant_count_n)


def sample_discrete_laplace(scale: float, fixed_point_scale: int,
                            rng: np.random.Generator, size: int | None = None):
    """Laplace(scale) noise rounded onto the fixed-point grid.

    Returns round(eta * fixed_point_scale) as int (or int64 array when size
    is given). Scales below the degenerate floor return exact zeros.
    """
    if scale < 0:
        raise ValueError("scale must be non-negative")
    if scale < DEGENERATE_SCALE_FLOOR:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    eta = rng.laplace(0.0, scale, size=size)
    if size is None:
        return int(round(eta * fixed_point_scale))
    return np.rint(eta * fixed_point_scale).astype(np.int64)


def compose(epsilon0: float, delta0: float, T: int, delta_prime: float) -> tuple[float, float]:
    """Advanced composition over T rounds of an (epsilon0, delta0) mechanism.

    epsilon_T = sqrt(2 T ln(1/delta')) * epsilon0 + T * epsilon0 * (e^epsilon0 - 1)
    delta_T   = T * delta0 + delta'
    """
    if epsilon0 <= 0:
        raise ValueError("epsilon0 must be positive")
    if delta0 < 0:
        raise ValueError("delta0 must be non-negative")
    if not 0 < delta_prime < 1:
        raise ValueError("delta_prime must be in (0, 1)")
    if T < 0:
        raise ValueError("T must be non-negative")
    if T == 0:
        return 0.0, delta_prime
    eps = math.sqrt(2 * T * math.log(1 / delta_prime)) * epsilon0 \
        + T * epsilon0 * (math.exp(epsilon0) - 1)
    return eps, T * delta0 + delta_prime


def protocol_epsilon(sigma: float, n: int, T: int, delta: float) -> float:
    """End-to-end privacy parameter of the aggregation protocol.

    epsilon = 4 sqrt(2 T ln(2/delta)) / (sigma n) + 4 T / (sigma n)^2
    """
    if sigma <= 0 or n <= 0:
        raise ValueError("sigma and n must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    if T < 0:
        raise ValueError("T must be non-negative")
    if T == 0:
        return 0.0
    sn = sigma * n
    return 4 * math.sqrt(2 * T * math.log(2 / delta)) / sn + 4 * T / (sn * sn)


def verification_lower_bound(tau: float, n0: int, n1: int) -> float:
    """Minimum epsilon any mechanism needs to verify parity within tau."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if n0 < 1 or n1 < 1:
        raise ValueError("group counts must be >= 1")
    return 2.0 / (tau * min(n0, n1))


def accuracy_bound(sigma: float, n_participants: int, n0: int, n1: int,
                   delta_fair: float) -> float:
    """High-probability error bound on the released parity metric.

    epsilon_fair = 4 sigma sqrt(2 ln(4/delta_fair)) / min(n0, n1)
    """
    if sigma < 0 or n_participants <= 0 or n0 < 1 or n1 < 1:
        raise ValueError("inputs must be positive")
    if not 0 < delta_fair < 1:
        raise ValueError("delta_fair must be in (0, 1)")
    return 4 * sigma * math.sqrt(2 * math.log(4 / delta_fair)) / min(n0, n1)


def defense_scale(T: int, epsilon_inf: float, n: int) -> float:
    """Metric-release Laplace scale: 2 sqrt(T) / (epsilon_inf * n)."""
    if T <= 0 or epsilon_inf <= 0 or n <= 0:
        raise ValueError("inputs must be positive")
    return 2 * math.sqrt(T) / (epsilon_inf * n)


@dataclass(frozen=True)
class PrivacyAccountant:
    """Composition-tracking budget accountant; charge_round returns a new value."""

    epsilon0: float
    delta0: float
    delta_prime: float = 1e-6
    rounds_charged: int = 0
    cap_epsilon: float | None = None
    cap_delta: float | None = None

    @property
    def total_epsilon(self) -> float:
        return compose(self.epsilon0, self.delta0, self.rounds_charged, self.delta_prime)[0]

    @property
    def total_delta(self) -> float:
        return compose(self.epsilon0, self.delta0, self.rounds_charged, self.delta_prime)[1]

    def charge_round(self) -> "PrivacyAccountant":
        next_eps, next_delta = compose(
            self.epsilon0, self.delta0, self.rounds_charged + 1, self.delta_prime
        )
        if self.cap_epsilon is not None and next_eps > self.cap_epsilon:
            raise BudgetExhaustedError(
                f"round {self.rounds_charged + 1} would spend epsilon={next_eps:.6f} "
                f"> cap {self.cap_epsilon}"
            )
        if self.cap_delta is not None and next_delta > self.cap_delta:
            raise BudgetExhaustedError(
                f"round {self.rounds_charged + 1} would spend delta={next_delta:.3g} "
                f"> cap {self.cap_delta}"
            )
        return replace(self, rounds_charged=self.rounds_charged + 1)

    def to_json(self) -> str:
        def fmt(x):
            return None if x is None else format(x, ".12g")

        return json.dumps(
            {
                "epsilon0": fmt(self.epsilon0),
                "delta0": fmt(self.delta0),
                "delta_prime": fmt(self.delta_prime),
                "rounds_charged": self.rounds_charged,
                "cap_epsilon": fmt(self.cap_epsilon),
                "cap_delta": fmt(self.cap_delta),
                "total_epsilon": fmt(self.total_epsilon),
                "total_delta": fmt(self.total_delta),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, data: str) -> "PrivacyAccountant":
        obj = json.loads(data)

        def parse(x):
            return None if x is None else float(x)

        return cls(
            epsilon0=parse(obj["epsilon0"]),
            delta0=parse(obj["delta0"]),
            delta_prime=parse(obj["delta_prime"]),
            rounds_charged=int(obj["rounds_charged"]),
            cap_epsilon=parse(obj["cap_epsilon"]),
            cap_delta=parse(obj["cap_delta"]),
        )
