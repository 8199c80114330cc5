"""Optimization-free adaptive-bias QAOA.

Bias fields are trained by a single update per level while the angles follow
a fixed linear ramp; the answer is the basis state read off the field signs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .statevector import evolve_batch, expectation_energy, z_expectations
from .variational import _cost, _num_vars, linear_schedule, random_fields, update_bias

TIE_POLICIES = ("zero", "one")


@dataclass(frozen=True)
class OfabConfig:
    p: int
    samples: int = 10
    dt: float = 0.6
    learning_rate: float = 0.4
    tie_policy: str = "zero"

    def __post_init__(self):
        if self.p < 1 or self.samples < 1:
            raise ValueError("need p >= 1 and samples >= 1")
        if self.tie_policy not in TIE_POLICIES:
            raise ValueError(f"tie_policy must be one of {TIE_POLICIES}")


@dataclass
class OfabResult:
    energy: int
    assignment: np.ndarray
    sample: int
    h_history: np.ndarray  # (p + 1, R, n): fields before level 1 and after each level
    level_energies: np.ndarray  # (p, R): <H_C> of each prepared state, logged only
    bias_energies: np.ndarray = field(repr=False)  # (p + 1, R) classical energy of each bias state
    tie_policy: str = "zero"

    @property
    def p(self) -> int:
        return self.h_history.shape[0] - 1

    @property
    def samples(self) -> int:
        return self.h_history.shape[1]

    @property
    def state_preparations(self) -> int:
        return self.p * self.samples

    @property
    def layer_applications(self) -> int:
        # level p' runs p' layers for each of R samples
        return self.samples * self.p * (self.p + 1) // 2

    @property
    def gate_proxy(self) -> float:
        return self.p**2 / 2

    def at_level(self, level: int) -> tuple[int, np.ndarray]:
        """Best energy and bias state had the run stopped after ``level`` levels."""
        if not 1 <= level <= self.p:
            raise ValueError(f"level {level} outside 1..{self.p}")
        energies = self.bias_energies[level]
        r = int(np.argmin(energies))
        return int(energies[r]), bias_state(self.h_history[level, r], self.tie_policy)

    def to_dict(self) -> dict:
        return {
            "energy": self.energy,
            "assignment": self.assignment.tolist(),
            "sample": self.sample,
            "state_preparations": self.state_preparations,
            "layer_applications": self.layer_applications,
            "gate_proxy": self.gate_proxy,
            "h_history": self.h_history.tolist(),
            "level_energies": self.level_energies.tolist(),
            "bias_energies": self.bias_energies.tolist(),
        }


def bias_state(h, tie_policy: str = "zero") -> np.ndarray:
    """Bit 0 where the field is positive, 1 where negative."""
    h = np.asarray(h, dtype=float)
    if tie_policy not in TIE_POLICIES:
        raise ValueError(f"tie_policy must be one of {TIE_POLICIES}")
    bits = (h < 0).astype(np.int64)
    if tie_policy == "one":
        bits[h == 0] = 1
    return bits


def _bias_indices(h: np.ndarray, tie_policy: str) -> np.ndarray:
    # h: (R, n) -> basis index of each sample's bias state
    bits = np.stack([bias_state(row, tie_policy) for row in h])
    return bits @ (1 << np.arange(h.shape[1]))


def opt_free_run(f_or_cost, config: OfabConfig, rng: np.random.Generator) -> OfabResult:
    cost = _cost(f_or_cost)
    n = _num_vars(cost)
    R = config.samples
    h = np.stack([random_fields(n, rng) for _ in range(R)])
    history = [h.copy()]
    level_energies = []
    for level in range(1, config.p + 1):
        gamma, beta = linear_schedule(level, config.dt)
        psi = evolve_batch(np.tile(gamma, (R, 1)), np.tile(beta, (R, 1)), h, cost)
        level_energies.append(expectation_energy(psi, cost))
        h = update_bias(h, z_expectations(psi), config.learning_rate)
        history.append(h.copy())
    history = np.asarray(history)
    bias_energies = np.stack([cost[_bias_indices(hh, config.tie_policy)] for hh in history])
    r = int(np.argmin(bias_energies[-1]))
    return OfabResult(
        energy=int(bias_energies[-1, r]),
        assignment=bias_state(history[-1, r], config.tie_policy),
        sample=r,
        h_history=history,
        level_energies=np.asarray(level_energies),
        bias_energies=bias_energies,
        tie_policy=config.tie_policy,
    )
