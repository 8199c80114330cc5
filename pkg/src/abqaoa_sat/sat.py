"""Random 1-in-3 positive SAT instances, penalty energies and exhaustive solvers.

A clause ``(i, j, k)`` is satisfied iff exactly one of the three variables is
True.  Assignments are length-``n`` integer vectors; basis index ``z`` maps to
the assignment whose variable ``j`` is bit ``j`` of ``z``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

BRUTE_FORCE_MAX_N = 24


@dataclass(frozen=True)
class Formula:
    n: int
    clauses: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        canon = []
        for clause in self.clauses:
            c = tuple(sorted(int(v) for v in clause))
            if len(c) != 3 or len(set(c)) != 3:
                raise ValueError(f"clause {clause} must hold 3 distinct variables")
            if c[0] < 0 or c[2] >= self.n:
                raise ValueError(f"clause {clause} out of range for n={self.n}")
            canon.append(c)
        if len(set(canon)) != len(canon):
            raise ValueError("duplicate clauses")
        object.__setattr__(self, "clauses", tuple(canon))

    @property
    def m(self) -> int:
        return len(self.clauses)

    @property
    def alpha(self) -> Fraction:
        return Fraction(self.m, self.n)

    def to_dict(self) -> dict:
        return {"n": self.n, "clauses": [list(c) for c in self.clauses]}

    @classmethod
    def from_dict(cls, d: dict) -> "Formula":
        return cls(int(d["n"]), tuple(tuple(c) for c in d["clauses"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


@dataclass
class GroundSolution:
    """Exhaustive minimum of the penalty energy.

    ``ground_indices`` are basis indices of every minimum-energy assignment in
    increasing order; ``min_violated`` is the true Max-SAT optimum, computed
    independently of the energy.
    """

    energy: int
    ground_indices: np.ndarray
    min_violated: int
    n: int
    violated_at_ground: np.ndarray = field(repr=False)

    @property
    def ground_assignments(self) -> list[tuple[int, ...]]:
        return [index_to_bits(int(z), self.n) for z in self.ground_indices]


def as_fraction(alpha) -> Fraction:
    if isinstance(alpha, Fraction):
        return alpha
    if isinstance(alpha, int):
        return Fraction(alpha)
    # str() of a float gives the shortest repr, so 0.6 -> 3/5 exactly
    return Fraction(str(alpha))


def clause_count(n: int, alpha) -> int:
    """m = round(alpha * n), rounding halves up."""
    return math.floor(as_fraction(alpha) * n + Fraction(1, 2))


def generate_instance(n: int, alpha, rng: np.random.Generator) -> Formula:
    """Draw ``round(alpha*n)`` distinct clauses uniformly from all 3-subsets."""
    if n < 3:
        raise ValueError(f"need n >= 3, got {n}")
    m = clause_count(n, alpha)
    total = math.comb(n, 3)
    if m > total:
        raise ValueError(
            f"alpha={as_fraction(alpha)} needs m={m} clauses but n={n} admits only "
            f"{total} (maximal density {Fraction(total, n)})"
        )
    triples = list(itertools.combinations(range(n), 3))
    picked = np.sort(rng.choice(total, size=m, replace=False))
    return Formula(n, tuple(triples[i] for i in picked))


def index_to_bits(z: int, n: int) -> tuple[int, ...]:
    return tuple((z >> j) & 1 for j in range(n))


def bits_to_index(bits: Sequence[int]) -> int:
    return sum(int(b) << j for j, b in enumerate(bits))


def _check_assignment(f: Formula, a) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    if a.shape != (f.n,):
        raise ValueError(f"assignment length {a.shape} does not match n={f.n}")
    if np.any((a != 0) & (a != 1)):
        raise ValueError("assignment entries must be 0 or 1")
    return a


def _true_counts(f: Formula, a: np.ndarray) -> np.ndarray:
    if f.m == 0:
        return np.zeros(0, dtype=np.int64)
    idx = np.asarray(f.clauses)
    return a[idx].sum(axis=1)


def penalty_energy(f: Formula, a) -> int:
    """Sum over clauses of (true literals - 1)^2; each clause adds 0, 1 or 4."""
    t = _true_counts(f, _check_assignment(f, a))
    return int(((t - 1) ** 2).sum())


def violated_count(f: Formula, a) -> int:
    t = _true_counts(f, _check_assignment(f, a))
    return int((t != 1).sum())


def _all_true_counts(f: Formula) -> Iterable[np.ndarray]:
    z = np.arange(1 << f.n, dtype=np.int64)
    for i, j, k in f.clauses:
        yield ((z >> i) & 1) + ((z >> j) & 1) + ((z >> k) & 1)


def brute_force_ground(f: Formula) -> GroundSolution:
    if f.n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}, got {f.n}")
    energy = np.zeros(1 << f.n, dtype=np.int64)
    violated = np.zeros(1 << f.n, dtype=np.int64)
    for t in _all_true_counts(f):
        energy += (t - 1) ** 2
        violated += t != 1
    e_g = int(energy.min())
    grounds = np.flatnonzero(energy == e_g)
    return GroundSolution(
        energy=e_g,
        ground_indices=grounds,
        min_violated=int(violated.min()),
        n=f.n,
        violated_at_ground=violated[grounds],
    )


def approximation_error(f: Formula, tie: str = "min", ground: GroundSolution | None = None) -> int:
    """Violated clauses in the energy ground state minus the Max-SAT optimum.

    ``tie="min"`` picks the degenerate ground assignment with the fewest
    violations; ``tie="first"`` takes the lowest basis index.
    """
    g = brute_force_ground(f) if ground is None else ground
    if tie == "min":
        at_ground = int(g.violated_at_ground.min())
    elif tie == "first":
        at_ground = int(g.violated_at_ground[0])
    else:
        raise ValueError(f"unknown tie policy {tie!r}")
    return at_ground - g.min_violated


def sat_oracle(f: Formula, ground: GroundSolution | None = None) -> bool:
    g = brute_force_ground(f) if ground is None else ground
    return g.energy < 0.5


def save_ensemble(path, formulas: Sequence[Formula], seed: int, alpha) -> None:
    payload = {
        "seed": seed,
        "alpha": str(as_fraction(alpha)),
        "instances": [f.to_dict() for f in formulas],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_ensemble(path) -> tuple[list[Formula], int, Fraction]:
    with open(path) as fh:
        payload = json.load(fh)
    formulas = [Formula.from_dict(d) for d in payload["instances"]]
    return formulas, int(payload["seed"]), Fraction(payload["alpha"])
