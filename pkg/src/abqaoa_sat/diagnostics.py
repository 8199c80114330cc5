"""Observables of the output and intermediate states.

Entropies use log base 2 with ``0 log 0 = 0``.  The bipartition average runs
over every unordered split of the qubits into two non-empty parts, i.e.
``2**(n-1) - 1`` of them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.linalg

from .sat import Formula, GroundSolution, brute_force_ground
from .statevector import (
    DENSE_MAX_N,
    build_cost_diagonal,
    build_step_unitary,
    expectation_energy,
    intermediate_states,
    num_qubits,
    prepare_initial_state,
    probabilities,
)
from .variational import RunRecord

ENTANGLEMENT_MAX_N = 14
PHASE_TOL = 1e-8
DEFAULT_ETAS = (0.2, 0.4, 0.6, 0.8, 1.0)
METRICS = ("entanglement", "participation", "annealing", "infidelity", "energy")
DIAGNOSTIC_COLUMNS = ("instance_id", "algo", "p", "alpha", "eta", "k", "metric", "value")


@dataclass
class BipartitionAverage:
    value: float
    by_size: dict[int, float] = field(default_factory=dict)
    count: int = 0


@dataclass
class DiagnosticSeries:
    metric: str
    eta: float
    iteration: int  # 1-based optimization step the snapshot was taken from
    values: np.ndarray  # indexed by layer k = 0..p


def _ground(g) -> GroundSolution:
    return brute_force_ground(g) if isinstance(g, Formula) else g


def residual_energy(energy: float, ground) -> float:
    """``energy - E_g``; ``ground`` is a Formula or a precomputed GroundSolution."""
    return float(energy) - _ground(ground).energy


def infidelity(psi: np.ndarray, grounds) -> float:
    """One minus the probability mass on the ground basis states.

    ``grounds`` is a GroundSolution or a sequence of basis indices.
    """
    idx = grounds.ground_indices if isinstance(grounds, GroundSolution) else np.asarray(grounds, dtype=np.int64)
    mass = float(probabilities(psi)[idx].sum())
    return min(max(1.0 - mass, 0.0), 1.0)


def entropy_bits(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    w = w[w > 0]
    return float(-(w * np.log2(w)).sum())


def bipartitions(n: int):
    """Yield subsets ``A`` (tuples of qubits) covering each unordered split once."""
    for k in range(1, n // 2 + 1):
        for a in itertools.combinations(range(n), k):
            if 2 * k == n and a[0] != 0:
                continue
            yield a


def max_average_entropy(n: int) -> float:
    """Bipartition average of ``min(|A|, n - |A|)``, the ceiling of the average entropy."""
    total = count = 0
    for a in bipartitions(n):
        total += len(a)
        count += 1
    return total / count if count else 0.0


def entanglement_entropy_avg(psi: np.ndarray) -> BipartitionAverage:
    n = num_qubits(psi)
    if n > ENTANGLEMENT_MAX_N:
        raise ValueError(f"entanglement average limited to n <= {ENTANGLEMENT_MAX_N}, got {n}")
    if n < 2:
        return BipartitionAverage(0.0, {}, 0)
    # reshape puts qubit n-1 on axis 0
    tensor = np.asarray(psi, dtype=complex).reshape((2,) * n)
    by_size = {}
    total = 0.0
    count = 0
    for k in range(1, n // 2 + 1):
        subsets = [a for a in bipartitions(n) if len(a) == k]
        rhos = np.empty((len(subsets), 1 << k, 1 << k), dtype=complex)
        for i, a in enumerate(subsets):
            keep = [n - 1 - q for q in a]
            rest = [ax for ax in range(n) if ax not in keep]
            m = tensor.transpose(keep + rest).reshape(1 << k, 1 << (n - k))
            # partial trace over the complement
            rhos[i] = m @ m.conj().T
        evals = np.clip(np.linalg.eigvalsh(rhos), 0.0, None)
        ent = [entropy_bits(ev) for ev in evals]
        by_size[k] = float(np.mean(ent))
        total += float(np.sum(ent))
        count += len(subsets)
    return BipartitionAverage(total / count, by_size, count)


def participation_ratio(psi: np.ndarray) -> float:
    prob = probabilities(psi)
    return float(1.0 / np.sum(prob * prob))


def eigenspace_weights(psi: np.ndarray, u: np.ndarray, phase_tol: float = PHASE_TOL) -> np.ndarray:
    """Squared projections of ``psi`` onto the eigenspaces of unitary ``u``.

    Eigenphases closer than ``phase_tol`` (on the circle) are merged, so the
    result does not depend on how a degenerate eigenbasis is chosen.
    """
    n = num_qubits(psi)
    if n > DENSE_MAX_N:
        raise ValueError(f"dense eigendecomposition limited to n <= {DENSE_MAX_N}, got {n}")
    # complex Schur vectors of a normal matrix are an orthonormal eigenbasis
    t, z = scipy.linalg.schur(u, output="complex")
    phases = np.angle(np.diag(t))
    weights = np.abs(z.conj().T @ psi) ** 2
    order = np.argsort(phases)
    phases, weights = phases[order], weights[order]
    breaks = np.flatnonzero(np.diff(phases) > phase_tol) + 1
    groups = np.split(np.arange(len(phases)), breaks)
    mass = [weights[g].sum() for g in groups]
    if len(groups) > 1 and phases[0] + 2 * np.pi - phases[-1] <= phase_tol:
        mass[0] += mass.pop()
    return np.asarray(mass)


def annealing_entropy(psi: np.ndarray, u: np.ndarray, phase_tol: float = PHASE_TOL) -> float:
    return entropy_bits(eigenspace_weights(psi, u, phase_tol))


def snapshot_iteration(eta, n_con: int) -> int:
    """1-based iteration for optimization fraction ``eta``: ceil(eta * N_con) clamped."""
    frac = eta if isinstance(eta, Fraction) else Fraction(str(eta))
    return min(max(math.ceil(frac * n_con), 1), n_con)


def trajectory_diagnostics(
    f_or_cost,
    record: RunRecord,
    etas: Sequence[float] = DEFAULT_ETAS,
    metrics: Sequence[str] = ("entanglement", "participation"),
    grounds=None,
) -> list[DiagnosticSeries]:
    """Replay the circuit at each requested optimization fraction and measure every layer.

    ``annealing`` has no step unitary before the first layer and reports NaN
    at ``k = 0``.  ``infidelity`` needs ``grounds`` unless a Formula is given.
    """
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    cost = build_cost_diagonal(f_or_cost) if isinstance(f_or_cost, Formula) else np.asarray(f_or_cost)
    if "infidelity" in metrics and grounds is None:
        if not isinstance(f_or_cost, Formula):
            raise ValueError("infidelity needs grounds when given a bare cost diagonal")
        grounds = brute_force_ground(f_or_cost)
    out = []
    for eta in etas:
        it = snapshot_iteration(eta, record.n_con)
        pt = record.point(it - 1)
        states = intermediate_states(prepare_initial_state(pt.h), pt.schedule, pt.h, cost)
        for metric in metrics:
            if metric == "entanglement":
                vals = [entanglement_entropy_avg(s).value for s in states]
            elif metric == "participation":
                vals = [participation_ratio(s) for s in states]
            elif metric == "infidelity":
                vals = [infidelity(s, grounds) for s in states]
            elif metric == "energy":
                vals = [float(expectation_energy(s, cost)) for s in states]
            else:
                vals = [math.nan] + [
                    annealing_entropy(states[k], build_step_unitary(pt.gamma[k - 1], pt.beta[k - 1], pt.h, cost))
                    for k in range(1, pt.p + 1)
                ]
            out.append(DiagnosticSeries(metric, float(eta), it, np.asarray(vals, dtype=float)))
    return out


def diagnostic_rows(instance_id, algo: str, p: int, alpha, series: Sequence[DiagnosticSeries]) -> list[dict]:
    """Long-format rows with the ``DIAGNOSTIC_COLUMNS`` keys."""
    rows = []
    for s in series:
        for k, v in enumerate(s.values):
            rows.append(
                {
                    "instance_id": instance_id,
                    "algo": algo,
                    "p": p,
                    "alpha": str(alpha),
                    "eta": s.eta,
                    "k": k,
                    "metric": s.metric,
                    "value": float(v),
                }
            )
    return rows


def success_probability(verdicts: Sequence[bool], truths: Sequence[bool]) -> float:
    if len(verdicts) != len(truths):
        raise ValueError(f"{len(verdicts)} verdicts for {len(truths)} instances")
    if not truths:
        raise ValueError("no instances")
    return sum(bool(v) == bool(t) for v, t in zip(verdicts, truths)) / len(truths)


def sat_probability(truths: Sequence[bool]) -> float:
    if not truths:
        raise ValueError("SAT probability of an empty ensemble is undefined")
    return sum(bool(t) for t in truths) / len(truths)
