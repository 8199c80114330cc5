"""Dense statevector engine for QAOA and adaptive-bias QAOA.

Basis index ``z`` has qubit ``j`` as bit ``j``; bit value 0 is the ``|0>``
state (Z eigenvalue +1, variable False).  The biased mixer on qubit ``j`` is

    B_j = (X_j - h_j Z_j) / sqrt(1 + h_j^2),

which squares to the identity, so ``exp(-i beta B_j) = cos(beta) - i sin(beta) B_j``
and the full mixer is a product of independent 2x2 gates.

Every routine accepts either a single state of shape ``(2**n,)`` or a batch of
shape ``(B, 2**n)``; per-batch angles and bias fields broadcast over the
leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .sat import Formula

ENGINE_MAX_N = 24
DENSE_MAX_N = 12
NORM_TOL = 1e-10
GROUP_MAX = 6

TWO_PI = 2.0 * np.pi


class NormError(RuntimeError):
    """A unitary layer changed the state norm; indicates an engine bug."""


@dataclass
class Schedule:
    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ValueError("gamma and beta must be 1-d arrays of equal length")

    @property
    def p(self) -> int:
        return len(self.gamma)

    def canonical(self) -> "Schedule":
        return Schedule(wrap_gamma(self.gamma), wrap_beta(self.beta))


def wrap_gamma(gamma):
    return np.mod(gamma, TWO_PI)


def wrap_beta(beta):
    return np.mod(beta, np.pi)


def num_qubits(psi: np.ndarray) -> int:
    dim = psi.shape[-1]
    n = dim.bit_length() - 1
    if dim != 1 << n:
        raise ValueError(f"state dimension {dim} is not a power of two")
    return n


def build_cost_diagonal(f: Formula) -> np.ndarray:
    """Diagonal of the Ising cost Hamiltonian, 1/4 sum_a (Z_a1 + Z_a2 + Z_a3 - 1)^2.

    Works in spin variables so it is an independent route to the penalty
    energies computed in :mod:`abqaoa_sat.sat`.
    """
    if f.n > ENGINE_MAX_N:
        raise ValueError(f"engine limited to n <= {ENGINE_MAX_N}, got {f.n}")
    z = np.arange(1 << f.n, dtype=np.int64)
    spins = [1 - 2 * ((z >> j) & 1) for j in range(f.n)]
    energies = np.zeros(1 << f.n, dtype=np.int64)
    for a, b, c in f.clauses:
        s = spins[a] + spins[b] + spins[c] - 1
        energies += s * s
    # s is even for three odd spins, so s^2 / 4 is exact
    return energies // 4


def rotation_angles(h) -> np.ndarray:
    return np.arctan(np.asarray(h, dtype=float))


def _cos_sin(h):
    h = np.asarray(h, dtype=float)
    norm = np.sqrt(1.0 + h * h)
    return 1.0 / norm, h / norm


def prepare_initial_state(h) -> np.ndarray:
    """Ground state of the biased mixer: the product of R_y(d_j)|->.

    On qubit ``j`` this is ``[(c + s)|0> - (c - s)|1>] / sqrt(2)`` with
    ``c, s = cos(d_j/2), sin(d_j/2)``.  ``h = 0`` gives ``|->^n``.
    """
    d = rotation_angles(h)
    if d.ndim != 1:
        raise ValueError("h must be 1-d")
    c, s = np.cos(d / 2), np.sin(d / 2)
    amp = np.stack([c + s, s - c], axis=1) / np.sqrt(2.0)
    psi = np.ones(1)
    # qubit 0 is the least significant bit, so it goes last in the Kronecker product
    for j in range(len(d)):
        psi = (amp[j][:, None] * psi[None, :]).ravel()
    return psi.astype(complex)


def mixer_gates(beta, h) -> np.ndarray:
    """Per-qubit mixer unitaries, shape ``beta.shape + (n, 2, 2)``."""
    beta = np.asarray(beta, dtype=float)[..., None]
    cb, sb = np.cos(beta), np.sin(beta)
    c, s = _cos_sin(h)
    u = np.empty(np.broadcast_shapes(beta.shape, c.shape) + (2, 2), dtype=complex)
    u[..., 0, 0] = cb + 1j * sb * s
    u[..., 0, 1] = -1j * sb * c
    u[..., 1, 0] = -1j * sb * c
    u[..., 1, 1] = cb - 1j * sb * s
    return u


def _apply_1q(psi: np.ndarray, u: np.ndarray, j: int, n: int) -> np.ndarray:
    # psi: (B, 2**n); u: (B, 2, 2) or (2, 2)
    b = psi.shape[0]
    v = psi.reshape(b, 1 << (n - 1 - j), 2, 1 << j)
    a0 = v[:, :, 0, :]
    a1 = v[:, :, 1, :]
    if u.ndim == 2:
        u = u[None]
    u = u[:, :, :, None, None]
    out = np.empty_like(v)
    out[:, :, 0, :] = u[:, 0, 0] * a0 + u[:, 0, 1] * a1
    out[:, :, 1, :] = u[:, 1, 0] * a0 + u[:, 1, 1] * a1
    return out.reshape(b, 1 << n)


def _as_batch(psi):
    psi = np.asarray(psi)
    single = psi.ndim == 1
    return (psi[None, :] if single else psi), single


def cost_phases(gamma, cost: np.ndarray) -> np.ndarray:
    """``exp(-i gamma cost)``; ``gamma`` scalar or ``(B,)``."""
    gamma = np.asarray(gamma, dtype=float)
    if cost.dtype.kind in "iu" and cost.min() >= 0 and cost.max() <= 4096:
        # integer spectrum: exponentiate each distinct level once
        levels = np.arange(int(cost.max()) + 1)
        table = np.exp(-1j * gamma[..., None] * levels)
        return table[..., cost]
    return np.exp(-1j * gamma[..., None] * cost)


def apply_cost_phase(psi: np.ndarray, gamma, cost: np.ndarray) -> np.ndarray:
    return psi * cost_phases(gamma, cost)


@lru_cache(maxsize=64)
def _qubit_groups(n: int) -> list[tuple[int, int]]:
    # contiguous (first qubit, size) blocks of at most GROUP_MAX qubits, sizes balanced
    count = -(-n // GROUP_MAX)
    sizes = [n // count + (1 if i < n % count else 0) for i in range(count)]
    starts = np.cumsum([0] + sizes[:-1])
    return [(int(s), g) for s, g in zip(starts, sizes)]


def _group_matrix(gates: np.ndarray, lo: int, size: int) -> np.ndarray:
    # kron(u[lo+size-1], ..., u[lo]) batched over leading axes
    m = gates[..., lo, :, :]
    for j in range(lo + 1, lo + size):
        u = gates[..., j, :, :]
        d = m.shape[-1]
        m = (u[..., :, None, :, None] * m[..., None, :, None, :]).reshape(m.shape[:-2] + (2 * d, 2 * d))
    return m


def apply_gates(psi: np.ndarray, gates: np.ndarray) -> np.ndarray:
    """Apply one 2x2 gate per qubit; ``gates`` is ``(n, 2, 2)`` or ``(B, n, 2, 2)``.

    Gates are fused into dense blocks over a few contiguous qubit groups and
    applied as batched matrix products.
    """
    batch, single = _as_batch(psi)
    n = num_qubits(batch)
    if gates.shape[-3] != n:
        raise ValueError(f"got {gates.shape[-3]} gates for {n} qubits")
    if gates.ndim == 3:
        gates = gates[None]
    b = batch.shape[0]
    for lo, size in _qubit_groups(n):
        m = _group_matrix(gates, lo, size)
        hi = n - lo - size
        if lo == 0:
            v = batch.reshape(b, 1 << hi, 1 << size)
            batch = np.matmul(v, m.swapaxes(-1, -2)).reshape(b, 1 << n)
        else:
            v = batch.reshape(b, 1 << hi, 1 << size, 1 << lo)
            batch = np.matmul(m[:, None], v).reshape(b, 1 << n)
    return batch[0] if single else batch


def apply_mixer(psi: np.ndarray, beta, h) -> np.ndarray:
    return apply_gates(psi, mixer_gates(beta, h))


def apply_mixer_hamiltonian(psi: np.ndarray, h) -> np.ndarray:
    """``H_M(h) psi`` with ``H_M = sum_j B_j`` (not a unitary)."""
    batch, single = _as_batch(psi)
    n = num_qubits(batch)
    c, s = _cos_sin(h)
    c = np.broadcast_to(c, batch.shape[:1] + (n,))
    s = np.broadcast_to(s, batch.shape[:1] + (n,))
    out = np.zeros_like(batch)
    for j in range(n):
        b = np.empty((batch.shape[0], 2, 2), dtype=complex)
        b[:, 0, 0] = -s[:, j]
        b[:, 0, 1] = c[:, j]
        b[:, 1, 0] = c[:, j]
        b[:, 1, 1] = s[:, j]
        out += _apply_1q(batch, b, j, n)
    return out[0] if single else out


@lru_cache(maxsize=32)
def _flip_index(n: int) -> np.ndarray:
    z = np.arange(1 << n)
    return z[None, :] ^ (1 << np.arange(n))[:, None]


def mixer_hamiltonian_overlap(lam: np.ndarray, psi: np.ndarray, h) -> complex:
    """``<lam| H_M(h) |psi>`` for single states without forming ``H_M psi``."""
    n = num_qubits(psi)
    c, s = _cos_sin(h)
    w = np.conj(lam)
    diag = -((w * psi) @ z_signs(n))
    flip = (psi[_flip_index(n)] * w[None, :]).sum(axis=1)
    return complex(np.sum(s * diag + c * flip))


def check_norm(psi: np.ndarray, tol: float = NORM_TOL) -> None:
    norms = np.sum(np.abs(psi) ** 2, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= tol):
        raise NormError(f"state norm drifted to {norms!r}")


def evolve(psi0: np.ndarray, schedule: Schedule, h, cost: np.ndarray) -> np.ndarray:
    """Apply ``exp(-i beta_k H_M) exp(-i gamma_k H_C)`` for ``k = 1..p`` in order."""
    psi = np.array(psi0, dtype=complex, copy=True)
    for g, b in zip(schedule.gamma, schedule.beta):
        psi = apply_mixer(apply_cost_phase(psi, g, cost), b, h)
        check_norm(psi)
    return psi


def intermediate_states(psi0: np.ndarray, schedule: Schedule, h, cost: np.ndarray) -> list[np.ndarray]:
    """States after ``k = 0..p`` layers (``k = 0`` is ``psi0``)."""
    states = [np.array(psi0, dtype=complex, copy=True)]
    for g, b in zip(schedule.gamma, schedule.beta):
        psi = apply_mixer(apply_cost_phase(states[-1], g, cost), b, h)
        check_norm(psi)
        states.append(psi)
    return states


def evolve_batch(gammas, betas, h, cost: np.ndarray, psi0: np.ndarray | None = None) -> np.ndarray:
    """Evolve ``B`` parameter sets at once.

    ``gammas``/``betas`` are ``(B, p)``; ``h`` is ``(n,)`` shared or ``(B, n)``.
    Each batch member starts from ``psi0`` if given, otherwise from the
    ground state of its own mixer.
    """
    gammas = np.atleast_2d(np.asarray(gammas, dtype=float))
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    h = np.asarray(h, dtype=float)
    bsz = gammas.shape[0]
    if psi0 is not None:
        psi = np.broadcast_to(psi0, (bsz, len(cost))).astype(complex)
    elif h.ndim == 1:
        psi = np.broadcast_to(prepare_initial_state(h), (bsz, len(cost))).astype(complex)
    else:
        psi = np.stack([prepare_initial_state(hb) for hb in h])
    h_b = h if h.ndim == 2 else h[None, :]
    for k in range(gammas.shape[1]):
        psi = apply_cost_phase(psi, gammas[:, k], cost)
        psi = apply_gates(psi, mixer_gates(betas[:, k], h_b))
    check_norm(psi)
    return psi


def probabilities(psi: np.ndarray) -> np.ndarray:
    return psi.real**2 + psi.imag**2


def expectation_energy(psi: np.ndarray, cost: np.ndarray):
    return probabilities(psi) @ cost.astype(float)


@lru_cache(maxsize=32)
def z_signs(n: int) -> np.ndarray:
    """``(2**n, n)`` matrix of Z eigenvalues, +1 where bit ``j`` is 0."""
    z = np.arange(1 << n)[:, None]
    return 1.0 - 2.0 * ((z >> np.arange(n)[None, :]) & 1)


def z_expectations(psi: np.ndarray) -> np.ndarray:
    """``<Z_j>`` for every qubit, shape ``(n,)`` or ``(B, n)``."""
    return probabilities(psi) @ z_signs(num_qubits(psi))


def expectation_z(psi: np.ndarray, j: int) -> float:
    n = num_qubits(psi)
    if not 0 <= j < n:
        raise IndexError(f"qubit {j} out of range for n={n}")
    return float(z_expectations(psi)[j])


def energy_and_gradient(
    schedule: Schedule, h, cost: np.ndarray, psi0: np.ndarray | None = None, return_state: bool = False
):
    """Exact ``<H_C>`` and its derivatives in ``gamma`` and ``beta`` by adjoint replay.

    Runs the circuit forward once keeping the intermediate states, then walks
    it backward carrying the co-state ``H_C psi``; about two forward passes
    of work for any ``p``.  With ``return_state`` the output state is
    appended to the returned tuple.
    """
    h = np.asarray(h, dtype=float)
    psi = prepare_initial_state(h) if psi0 is None else np.array(psi0, dtype=complex)
    costf = cost.astype(float)
    p = schedule.p
    after_cost, after_mix, gates = [], [], []
    for k in range(p):
        psi = psi * cost_phases(schedule.gamma[k], cost)
        after_cost.append(psi)
        u = mixer_gates(schedule.beta[k], h)
        psi = apply_gates(psi, u)
        gates.append(u)
        after_mix.append(psi)
    check_norm(psi)
    final = psi
    energy = float(probabilities(psi) @ costf)
    lam = costf * psi
    d_gamma = np.empty(p)
    d_beta = np.empty(p)
    for k in range(p - 1, -1, -1):
        d_beta[k] = 2.0 * mixer_hamiltonian_overlap(lam, after_mix[k], h).imag
        lam = apply_gates(lam, np.conj(gates[k]).swapaxes(-1, -2))
        d_gamma[k] = 2.0 * np.vdot(lam, costf * after_cost[k]).imag
        lam = lam * cost_phases(-schedule.gamma[k], cost)
    if return_state:
        return energy, d_gamma, d_beta, final
    return energy, d_gamma, d_beta


def _kron_all(mats) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(m, out)
    return out


def mixer_unitary(beta: float, h) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if len(h) > DENSE_MAX_N:
        raise ValueError(f"dense path limited to n <= {DENSE_MAX_N}, got {len(h)}")
    return _kron_all(mixer_gates(beta, h))


def build_step_unitary(gamma: float, beta: float, h, cost: np.ndarray) -> np.ndarray:
    """Dense ``exp(-i beta H_M) exp(-i gamma H_C)``."""
    m = mixer_unitary(beta, h)
    return m * cost_phases(gamma, cost)[None, :]
