"""Classical outer loop for QAOA and adaptive-bias QAOA.

Angles are trained with Adam on ``<H_C>``; bias fields are never
differentiated, they move once per iteration toward the measured ``<Z_j>``.
QAOA is the same loop with ``h = 0`` and a zero bias learning rate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .sat import Formula
from .statevector import (
    Schedule,
    build_cost_diagonal,
    energy_and_gradient,
    evolve,
    evolve_batch,
    expectation_energy,
    prepare_initial_state,
    wrap_beta,
    wrap_gamma,
    z_expectations,
)

log = logging.getLogger(__name__)

ALGORITHMS = ("qaoa", "ab_qaoa")
INIT_STRATEGIES = ("tqa", "fourier")
E_THRESHOLD = 0.5


class SampleFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.4  # bias-field step
    adam_lr: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    fd_step: float = 1e-3
    gradient: str = "fd"  # "fd" or "exact"
    tol: float = 1e-5
    window: int = 5
    max_iter: int = 500
    samples: int = 10
    dt: float = 0.6
    xi: float = 0.6
    fourier_levels: tuple[int, ...] = (1, 2, 4, 8, 16, 24)

    def __post_init__(self):
        if not 0.0 <= self.learning_rate <= 1.0:
            raise ValueError(f"learning_rate must lie in [0, 1], got {self.learning_rate}")
        if self.samples < 1:
            raise ValueError("samples (R) must be >= 1")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")
        if self.gradient not in ("fd", "exact"):
            raise ValueError(f"unknown gradient mode {self.gradient!r}")
        if self.window < 1 or self.max_iter < 1:
            raise ValueError("window and max_iter must be >= 1")
        levels = tuple(int(v) for v in self.fourier_levels)
        if any(b <= a for a, b in zip(levels, levels[1:])) or levels[0] < 1:
            raise ValueError("fourier_levels must be strictly increasing positive ints")
        object.__setattr__(self, "fourier_levels", levels)

    def with_overrides(self, **kw) -> "OptimizerConfig":
        known = {f.name for f in fields(self)}
        unknown = set(kw) - known
        if unknown:
            raise ValueError(f"unknown optimizer options: {sorted(unknown)}")
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fourier_levels"] = list(self.fourier_levels)
        return d


@dataclass
class InitPoint:
    gamma: np.ndarray
    beta: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        if self.gamma.shape != self.beta.shape:
            raise ValueError("gamma and beta lengths differ")

    @property
    def p(self) -> int:
        return len(self.gamma)

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.gamma, self.beta)


@dataclass
class RunRecord:
    """Trajectory of one optimized sample.

    Row ``i`` of ``gammas``/``betas``/``hs`` holds the parameters at which
    ``energies[i]`` was measured, so ``len(energies) == n_con``.
    """

    energies: np.ndarray
    gammas: np.ndarray
    betas: np.ndarray
    hs: np.ndarray
    converged: bool
    algo: str = "ab_qaoa"

    @property
    def n_con(self) -> int:
        return len(self.energies)

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.energies))

    @property
    def best_energy(self) -> float:
        return float(self.energies[self.best_index])

    @property
    def p(self) -> int:
        return self.gammas.shape[1]

    def point(self, index: int) -> InitPoint:
        return InitPoint(self.gammas[index], self.betas[index], self.hs[index])

    @property
    def best_point(self) -> InitPoint:
        return self.point(self.best_index)

    @property
    def final_point(self) -> InitPoint:
        return self.point(self.n_con - 1)

    def state(self, cost: np.ndarray, index: int | None = None) -> np.ndarray:
        """Output state at iteration ``index`` (default: the best one)."""
        pt = self.point(self.best_index if index is None else index)
        return evolve(prepare_initial_state(pt.h), pt.schedule, pt.h, cost)

    def to_dict(self) -> dict:
        return {
            "algo": self.algo,
            "converged": self.converged,
            "n_con": self.n_con,
            "best_energy": self.best_energy,
            "energies": self.energies.tolist(),
            "gammas": self.gammas.tolist(),
            "betas": self.betas.tolist(),
            "hs": self.hs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            energies=np.asarray(d["energies"], dtype=float),
            gammas=np.asarray(d["gammas"], dtype=float),
            betas=np.asarray(d["betas"], dtype=float),
            hs=np.asarray(d["hs"], dtype=float),
            converged=bool(d["converged"]),
            algo=d.get("algo", "ab_qaoa"),
        )


@dataclass
class RunResult:
    record: RunRecord
    state: np.ndarray
    samples: list[RunRecord] = field(repr=False)
    level_records: dict[int, RunRecord] = field(default_factory=dict, repr=False)

    @property
    def energy(self) -> float:
        return self.record.best_energy


class Adam:
    def __init__(self, lr=0.05, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _cost(f_or_cost) -> np.ndarray:
    return build_cost_diagonal(f_or_cost) if isinstance(f_or_cost, Formula) else np.asarray(f_or_cost)


def _num_vars(cost: np.ndarray) -> int:
    return len(cost).bit_length() - 1


def linear_schedule(p: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    frac = np.arange(p) / p
    return frac * dt, (1.0 - frac) * dt


def random_fields(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(np.array([-1.0, 1.0]), size=n)


def perturb(u: np.ndarray, xi: float, rng: np.random.Generator) -> np.ndarray:
    """``xi * Normal(0, u_k^2)`` componentwise; zero components stay zero."""
    return xi * rng.normal(0.0, np.abs(u))


def tqa_init(p: int, R: int, dt: float, xi: float, n: int, rng: np.random.Generator) -> list[InitPoint]:
    """Linear-ramp start for sample 1, perturbed copies for the rest, random +-1 fields."""
    if p < 1 or R < 1:
        raise ValueError("need p >= 1 and R >= 1")
    gamma1, beta1 = linear_schedule(p, dt)
    points = []
    for r in range(R):
        h = random_fields(n, rng)
        if r == 0:
            g, b = gamma1.copy(), beta1.copy()
        else:
            g = gamma1 + perturb(gamma1, xi, rng)
            b = beta1 + perturb(beta1, xi, rng)
        points.append(InitPoint(g, b, h))
    return points


def fourier_level_init(
    p: int,
    R: int,
    xi: float,
    n: int,
    rng: np.random.Generator,
    prev_gamma: np.ndarray | None = None,
    prev_beta: np.ndarray | None = None,
) -> list[InitPoint]:
    """Initial points for one level of the modified Fourier chain.

    Without a previous best point all angles are uniform over their periods.
    Otherwise sample 1 copies the previous best into the leading slots and
    zero-pads; later samples also perturb the copied slots.
    """
    points = []
    if prev_gamma is None:
        for _ in range(R):
            h = random_fields(n, rng)
            points.append(InitPoint(rng.uniform(0, 2 * np.pi, p), rng.uniform(0, np.pi, p), h))
        return points
    prev_gamma = np.asarray(prev_gamma, dtype=float)
    prev_beta = np.asarray(prev_beta, dtype=float)
    q = len(prev_gamma)
    if q > p:
        raise ValueError(f"previous level {q} exceeds target level {p}")
    for r in range(R):
        h = random_fields(n, rng)
        g = np.zeros(p)
        b = np.zeros(p)
        g[:q] = prev_gamma
        b[:q] = prev_beta
        if r > 0:
            g[:q] += perturb(prev_gamma, xi, rng)
            b[:q] += perturb(prev_beta, xi, rng)
        points.append(InitPoint(g, b, h))
    return points


def gradient(point: InitPoint, cost, config: OptimizerConfig) -> np.ndarray:
    """d<H_C>/d(gamma, beta) at fixed bias fields, concatenated ``[gamma..., beta...]``."""
    cost = _cost(cost)
    if config.gradient == "exact":
        _, dg, db = energy_and_gradient(point.schedule, point.h, cost)
        return np.concatenate([dg, db])
    p = point.p
    eps = config.fd_step
    theta = np.concatenate([point.gamma, point.beta])
    shifts = np.eye(2 * p) * eps
    batch = np.concatenate([theta + shifts, theta - shifts])
    e = expectation_energy(evolve_batch(batch[:, :p], batch[:, p:], point.h, cost), cost)
    return (e[: 2 * p] - e[2 * p :]) / (2 * eps)


def update_bias(h, z_exp, ell: float) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    return h - ell * (h - np.asarray(z_exp, dtype=float))


def optimize_sample(
    f_or_cost, point: InitPoint, config: OptimizerConfig, algo: str = "ab_qaoa", ell: float | None = None
) -> RunRecord:
    """Optimize one starting point until the running best energy stalls.

    Each iteration re-prepares the mixer ground state from the current
    fields, evolves, measures ``<H_C>`` and every ``<Z_j>``, takes an Adam step
    on the angles (then wraps them into their periods) and finally moves the
    fields.  Stops once the best energy improved by less than ``config.tol``
    over the last ``config.window`` iterations.
    """
    cost = _cost(f_or_cost)
    ell = config.learning_rate if ell is None else ell
    p = point.p
    theta = np.concatenate([point.gamma, point.beta]).astype(float)
    h = point.h.astype(float).copy()
    adam = Adam(config.adam_lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    energies, gammas, betas, hs, best_hist = [], [], [], [], []
    best = math.inf
    converged = False
    for _ in range(config.max_iter):
        sched = Schedule(theta[:p], theta[p:])
        if config.gradient == "exact":
            e, dg, db, psi = energy_and_gradient(sched, h, cost, return_state=True)
            grad = np.concatenate([dg, db])
        else:
            psi = evolve(prepare_initial_state(h), sched, h, cost)
            e = float(expectation_energy(psi, cost))
            grad = gradient(InitPoint(theta[:p], theta[p:], h), cost, config)
        if not (math.isfinite(e) and np.all(np.isfinite(grad))):
            raise SampleFailure(f"non-finite energy {e} at iteration {len(energies)} (theta={theta}, h={h})")
        z = z_expectations(psi)
        energies.append(e)
        gammas.append(theta[:p].copy())
        betas.append(theta[p:].copy())
        hs.append(h.copy())
        best = min(best, e)
        best_hist.append(best)

        theta = adam.step(theta, grad)
        theta[:p] = wrap_gamma(theta[:p])
        theta[p:] = wrap_beta(theta[p:])
        h = update_bias(h, z, ell)

        w = config.window
        if len(best_hist) > w and best_hist[-1 - w] - best_hist[-1] < config.tol:
            converged = True
            break
    return RunRecord(
        energies=np.asarray(energies),
        gammas=np.asarray(gammas).reshape(len(energies), p),
        betas=np.asarray(betas).reshape(len(energies), p),
        hs=np.asarray(hs).reshape(len(energies), len(h)),
        converged=converged,
        algo=algo,
    )


def _as_qaoa(points: list[InitPoint]) -> list[InitPoint]:
    return [InitPoint(pt.gamma, pt.beta, np.zeros_like(pt.h)) for pt in points]


def optimize_points(cost, points: list[InitPoint], config: OptimizerConfig, algo: str) -> list[RunRecord | None]:
    ell = 0.0 if algo == "qaoa" else config.learning_rate
    if algo == "qaoa":
        points = _as_qaoa(points)
    out = []
    for i, pt in enumerate(points):
        try:
            out.append(optimize_sample(cost, pt, config, algo=algo, ell=ell))
        except SampleFailure as exc:
            log.warning("sample %d failed: %s", i, exc)
            out.append(None)
    return out


def best_record(records: list[RunRecord | None]) -> RunRecord:
    """Lowest best-energy record; ties go to the lowest sample index."""
    live = [(r.best_energy, i) for i, r in enumerate(records) if r is not None]
    if not live:
        raise SampleFailure("all samples failed")
    return records[min(live)[1]]


def run(
    f_or_cost,
    p: int,
    algo: str = "ab_qaoa",
    init: str = "tqa",
    config: OptimizerConfig | None = None,
    rng: np.random.Generator | None = None,
) -> RunResult:
    """Optimize ``config.samples`` starting points and keep the lowest-energy one."""
    if algo not in ALGORITHMS:
        raise ValueError(f"algo must be one of {ALGORITHMS}, got {algo!r}")
    if init not in INIT_STRATEGIES:
        raise ValueError(f"init must be one of {INIT_STRATEGIES}, got {init!r}")
    config = config or OptimizerConfig()
    rng = rng if rng is not None else np.random.default_rng()
    cost = _cost(f_or_cost)
    n = _num_vars(cost)
    R = config.samples
    if init == "tqa":
        points = tqa_init(p, R, config.dt, config.xi, n, rng)
        records = optimize_points(cost, points, config, algo)
        best = best_record(records)
        return RunResult(best, best.state(cost), records, {p: best})

    levels = [lv for lv in config.fourier_levels if lv < p] + [p]
    per_level = {}
    prev = None
    for lv in levels:
        if prev is None:
            points = fourier_level_init(lv, R, config.xi, n, rng)
        else:
            points = fourier_level_init(lv, R, config.xi, n, rng, prev.gamma, prev.beta)
        records = optimize_points(cost, points, config, algo)
        best = best_record(records)
        per_level[lv] = best
        prev = best.best_point
    return RunResult(best, best.state(cost), records, per_level)


def decide_sat(best_energy: float, e_th: float = E_THRESHOLD) -> bool:
    """True (SAT) iff the optimized energy falls below the threshold."""
    return best_energy < e_th
