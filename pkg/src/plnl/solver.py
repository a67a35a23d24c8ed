"""Monotone descent with safeguarded Barzilai-Borwein steps and Armijo backtracking."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, eval_energy, eval_gradient

ARMIJO = "armijo_backtracking"
BARZILAI_BORWEIN = "barzilai_borwein_safeguarded"

CONVERGED = "converged"
MAX_ITERS = "max_iters"
LINE_SEARCH_STALL = "line_search_stall"

STALL_STEP = 1e-18
BB_STEP_MIN = 1e-12
BB_STEP_MAX = 1e8


@dataclass(frozen=True)
class SolveOptions:
    """Descent options; ``grad_tol=None`` resolves to 1e-8 * cell volume."""

    grad_tol: float | None = None
    max_iters: int = 200_000
    step_rule: str = BARZILAI_BORWEIN
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.step_rule not in (ARMIJO, BARZILAI_BORWEIN):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if not 0.0 < self.armijo_c < 1.0:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be positive")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")

    def resolve_tol(self, cfg: ModelConfig) -> float:
        if self.grad_tol is not None:
            return self.grad_tol
        return 1e-8 * cfg.volume


@dataclass
class SolveReport:
    iterations: int
    final_gradient_norm: float
    status: str
    wall_time: float
    energy_history: np.ndarray       # energy per recorded iteration
    gradient_history: np.ndarray     # max-norm gradient per recorded iteration
    step_history: np.ndarray         # accepted step length per iteration (0th entry 0)
    grad_tol: float

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_gradient_norm": self.final_gradient_norm,
            "status": self.status,
            "wall_time": self.wall_time,
            "grad_tol": self.grad_tol,
            "final_energy": float(self.energy_history[-1]) if self.energy_history.size else None,
        }


def minimize(cfg: ModelConfig, opts: SolveOptions, start: np.ndarray) -> tuple[np.ndarray, SolveReport]:
    """Minimize the discrete energy from ``start`` by monotone descent.

    Steepest-descent directions with either plain Armijo backtracking from the
    initial step or a safeguarded Barzilai-Borwein trial step; every accepted
    step satisfies the Armijo decrease, so the energy history is
    non-increasing. Stops on the max-norm of the gradient.
    """
    t0 = time.perf_counter()
    tol = opts.resolve_tol(cfg)
    u = cfg._check_field(start).copy()
    energy = eval_energy(cfg, u).total
    grad = eval_gradient(cfg, u)
    gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0

    energies = [energy]
    gnorms = [gnorm]
    steps = [0.0]
    status = MAX_ITERS
    prev_u: np.ndarray | None = None
    prev_grad: np.ndarray | None = None
    iterations = 0

    for it in range(1, opts.max_iters + 1):
        if gnorm <= tol:
            status = CONVERGED
            break

        gg = float(np.dot(grad, grad))
        alpha = opts.initial_step
        if opts.step_rule == BARZILAI_BORWEIN and prev_u is not None:
            s = u - prev_u
            y = grad - prev_grad
            sy = float(np.dot(s, y))
            if sy > 0.0:
                alpha = min(max(float(np.dot(s, s)) / sy, BB_STEP_MIN), BB_STEP_MAX)

        stalled = False
        while True:
            trial = u - alpha * grad
            e_trial = eval_energy(cfg, trial).total
            if e_trial <= energy - opts.armijo_c * alpha * gg:
                break
            alpha *= opts.backtrack_factor
            if alpha < STALL_STEP:
                stalled = True
                break
        if stalled:
            status = LINE_SEARCH_STALL
            iterations = it - 1
            break

        prev_u, prev_grad = u, grad
        u = trial
        energy = e_trial
        grad = eval_gradient(cfg, u)
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        energies.append(energy)
        gnorms.append(gnorm)
        steps.append(alpha)
        iterations = it
    else:
        iterations = opts.max_iters
    if status == MAX_ITERS and gnorm <= tol:
        status = CONVERGED

    report = SolveReport(
        iterations=iterations,
        final_gradient_norm=gnorm,
        status=status,
        wall_time=time.perf_counter() - t0,
        energy_history=np.array(energies),
        gradient_history=np.array(gnorms),
        step_history=np.array(steps),
        grad_tol=tol,
    )
    return u, report


def lp_distance(cfg: ModelConfig, u: np.ndarray, v: np.ndarray) -> float:
    """Discrete L^p distance between two fields."""
    return float(np.sum(np.abs(u - v) ** cfg.p * cfg.volume) ** (1.0 / cfg.p))


def random_start(cfg: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=cfg.n)


@dataclass
class UniquenessReport:
    """Spread of minimizers across randomized starts."""

    spread: float
    all_converged: bool
    reports: list[SolveReport] = field(repr=False, default_factory=list)
    minimizers: list[np.ndarray] = field(repr=False, default_factory=list)

    @property
    def conclusive(self) -> bool:
        return self.all_converged

    def as_dict(self) -> dict:
        return {
            "spread": self.spread,
            "all_converged": self.all_converged,
            "n_starts": len(self.reports),
            "statuses": [r.status for r in self.reports],
        }


def uniqueness_probe(cfg: ModelConfig, opts: SolveOptions, n_starts: int) -> UniquenessReport:
    """Minimize from seeded random starts and report the max pairwise distance.

    A probe with any non-converged run is inconclusive. Under a strictly
    decreasing source the energy is strictly convex and the spread collapses;
    an energy-neutral detached component keeps whatever the starts put there.
    """
    if n_starts < 2:
        raise ValueError(f"uniqueness probe needs at least 2 starts, got {n_starts}")
    rng = np.random.default_rng(opts.seed)
    minimizers, reports = [], []
    for _ in range(n_starts):
        u0 = random_start(cfg, rng)
        u, rep = minimize(cfg, opts, u0)
        minimizers.append(u)
        reports.append(rep)
    spread = 0.0
    for i in range(n_starts):
        for j in range(i + 1, n_starts):
            spread = max(spread, lp_distance(cfg, minimizers[i], minimizers[j]))
    return UniquenessReport(
        spread=spread,
        all_converged=all(r.converged for r in reports),
        reports=reports,
        minimizers=minimizers,
    )
