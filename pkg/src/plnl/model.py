"""Discrete energy of the coupled local-nonlocal problem.

The energy of a field u over the active cells is

    total = local_term + nonlocal_term - source_term

with the gradient p-Dirichlet energy on local edges (zero anchored at the
boundary faces of the domain), the kernel double sum plus exterior collar mass
on nonlocal cells, and the integrated source potential. The gradient returned
here is the exact derivative of the assembled energy, so descent solvers and
finite-difference checks operate on one consistent object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import NONLOCAL, Partition
from .kernel import CollarMass, NeighborTable

AFFINE = "affine"
MONOTONE_POWER = "monotone_power"


def signed_power(d: np.ndarray, e: float) -> np.ndarray:
    """sign(d) * |d|**e, exactly zero at d = 0 for e > 0."""
    return np.sign(d) * np.abs(d) ** e


@dataclass(frozen=True)
class SourceModel:
    """Source nonlinearity with antiderivative and growth data.

    affine:          value = g(x),                  potential = g(x)*xi
    monotone_power:  value = a(x) - b(x)*sign(xi)*|xi|^q,
                     potential = a(x)*xi - b(x)*|xi|^(q+1)/(q+1)

    Samples are per active cell. The growth bound |value| <= a + b*|xi|^q holds
    by construction (affine: a = |g|, b = 0, q = 0); ``integrability`` is the
    declared exponent of a used by validate_growth.
    """

    form: str
    g: np.ndarray | None = None
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    q: float = 0.0
    integrability: float = math.inf

    def __post_init__(self):
        if self.form == AFFINE:
            if self.g is None:
                raise ValueError("affine source requires g samples")
        elif self.form == MONOTONE_POWER:
            if self.a is None or self.b is None:
                raise ValueError("monotone_power source requires a and b samples")
        else:
            raise ValueError(f"unknown source form {self.form!r}")
        if self.q < 0:
            raise ValueError(f"growth exponent must be nonnegative, got {self.q}")

    def value(self, u: np.ndarray) -> np.ndarray:
        if self.form == AFFINE:
            return np.broadcast_to(self.g, u.shape)
        return self.a - self.b * signed_power(u, self.q)

    def potential(self, u: np.ndarray) -> np.ndarray:
        if self.form == AFFINE:
            return self.g * u
        return self.a * u - self.b * np.abs(u) ** (self.q + 1.0) / (self.q + 1.0)

    def growth_data(self) -> tuple[np.ndarray, np.ndarray, float]:
        if self.form == AFFINE:
            return np.abs(self.g), np.zeros_like(self.g), 0.0
        return self.a, self.b, self.q


def affine_source(g: np.ndarray | float, n: int | None = None) -> SourceModel:
    g = np.full(n, float(g)) if np.isscalar(g) else np.asarray(g, dtype=float)
    return SourceModel(form=AFFINE, g=g)


def monotone_power_source(
    a: np.ndarray | float,
    b: np.ndarray | float,
    q: float,
    n: int | None = None,
    integrability: float = math.inf,
) -> SourceModel:
    a = np.full(n, float(a)) if np.isscalar(a) else np.asarray(a, dtype=float)
    b = np.full(n, float(b)) if np.isscalar(b) else np.asarray(b, dtype=float)
    return SourceModel(form=MONOTONE_POWER, a=a, b=b, q=float(q), integrability=integrability)


@dataclass
class GrowthValidation:
    passed: bool
    violations: list[str]


def validate_growth(source: SourceModel, p: float) -> GrowthValidation:
    """Check the subcritical growth of the source against the energy exponent."""
    a, b, q = source.growth_data()
    violations = []
    if not q < p - 1.0:
        violations.append(f"growth exponent q={q} is not strictly below p-1={p - 1.0}")
    if np.any(b < 0):
        violations.append("coefficient b is negative somewhere")
    p_conj = p / (p - 1.0)
    if not source.integrability > p_conj:
        violations.append(
            f"declared integrability {source.integrability} does not exceed "
            f"the conjugate exponent {p_conj:.6g}"
        )
    return GrowthValidation(passed=not violations, violations=violations)


@dataclass(frozen=True)
class EnergyBreakdown:
    local_term: float
    nonlocal_term: float
    source_term: float

    @property
    def total(self) -> float:
        return self.local_term + self.nonlocal_term - self.source_term

    def as_dict(self) -> dict:
        return {
            "local_term": self.local_term,
            "nonlocal_term": self.nonlocal_term,
            "source_term": self.source_term,
            "total": self.total,
        }


@dataclass
class ModelConfig:
    """Assembled discrete model: partition, kernel data, source and exponent.

    Precomputes the index arrays used by every energy and gradient evaluation.
    ``source=None`` means a zero source (pure structural energy), used by the
    coercivity probe. Exponents at or below 1.1 are rejected: the descent
    behaviour and the finite-difference checks degrade near the degenerate
    limit p -> 1.
    """

    partition: Partition
    table: NeighborTable
    collar: CollarMass
    p: float
    source: SourceModel | None = None
    regularization: float = 0.0

    # assembly arrays, filled in __post_init__
    edge_a: np.ndarray = field(init=False, repr=False)
    edge_b: np.ndarray = field(init=False, repr=False)
    dirichlet_cells: np.ndarray = field(init=False, repr=False)
    pair_i: np.ndarray = field(init=False, repr=False)
    pair_j: np.ndarray = field(init=False, repr=False)
    pair_w: np.ndarray = field(init=False, repr=False)
    psi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.p > 1.1:
            raise ValueError(f"exponent p must exceed 1.1, got {self.p}")
        part = self.partition
        idx = part.active_index
        self.edge_a = idx[part.local_edges[:, 0]]
        self.edge_b = idx[part.local_edges[:, 1]]
        self.dirichlet_cells = idx[part.dirichlet_faces[:, 0]]
        in_domain = self.table.pair_j_active >= 0
        self.pair_i = self.table.pair_i[in_domain]
        self.pair_j = self.table.pair_j_active[in_domain]
        self.pair_w = self.table.weight[in_domain]
        self.psi = self.collar.per_active
        if self.source is not None:
            for arr in (self.source.g, self.source.a, self.source.b):
                if arr is not None and arr.shape != (part.n_active,):
                    raise ValueError("source samples are not shaped to the active cells")

    @property
    def n(self) -> int:
        return self.partition.n_active

    @property
    def h(self) -> float:
        return self.partition.h

    @property
    def volume(self) -> float:
        return self.partition.cell_volume

    def _check_field(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise ValueError(f"field has shape {u.shape}, expected ({self.n},)")
        return u

    # edge coefficients: interior gradient edges span one cell each; Dirichlet
    # half-edges anchor the zero at the boundary face, half a cell away
    @property
    def _edge_coef(self) -> float:
        return self.h ** (self.partition.dimension - self.p)

    @property
    def _dir_coef(self) -> float:
        return (0.5 * self.h) ** (1.0 - self.p) * self.h ** (self.partition.dimension - 1)

    def _edge_energy(self, d: np.ndarray) -> np.ndarray:
        if self.regularization > 0.0:
            return (d * d + self.regularization**2) ** (0.5 * self.p)
        return np.abs(d) ** self.p

    def _edge_slope(self, d: np.ndarray) -> np.ndarray:
        if self.regularization > 0.0:
            return d * (d * d + self.regularization**2) ** (0.5 * self.p - 1.0)
        return signed_power(d, self.p - 1.0)


def eval_energy(cfg: ModelConfig, u: np.ndarray) -> EnergyBreakdown:
    """Evaluate the split energy of a field over the active cells."""
    u = cfg._check_field(u)
    p = cfg.p

    local = 0.0
    if cfg.edge_a.size:
        d = u[cfg.edge_a] - u[cfg.edge_b]
        local += cfg._edge_coef * float(np.sum(cfg._edge_energy(d)))
    if cfg.dirichlet_cells.size:
        local += cfg._dir_coef * float(np.sum(cfg._edge_energy(u[cfg.dirichlet_cells])))
    local /= p

    nonloc = 0.0
    if cfg.pair_w.size:
        d = u[cfg.pair_i] - u[cfg.pair_j]
        nonloc += float(np.sum(cfg.pair_w * np.abs(d) ** p))
    nonloc += cfg.volume * float(np.sum(cfg.psi * np.abs(u) ** p))
    nonloc /= p

    src = 0.0
    if cfg.source is not None:
        src = cfg.volume * float(np.sum(cfg.source.potential(u)))
    return EnergyBreakdown(local_term=local, nonlocal_term=nonloc, source_term=src)


def eval_gradient(cfg: ModelConfig, u: np.ndarray) -> np.ndarray:
    """Exact gradient of eval_energy with respect to the field values.

    Nonlocal cells collect contributions from both slots of the pair sum
    (each nonlocal-nonlocal pair is stored in both orders); local cells couple
    to the nonlocal region only through pairs owned by nonlocal cells.
    """
    u = cfg._check_field(u)
    g = np.zeros_like(u)

    if cfg.edge_a.size:
        t = cfg._edge_coef * cfg._edge_slope(u[cfg.edge_a] - u[cfg.edge_b])
        np.add.at(g, cfg.edge_a, t)
        np.add.at(g, cfg.edge_b, -t)
    if cfg.dirichlet_cells.size:
        t = cfg._dir_coef * cfg._edge_slope(u[cfg.dirichlet_cells])
        np.add.at(g, cfg.dirichlet_cells, t)

    if cfg.pair_w.size:
        t = cfg.pair_w * signed_power(u[cfg.pair_i] - u[cfg.pair_j], cfg.p - 1.0)
        np.add.at(g, cfg.pair_i, t)
        np.add.at(g, cfg.pair_j, -t)
    g += cfg.volume * cfg.psi * signed_power(u, cfg.p - 1.0)

    if cfg.source is not None:
        g -= cfg.volume * cfg.source.value(u)
    return g


def eval_seminorm(cfg: ModelConfig, u: np.ndarray, restrict: np.ndarray) -> float:
    """Kernel double sum over ordered pairs with both endpoints in ``restrict``.

    ``restrict`` holds active indices of nonlocal cells; the exterior mass and
    the local edges do not enter, so per-component constants yield exactly 0.
    """
    u = cfg._check_field(u)
    restrict = np.asarray(restrict, dtype=np.int64)
    if restrict.size and np.any(cfg.partition.active_class[restrict] != NONLOCAL):
        raise ValueError("restrict must contain only nonlocal cells")
    member = np.zeros(cfg.n, dtype=bool)
    member[restrict] = True
    keep = member[cfg.pair_i] & member[cfg.pair_j]
    if not keep.any():
        return 0.0
    d = u[cfg.pair_i[keep]] - u[cfg.pair_j[keep]]
    return float(np.sum(cfg.pair_w[keep] * np.abs(d) ** cfg.p))


@dataclass
class StrongResidual:
    values: np.ndarray
    max_norm: float


def strong_residual(cfg: ModelConfig, u: np.ndarray) -> StrongResidual:
    """Per-cell defect of the coupled strong-form equations.

    The energy gradient divided by the cell volume: at local cells this is the
    discrete local equation defect, at nonlocal cells the nonlocal one.
    """
    values = eval_gradient(cfg, u) / cfg.volume
    return StrongResidual(values=values, max_norm=float(np.max(np.abs(values))) if values.size else 0.0)
