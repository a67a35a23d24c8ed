"""Radial interaction kernels, neighbor tables and exterior collar mass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import COLLAR, LOCAL, NONLOCAL, Partition, _freeze

INDICATOR = "indicator"
POLYNOMIAL_BUMP = "polynomial_bump"


@dataclass(frozen=True)
class KernelProfile:
    """Radial kernel with compact support radius.

    indicator:        j(r) = c                   for r <= R
    polynomial_bump:  j(r) = c * (1 - r^2/R^2)^k for r <= R

    and j(r) = 0 beyond R. Pair evaluation depends on |x - y| only, so the
    kernel is symmetric by construction.
    """

    shape: str
    amplitude: float
    support_radius: float
    bump_exponent: int | None = None

    def __post_init__(self):
        if self.shape not in (INDICATOR, POLYNOMIAL_BUMP):
            raise ValueError(f"unknown kernel shape {self.shape!r}")
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")
        if not self.support_radius > 0:
            raise ValueError("support_radius must be positive")
        if self.shape == POLYNOMIAL_BUMP:
            if self.bump_exponent is None or int(self.bump_exponent) < 1:
                raise ValueError("polynomial_bump requires bump_exponent >= 1")
            object.__setattr__(self, "bump_exponent", int(self.bump_exponent))

    def radial(self, r):
        """Evaluate j(r) elementwise."""
        r = np.asarray(r, dtype=float)
        inside = r <= self.support_radius
        if self.shape == INDICATOR:
            return np.where(inside, self.amplitude, 0.0)
        t = 1.0 - (r / self.support_radius) ** 2
        return np.where(inside, self.amplitude * np.maximum(t, 0.0) ** self.bump_exponent, 0.0)


@dataclass
class KernelValidation:
    """Result of the reach check: j must stay positive up to twice delta."""

    passed: bool
    constant: float          # attained minimum of j on [0, 2*delta]
    violations: list[str]


def validate_kernel(profile: KernelProfile, delta: float) -> KernelValidation:
    """Check that the kernel has a positive lower bound on [0, 2*delta].

    The indicator passes iff R >= 2*delta; the polynomial bump vanishes at its
    support radius and therefore needs R > 2*delta strictly. Both kernels are
    non-increasing, so the attained minimum is j(2*delta).
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    cmin = float(profile.radial(2.0 * delta))
    passed = cmin > 0.0
    violations = []
    if not passed:
        violations.append(
            f"kernel vanishes within reach 2*delta={2 * delta:.6g} "
            f"(support radius {profile.support_radius:.6g})"
        )
    return KernelValidation(passed=passed, constant=cmin, violations=violations)


@dataclass
class NeighborTable:
    """Interaction pairs of nonlocal cells, one row per ordered pair.

    Row i pairs a nonlocal cell with a local, nonlocal or collar cell within
    the support radius. Weights carry both quadrature volumes, w = j(r)*h^(2*dim).
    Nonlocal-nonlocal pairs appear in both orders with identical weight;
    pairs into local or collar cells appear once, owned by the nonlocal cell.
    """

    pair_i: np.ndarray          # active index of the nonlocal cell
    pair_i_flat: np.ndarray     # flat grid index of the same cell
    pair_j_flat: np.ndarray     # flat grid index of the partner
    pair_j_active: np.ndarray   # active index of the partner, -1 for collar
    weight: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.weight.size


def _support_offsets(profile: KernelProfile, partition: Partition):
    """Integer offsets with positive kernel weight, plus their radial values."""
    h = partition.h
    m = int(np.ceil(profile.support_radius / h))
    ranges = [np.arange(-m, m + 1)] * partition.dimension
    mesh = np.meshgrid(*ranges, indexing="ij")
    offs = np.stack([g.ravel() for g in mesh], axis=1)
    offs = offs[np.any(offs != 0, axis=1)]
    dist = np.sqrt(np.sum((offs * h) ** 2, axis=1))
    jval = profile.radial(dist)
    keep = jval > 0.0
    return offs[keep], jval[keep]


def build_neighbors(partition: Partition, profile: KernelProfile) -> NeighborTable:
    """Enumerate kernel pairs by bounded window search around nonlocal cells.

    Distances are evaluated on integer offsets times h, so reciprocal pairs
    get bit-identical weights and the support cutoff is applied consistently.
    """
    offs, jval = _support_offsets(profile, partition)
    nl_flat = partition.cells_of(NONLOCAL)
    dim = partition.dimension
    if nl_flat.size == 0 or offs.shape[0] == 0:
        empty = np.empty(0, dtype=np.int64)
        return NeighborTable(empty, empty, empty, empty, np.empty(0))

    shape = partition.shape
    coords = np.stack(np.unravel_index(nl_flat, shape), axis=1)
    nbr = coords[:, None, :] + offs[None, :, :]          # (n_nl, n_off, dim)
    valid = np.ones(nbr.shape[:2], dtype=bool)
    for ax in range(dim):
        valid &= (nbr[..., ax] >= 0) & (nbr[..., ax] < shape[ax])

    flat_nbr = np.zeros(nbr.shape[:2], dtype=np.int64)
    flat_nbr[valid] = np.ravel_multi_index(tuple(nbr[valid].T), shape)
    cls = np.full(nbr.shape[:2], -1, dtype=np.int8)
    cls[valid] = partition.cell_class[flat_nbr[valid]]
    keep = valid & ((cls == LOCAL) | (cls == NONLOCAL) | (cls == COLLAR))

    w_per_off = jval * partition.h ** (2 * dim)
    pi_flat = np.broadcast_to(nl_flat[:, None], keep.shape)[keep]
    pj_flat = flat_nbr[keep]
    weight = np.broadcast_to(w_per_off[None, :], keep.shape)[keep]
    return NeighborTable(
        pair_i=_freeze(partition.active_index[pi_flat]),
        pair_i_flat=_freeze(pi_flat.copy()),
        pair_j_flat=_freeze(pj_flat),
        pair_j_active=_freeze(partition.active_index[pj_flat]),
        weight=_freeze(weight.copy()),
    )


@dataclass
class CollarMass:
    """Aggregated kernel weight from each nonlocal cell into the exterior collar.

    Stored over active cells (zero at local positions) so energy assembly can
    sum over one index set; this realizes the pinned zero extension outside
    the domain.
    """

    per_active: np.ndarray

    def nonlocal_values(self, partition: Partition) -> np.ndarray:
        return self.per_active[partition.active_index[partition.cells_of(NONLOCAL)]]


def collar_mass(partition: Partition, profile: KernelProfile) -> CollarMass:
    """Sum kernel weights from nonlocal cells into collar cells, times h^dim.

    Raises if the partition cannot hold the full collar: either it was built
    with a smaller kernel radius than the profile's support, or a nonlocal
    cell sits so close to the bounding box that exterior cell centers within
    the support would fall off the grid.
    """
    R = profile.support_radius
    h = partition.h
    if partition.collar_radius < R * (1.0 - 1e-12):
        raise ValueError(
            f"collar band built for radius {partition.collar_radius} is narrower "
            f"than kernel support {R}"
        )
    nl_flat = partition.cells_of(NONLOCAL)
    psi = np.zeros(partition.n_active)
    if nl_flat.size:
        nl_centers = partition.centers[nl_flat]
        for ax, (lo, hi) in enumerate(partition.grid.bounding_box):
            margin = np.minimum(nl_centers[:, ax] - lo, hi - nl_centers[:, ax])
            if np.any(margin < R - 0.5 * h - 1e-12 * max(1.0, R)):
                raise ValueError(
                    "collar band truncated by the bounding box: a nonlocal cell lies "
                    f"within the kernel support of the axis-{ax} box boundary"
                )

        offs, jval = _support_offsets(profile, partition)
        if offs.shape[0]:
            shape = partition.shape
            coords = np.stack(np.unravel_index(nl_flat, shape), axis=1)
            nbr = coords[:, None, :] + offs[None, :, :]
            valid = np.ones(nbr.shape[:2], dtype=bool)
            for ax in range(partition.dimension):
                valid &= (nbr[..., ax] >= 0) & (nbr[..., ax] < shape[ax])
            flat_nbr = np.zeros(nbr.shape[:2], dtype=np.int64)
            flat_nbr[valid] = np.ravel_multi_index(tuple(nbr[valid].T), shape)
            is_collar = valid & (
                np.where(valid, partition.cell_class[flat_nbr], -1) == COLLAR
            )
            contrib = np.where(is_collar, jval[None, :], 0.0) * partition.cell_volume
            psi[partition.active_index[nl_flat]] = contrib.sum(axis=1)
    return CollarMass(per_active=_freeze(psi))


@dataclass
class ComponentLabels:
    """Connected components of the nonlocal-nonlocal interaction graph."""

    labels: np.ndarray       # per active cell, -1 for local cells
    n_components: int

    def members(self, component: int, partition: Partition) -> np.ndarray:
        return partition.active_cells[self.labels == component]


def kernel_components(partition: Partition, table: NeighborTable) -> ComponentLabels:
    """Label nonlocal cells by component of the nonlocal pair graph."""
    n = partition.n_active
    labels = np.full(n, -1, dtype=np.int64)
    nl_active = partition.active_index[partition.cells_of(NONLOCAL)]
    if nl_active.size == 0:
        return ComponentLabels(labels=_freeze(labels), n_components=0)

    parent = np.arange(n)

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    both_nl = table.pair_j_active >= 0
    if both_nl.any():
        nl_mask = np.zeros(n, dtype=bool)
        nl_mask[nl_active] = True
        both_nl &= nl_mask[np.where(both_nl, table.pair_j_active, 0)]
    for a, b in zip(table.pair_i[both_nl], table.pair_j_active[both_nl]):
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            parent[ra] = rb

    roots = {}
    for i in nl_active:
        r = find(int(i))
        if r not in roots:
            roots[r] = len(roots)
        labels[i] = roots[r]
    return ComponentLabels(labels=_freeze(labels), n_components=len(roots))
