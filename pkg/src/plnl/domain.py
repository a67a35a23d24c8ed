"""Cartesian grids, region classification and distance-layer coverings.

The computational domain is a union of axis-aligned boxes split into a local
region (gradient energy) and a nonlocal region (kernel energy). Cells of a
uniform grid are classified by their center point; a collar of exterior cells
surrounds the nonlocal region so the zero extension outside the domain can be
assembled by quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

# cell classes
LOCAL = 0
NONLOCAL = 1
COLLAR = 2
OUTSIDE = 3

CLASS_NAMES = {LOCAL: "local", NONLOCAL: "nonlocal", COLLAR: "collar", OUTSIDE: "outside"}

Box = tuple[tuple[float, float], ...]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _as_box(box) -> Box:
    out = tuple((float(lo), float(hi)) for lo, hi in box)
    for lo, hi in out:
        if not hi > lo:
            raise ValueError(f"degenerate box interval [{lo}, {hi}]")
    return out


def box_distance(a: Box, b: Box) -> float:
    """Euclidean distance between two closed axis-aligned boxes."""
    gaps = [max(0.0, max(alo - bhi, blo - ahi)) for (alo, ahi), (blo, bhi) in zip(a, b)]
    return float(np.sqrt(sum(g * g for g in gaps)))


def _boxes_overlap(a: Box, b: Box) -> bool:
    return all(alo < bhi and blo < ahi for (alo, ahi), (blo, bhi) in zip(a, b))


@dataclass(frozen=True)
class GridSpec:
    """Uniform Cartesian grid over a bounding box.

    Side lengths must be positive integer multiples of the spacing (relative
    tolerance 1e-12); cell centers sit at half-integer offsets.
    """

    dimension: int
    bounding_box: Box
    spacing: float

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "bounding_box", _as_box(self.bounding_box))
        if len(self.bounding_box) != self.dimension:
            raise ValueError("bounding_box length does not match dimension")
        for lo, hi in self.bounding_box:
            ratio = (hi - lo) / self.spacing
            if abs(ratio - round(ratio)) > 1e-12 * max(1.0, ratio) or round(ratio) < 1:
                raise ValueError(
                    f"box side [{lo}, {hi}] is not a positive multiple of spacing {self.spacing}"
                )

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(
            int(round((hi - lo) / self.spacing)) for lo, hi in self.bounding_box
        )

    def axis_centers(self, axis: int) -> np.ndarray:
        lo, _ = self.bounding_box[axis]
        n = self.shape[axis]
        return lo + (np.arange(n) + 0.5) * self.spacing


@dataclass(frozen=True)
class RegionSpec:
    """Local and nonlocal subdomains as unions of axis-aligned boxes."""

    local_boxes: tuple[Box, ...]
    nonlocal_boxes: tuple[Box, ...]

    def __post_init__(self):
        object.__setattr__(self, "local_boxes", tuple(_as_box(b) for b in self.local_boxes))
        object.__setattr__(
            self, "nonlocal_boxes", tuple(_as_box(b) for b in self.nonlocal_boxes)
        )
        for lb in self.local_boxes:
            for nb in self.nonlocal_boxes:
                if _boxes_overlap(lb, nb):
                    raise ValueError(f"local box {lb} overlaps nonlocal box {nb}")


@dataclass
class Partition:
    """Classified grid with Dirichlet/Neumann faces and active-cell indexing.

    Active cells (local plus nonlocal) carry the unknowns; fields are arrays
    over active cells in flat lexicographic order. All arrays are read-only
    after construction.
    """

    grid: GridSpec
    shape: tuple[int, ...]
    cell_class: np.ndarray          # int8 per flat cell
    centers: np.ndarray             # (n_cells, dim)
    collar_radius: float            # kernel radius used for the collar band
    active_cells: np.ndarray        # flat indices of local+nonlocal cells
    active_index: np.ndarray        # flat cell -> active index, -1 if inactive
    dirichlet_faces: np.ndarray     # (nf, 3): flat cell, axis, side (+-1)
    neumann_faces: np.ndarray       # (nf, 3)
    local_edges: np.ndarray         # (ne, 2) flat indices, local-local faces once

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    @property
    def h(self) -> float:
        return self.grid.spacing

    @property
    def cell_volume(self) -> float:
        return self.grid.spacing ** self.grid.dimension

    @property
    def n_cells(self) -> int:
        return self.cell_class.size

    @property
    def n_active(self) -> int:
        return self.active_cells.size

    @property
    def active_centers(self) -> np.ndarray:
        return self.centers[self.active_cells]

    @property
    def active_class(self) -> np.ndarray:
        return self.cell_class[self.active_cells]

    def cells_of(self, cls: int) -> np.ndarray:
        return np.flatnonzero(self.cell_class == cls)

    def count(self, cls: int) -> int:
        return int(np.count_nonzero(self.cell_class == cls))


def _classify(centers: np.ndarray, boxes: tuple[Box, ...]) -> np.ndarray:
    """Half-open membership lo <= c < hi per axis, any box."""
    mask = np.zeros(centers.shape[0], dtype=bool)
    for box in boxes:
        inside = np.ones(centers.shape[0], dtype=bool)
        for ax, (lo, hi) in enumerate(box):
            inside &= (centers[:, ax] >= lo) & (centers[:, ax] < hi)
        mask |= inside
    return mask


def build_grid(spec: GridSpec, regions: RegionSpec, kernel_radius: float) -> Partition:
    """Build the classified partition for a grid, regions and kernel radius.

    Every cell is classified by its center: local, nonlocal, collar (exterior
    cells within ``kernel_radius + h`` of a nonlocal cell center) or outside.
    Dirichlet faces separate local cells from the exterior; Neumann faces
    separate local from nonlocal cells.
    """
    if kernel_radius < 0:
        raise ValueError(f"kernel_radius must be nonnegative, got {kernel_radius}")
    for box in regions.local_boxes + regions.nonlocal_boxes:
        if len(box) != spec.dimension:
            raise ValueError("region box dimension does not match grid dimension")
        for ax, (lo, hi) in enumerate(box):
            blo, bhi = spec.bounding_box[ax]
            if lo < blo - 1e-12 or hi > bhi + 1e-12:
                raise ValueError(f"region box {box} exceeds bounding box")

    shape = spec.shape
    axes = [spec.axis_centers(ax) for ax in range(spec.dimension)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    n_cells = centers.shape[0]

    local_mask = _classify(centers, regions.local_boxes)
    nonlocal_mask = _classify(centers, regions.nonlocal_boxes) & ~local_mask

    cell_class = np.full(n_cells, OUTSIDE, dtype=np.int8)
    cell_class[local_mask] = LOCAL
    cell_class[nonlocal_mask] = NONLOCAL

    if not (local_mask.any() or nonlocal_mask.any()):
        raise ValueError("empty domain: no cell center falls in any region box")

    # collar band of width kernel_radius + h around the nonlocal cells
    exterior = np.flatnonzero(cell_class == OUTSIDE)
    nl_cells = np.flatnonzero(cell_class == NONLOCAL)
    if exterior.size and nl_cells.size:
        tree = cKDTree(centers[nl_cells])
        d, _ = tree.query(centers[exterior])
        band = (kernel_radius + spec.spacing) * (1.0 + 1e-12)
        cell_class[exterior[d <= band]] = COLLAR

    active_cells = np.flatnonzero((cell_class == LOCAL) | (cell_class == NONLOCAL))
    active_index = np.full(n_cells, -1, dtype=np.int64)
    active_index[active_cells] = np.arange(active_cells.size)

    # faces of local cells
    grid_class = cell_class.reshape(shape)
    dirichlet, neumann, edges = [], [], []
    local_flat = np.flatnonzero(cell_class == LOCAL)
    coords = np.stack(np.unravel_index(local_flat, shape), axis=1)
    for ax in range(spec.dimension):
        for side in (-1, 1):
            nbr = coords.copy()
            nbr[:, ax] += side
            inside = (nbr[:, ax] >= 0) & (nbr[:, ax] < shape[ax])
            nbr_class = np.full(local_flat.size, OUTSIDE, dtype=np.int8)
            if inside.any():
                flat_nbr = np.ravel_multi_index(tuple(nbr[inside].T), shape)
                nbr_class[inside] = grid_class.ravel()[flat_nbr]
            ext = (nbr_class == COLLAR) | (nbr_class == OUTSIDE)
            for c in local_flat[ext]:
                dirichlet.append((c, ax, side))
            for c in local_flat[nbr_class == NONLOCAL]:
                neumann.append((c, ax, side))
            if side == 1:
                both = inside & (nbr_class == LOCAL)
                if both.any():
                    flat_nbr = np.ravel_multi_index(tuple(nbr[both].T), shape)
                    edges.extend(zip(local_flat[both], flat_nbr))

    part = Partition(
        grid=spec,
        shape=shape,
        cell_class=_freeze(cell_class),
        centers=_freeze(centers),
        collar_radius=float(kernel_radius),
        active_cells=_freeze(active_cells),
        active_index=_freeze(active_index),
        dirichlet_faces=_freeze(np.array(dirichlet, dtype=np.int64).reshape(-1, 3)),
        neumann_faces=_freeze(np.array(neumann, dtype=np.int64).reshape(-1, 3)),
        local_edges=_freeze(np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)),
    )
    return part


@dataclass
class DeltaCover:
    """Layered covering of the nonlocal cells by bands reachable within delta."""

    delta: float
    layers: tuple[np.ndarray, ...]
    exhausted: bool

    @property
    def covered(self) -> np.ndarray:
        if not self.layers:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(self.layers)


def delta_cover(partition: Partition, delta: float) -> DeltaCover:
    """Expand the nonlocal region in layers of reach strictly below delta.

    Layer 0 holds nonlocal cells at center distance < delta from the local
    cell set; layer j holds remaining cells at distance < delta from the union
    of earlier layers. The covering is exhausted when every nonlocal cell is
    reached.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    nl = partition.cells_of(NONLOCAL)
    if nl.size == 0:
        return DeltaCover(delta=float(delta), layers=(), exhausted=True)
    nl_centers = partition.centers[nl]
    local = partition.cells_of(LOCAL)

    if local.size:
        seed_dist, _ = cKDTree(partition.centers[local]).query(nl_centers)
    else:
        seed_dist = np.full(nl.size, np.inf)

    covered = np.zeros(nl.size, dtype=bool)
    best = seed_dist  # distance to the seed, then to the union of layers
    layers: list[np.ndarray] = []
    while True:
        frontier = ~covered & (best < delta)
        if not frontier.any():
            break
        layers.append(np.sort(nl[frontier]))
        covered |= frontier
        if covered.all():
            break
        d, _ = cKDTree(nl_centers[frontier]).query(nl_centers[~covered])
        nxt = np.full(nl.size, np.inf)
        nxt[~covered] = d
        best = nxt
    return DeltaCover(delta=float(delta), layers=tuple(layers), exhausted=bool(covered.all()))


@dataclass
class AssumptionReport:
    """Outcome of the three structural checks on the partition."""

    local_connected: bool
    n_local_components: int
    cover_exhausted: bool
    n_uncovered: int
    separation_ok: bool
    separation: float | None   # min center distance minus h; None if vacuous
    delta: float
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.local_connected and self.cover_exhausted and self.separation_ok


def _count_components(nodes: np.ndarray, edges: np.ndarray) -> int:
    index = {int(c): i for i, c in enumerate(nodes)}
    parent = list(range(len(nodes)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in edges:
        ra, rb = find(index[int(a)]), find(index[int(b)])
        if ra != rb:
            parent[ra] = rb
    return len({find(i) for i in range(len(nodes))})


def check_assumptions(partition: Partition, delta: float) -> AssumptionReport:
    """Check local connectivity, delta-cover exhaustion and subdomain distance.

    Violations are reported, not raised; empty subdomains make the affected
    checks vacuous so degenerate pure-local and pure-nonlocal configurations
    remain usable for oracle comparisons.
    """
    local = partition.cells_of(LOCAL)
    nl = partition.cells_of(NONLOCAL)
    violations: list[str] = []

    if local.size == 0:
        local_connected, n_comp = True, 0
    else:
        n_comp = _count_components(local, partition.local_edges)
        local_connected = n_comp == 1
        if not local_connected:
            violations.append(
                f"assumption (1): local region splits into {n_comp} face-connected components"
            )

    cover = delta_cover(partition, delta)
    n_uncovered = int(nl.size - cover.covered.size)
    if not cover.exhausted:
        violations.append(
            f"assumption (2): delta cover leaves {n_uncovered} nonlocal cells unreachable at delta={delta}"
        )

    if local.size == 0 or nl.size == 0:
        separation_ok, separation = True, None
    else:
        d, _ = cKDTree(partition.centers[local]).query(partition.centers[nl])
        separation = float(d.min() - partition.h)
        separation_ok = separation < delta
        if not separation_ok:
            violations.append(
                f"assumption (3): subdomain distance {separation:.6g} is not below delta={delta}"
            )

    return AssumptionReport(
        local_connected=local_connected,
        n_local_components=n_comp,
        cover_exhausted=cover.exhausted,
        n_uncovered=n_uncovered,
        separation_ok=separation_ok,
        separation=separation,
        delta=float(delta),
        violations=violations,
    )
