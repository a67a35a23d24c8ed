"""Numerical verification probes: coercivity, null space, gradient consistency,
the p=2 linear oracle and manufactured convergence studies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .domain import GridSpec, NONLOCAL, Partition, RegionSpec, build_grid
from .kernel import (
    CollarMass,
    KernelProfile,
    NeighborTable,
    build_neighbors,
    collar_mass,
    kernel_components,
)
from .model import (
    ModelConfig,
    affine_source,
    eval_energy,
    eval_gradient,
    eval_seminorm,
    signed_power,
)
from .solver import CONVERGED, SolveOptions, minimize


# ---------------------------------------------------------------------------
# coercivity constant


@dataclass
class CoercivityEstimate:
    """Smallest structural energy found on the unit discrete L^p sphere."""

    c_est: float
    minimizer: np.ndarray | None
    n_starts: int
    start_values: list[float]
    start_converged: list[bool]
    conclusive: bool

    def as_dict(self) -> dict:
        return {
            "c_est": self.c_est,
            "n_starts": self.n_starts,
            "start_values": self.start_values,
            "start_converged": self.start_converged,
            "conclusive": self.conclusive,
        }


def _lp_norm_p(cfg: ModelConfig, u: np.ndarray) -> float:
    return float(np.sum(np.abs(u) ** cfg.p) * cfg.volume)


def _project_sphere(cfg: ModelConfig, u: np.ndarray) -> np.ndarray:
    n = _lp_norm_p(cfg, u)
    if n == 0.0:
        raise ValueError("cannot project the zero field to the unit sphere")
    return u / n ** (1.0 / cfg.p)


def _structural_energy(cfg: ModelConfig, u: np.ndarray) -> float:
    e = eval_energy(cfg, u)
    return e.local_term + e.nonlocal_term


def _sphere_descent(
    cfg: ModelConfig, opts: SolveOptions, start: np.ndarray
) -> tuple[np.ndarray, float, bool]:
    """Projected descent for the structural energy on the unit L^p sphere.

    The projected residual grad - value * d(norm^p) vanishes at constrained
    stationary points because the structural energy is p-homogeneous.
    """
    tol = opts.resolve_tol(cfg)
    p, vol = cfg.p, cfg.volume
    u = _project_sphere(cfg, start)
    value = _structural_energy(cfg, u)
    prev_u: np.ndarray | None = None
    prev_r: np.ndarray | None = None
    for _ in range(opts.max_iters):
        grad = eval_gradient(cfg, u)
        r = grad - value * p * signed_power(u, p - 1.0) * vol
        if float(np.max(np.abs(r))) <= tol:
            return u, value, True
        rr = float(np.dot(r, r))
        alpha = opts.initial_step
        if prev_u is not None:
            s = u - prev_u
            y = r - prev_r
            sy = float(np.dot(s, y))
            if sy > 0.0:
                alpha = min(max(float(np.dot(s, s)) / sy, 1e-12), 1e8)
        while True:
            v = _project_sphere(cfg, u - alpha * r)
            val_v = _structural_energy(cfg, v)
            if val_v <= value - opts.armijo_c * alpha * rr:
                break
            alpha *= opts.backtrack_factor
            if alpha < 1e-18:
                return u, value, False
        prev_u, prev_r = u, r
        u, value = v, val_v
    return u, value, False


def coercivity_constant(
    cfg: ModelConfig, n_starts: int, opts: SolveOptions
) -> CoercivityEstimate:
    """Estimate the best constant in the structural lower bound by multi-start
    projected descent over the unit discrete L^p sphere.

    Starts are seeded random fields plus one constant field per component of
    the nonlocal interaction graph, which catch detached zero-energy pieces.
    """
    if cfg.source is not None:
        raise ValueError("coercivity probe expects a model without source")
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")

    rng = np.random.default_rng(opts.seed)
    starts = [rng.uniform(-1.0, 1.0, size=cfg.n) for _ in range(n_starts)]
    comps = kernel_components(cfg.partition, cfg.table)
    for c in range(comps.n_components):
        e = np.zeros(cfg.n)
        e[comps.labels == c] = 1.0
        starts.append(e)

    values, converged, fields = [], [], []
    for s in starts:
        u, value, ok = _sphere_descent(cfg, opts, s)
        values.append(value)
        converged.append(ok)
        fields.append(u)

    ok_idx = [i for i, ok in enumerate(converged) if ok]
    conclusive = bool(ok_idx)
    if conclusive:
        best = min(ok_idx, key=lambda i: values[i])
        c_est, minimizer = values[best], fields[best]
    else:
        c_est, minimizer = float("nan"), None
    return CoercivityEstimate(
        c_est=c_est,
        minimizer=minimizer,
        n_starts=len(starts),
        start_values=values,
        start_converged=converged,
        conclusive=conclusive,
    )


# ---------------------------------------------------------------------------
# null space of the kernel seminorm


@dataclass
class NullspaceReport:
    n_components: int
    zero_on_constants: bool
    positive_on_perturbations: bool
    matches_kernel_components: bool | None
    passed: bool

    def as_dict(self) -> dict:
        return {
            "n_components": self.n_components,
            "zero_on_constants": self.zero_on_constants,
            "positive_on_perturbations": self.positive_on_perturbations,
            "matches_kernel_components": self.matches_kernel_components,
            "passed": self.passed,
        }


def _restricted_components(cfg: ModelConfig, restrict: np.ndarray) -> list[np.ndarray]:
    member = np.zeros(cfg.n, dtype=bool)
    member[restrict] = True
    parent = {int(i): int(i) for i in restrict}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    keep = member[cfg.pair_i] & member[cfg.pair_j]
    for a, b in zip(cfg.pair_i[keep], cfg.pair_j[keep]):
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            parent[ra] = rb
    groups: dict[int, list[int]] = {}
    for i in sorted(parent):
        groups.setdefault(find(i), []).append(i)
    return [np.array(g, dtype=np.int64) for g in groups.values()]


def nullspace_check(cfg: ModelConfig, restrict: np.ndarray) -> NullspaceReport:
    """Verify that the seminorm vanishes exactly on per-component constants
    and is positive once any component with a pair is perturbed."""
    restrict = np.asarray(restrict, dtype=np.int64)
    comps = _restricted_components(cfg, restrict)

    u = np.zeros(cfg.n)
    for k, members in enumerate(comps):
        u[members] = float(k + 1)
    zero_ok = eval_seminorm(cfg, u, restrict) == 0.0

    positive_ok = True
    for members in comps:
        if members.size < 2:
            continue
        v = u.copy()
        v[members[0]] += 1.0
        if not eval_seminorm(cfg, v, restrict) > 0.0:
            positive_ok = False

    matches = None
    nl_active = cfg.partition.active_index[cfg.partition.cells_of(NONLOCAL)]
    if restrict.size == nl_active.size and np.array_equal(np.sort(restrict), np.sort(nl_active)):
        matches = kernel_components(cfg.partition, cfg.table).n_components == len(comps)

    passed = zero_ok and positive_ok and matches is not False
    return NullspaceReport(
        n_components=len(comps),
        zero_on_constants=zero_ok,
        positive_on_perturbations=positive_ok,
        matches_kernel_components=matches,
        passed=passed,
    )


# ---------------------------------------------------------------------------
# gradient consistency


@dataclass
class GradientCheckReport:
    max_rel_error: float
    errors: list[float]

    def as_dict(self) -> dict:
        return {"max_rel_error": self.max_rel_error, "n_fields": len(self.errors)}


def tie_avoiding_field(cfg: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    """Random field with neighbor differences and magnitudes bounded away from
    zero, so finite differences stay accurate for exponents below 2."""
    n = cfg.n
    levels = (rng.permutation(n) + 0.618) / n * 2.0 - 1.0
    return levels


def gradient_check(
    cfg: ModelConfig, n_fields: int, seed: int = 0
) -> GradientCheckReport:
    """Compare assembled gradients against central finite differences of the
    energy along random directions; returns the worst relative mismatch."""
    if n_fields < 1:
        raise ValueError("n_fields must be at least 1")
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(n_fields):
        if cfg.p < 2.0:
            u = tie_avoiding_field(cfg, rng)
        else:
            u = rng.uniform(-1.0, 1.0, size=cfg.n)
        v = rng.uniform(-1.0, 1.0, size=cfg.n)
        v /= np.max(np.abs(v))
        eps = 1e-6 * (1.0 + float(np.max(np.abs(u))))
        fd = (eval_energy(cfg, u + eps * v).total - eval_energy(cfg, u - eps * v).total) / (2 * eps)
        exact = float(np.dot(eval_gradient(cfg, u), v))
        denom = max(abs(fd), abs(exact), 1e-30)
        errors.append(abs(fd - exact) / denom)
    return GradientCheckReport(max_rel_error=float(max(errors)), errors=errors)


# ---------------------------------------------------------------------------
# p = 2 linear oracle


class SingularSystemError(RuntimeError):
    """The quadratic structural energy has a nontrivial null space."""


def assemble_p2_system(cfg: ModelConfig) -> tuple[sp.csr_matrix, np.ndarray]:
    """Assemble the symmetric linear system of the quadratic (p=2) energy from
    the same edge, pair and collar weights used by the evaluators."""
    if cfg.p != 2.0:
        raise ValueError("linear oracle requires p = 2")
    if cfg.source is None or cfg.source.form != "affine":
        raise ValueError("linear oracle requires an affine source")
    if cfg.regularization != 0.0:
        raise ValueError("linear oracle requires zero regularization")

    n = cfg.n
    rows, cols, vals = [], [], []

    def add(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    c_edge = cfg._edge_coef
    for a, b in zip(cfg.edge_a, cfg.edge_b):
        add(a, a, c_edge)
        add(b, b, c_edge)
        add(a, b, -c_edge)
        add(b, a, -c_edge)
    c_dir = cfg._dir_coef
    for i in cfg.dirichlet_cells:
        add(i, i, c_dir)
    for i, j, w in zip(cfg.pair_i, cfg.pair_j, cfg.pair_w):
        add(i, i, w)
        add(j, j, w)
        add(i, j, -w)
        add(j, i, -w)
    for i in np.flatnonzero(cfg.psi):
        add(i, i, cfg.psi[i] * cfg.volume)

    H = sp.csr_matrix(
        (np.array(vals), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(n, n),
    )
    rhs = cfg.source.g * cfg.volume
    return H, rhs


def p2_linear_oracle(cfg: ModelConfig) -> np.ndarray:
    """Solve the p=2 optimality system directly; raises SingularSystemError on
    zero-coercivity configurations (constants on detached pieces)."""
    H, rhs = assemble_p2_system(cfg)
    diag = H.diagonal()
    if np.any(diag == 0.0):
        raise SingularSystemError(
            f"{int(np.sum(diag == 0.0))} cells carry no quadratic energy"
        )
    try:
        lu = splu(H.tocsc())
        u = lu.solve(rhs)
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
    resid = float(np.max(np.abs(H @ u - rhs)))
    if not np.all(np.isfinite(u)) or resid > 1e-8 * max(1.0, float(np.max(np.abs(rhs)))):
        raise SingularSystemError(f"direct solve residual {resid:.3e} indicates singularity")
    return u


# ---------------------------------------------------------------------------
# manufactured convergence studies


@dataclass
class RateTable:
    case: str
    spacings: list[float]
    errors: list[float]
    orders: list[float] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "case": self.case,
            "spacings": self.spacings,
            "errors": self.errors,
            "orders": self.orders,
            "notes": self.notes,
        }


def _interval_parts(
    h: float,
    box: tuple[float, float],
    local: list[tuple[float, float]],
    nonlocal_: list[tuple[float, float]],
    profile: KernelProfile,
) -> tuple[Partition, NeighborTable, CollarMass]:
    spec = GridSpec(dimension=1, bounding_box=((box[0], box[1]),), spacing=h)
    regions = RegionSpec(
        local_boxes=tuple((iv,) for iv in local),
        nonlocal_boxes=tuple((iv,) for iv in nonlocal_),
    )
    part = build_grid(spec, regions, kernel_radius=profile.support_radius)
    return part, build_neighbors(part, profile), collar_mass(part, profile)


def _orders(errors: list[float]) -> list[float]:
    out = []
    for a, b in zip(errors, errors[1:]):
        out.append(float(np.log2(a / b)) if a > 0 and b > 0 else float("nan"))
    return out


def _case_p2_local_sin(spacings) -> RateTable:
    # full-Dirichlet interval, analytic solution sin(pi x)
    profile = KernelProfile(shape="indicator", amplitude=1.0, support_radius=0.1)
    errors = []
    for h in spacings:
        part, table, collar = _interval_parts(h, (0.0, 1.0), [(0.0, 1.0)], [], profile)
        x = part.active_centers[:, 0]
        cfg = ModelConfig(
            partition=part,
            table=table,
            collar=collar,
            p=2.0,
            source=affine_source(np.pi**2 * np.sin(np.pi * x)),
        )
        u = p2_linear_oracle(cfg)
        errors.append(float(np.max(np.abs(u - np.sin(np.pi * x)))))
    return RateTable("p2_local_sin", list(spacings), errors, _orders(errors))


def _case_p2_pure_nonlocal(spacings) -> RateTable:
    profile = KernelProfile(shape="indicator", amplitude=1.0, support_radius=0.2)
    errors = []
    statuses = []
    for h in spacings:
        part, table, collar = _interval_parts(h, (-0.25, 1.25), [], [(0.0, 1.0)], profile)
        cfg = ModelConfig(
            partition=part,
            table=table,
            collar=collar,
            p=2.0,
            source=affine_source(1.0, n=part.n_active),
        )
        ref = p2_linear_oracle(cfg)
        opts = SolveOptions(grad_tol=1e-13, max_iters=50_000)
        u, rep = minimize(cfg, opts, np.zeros(cfg.n))
        statuses.append(rep.status)
        errors.append(float(np.max(np.abs(u - ref)) / max(1.0, np.max(np.abs(ref)))))
    return RateTable(
        "p2_pure_nonlocal", list(spacings), errors, _orders(errors), {"statuses": statuses}
    )


def _case_p3_coupled(spacings) -> RateTable:
    profile = KernelProfile(shape="indicator", amplitude=1.0, support_radius=0.2)
    p = 3.0

    def solve(h: float, tol: float):
        part, table, collar = _interval_parts(
            h, (0.0, 1.25), [(0.0, 0.5)], [(0.5, 1.0)], profile
        )
        cfg = ModelConfig(
            partition=part,
            table=table,
            collar=collar,
            p=p,
            source=affine_source(1.0, n=part.n_active),
        )
        u, rep = minimize(cfg, SolveOptions(grad_tol=tol, max_iters=100_000), np.zeros(cfg.n))
        return cfg, u, rep

    h_ref = min(spacings) / 2.0
    base_tol = 1e-11
    cfg_ref, u_ref, rep_ref = solve(h_ref, base_tol / 10.0)
    x_ref = cfg_ref.partition.active_centers[:, 0]

    errors, statuses = [], [rep_ref.status]
    for h in spacings:
        cfg, u, rep = solve(h, base_tol)
        statuses.append(rep.status)
        x = cfg.partition.active_centers[:, 0]
        errors.append(float(np.max(np.abs(u - np.interp(x, x_ref, u_ref)))))
    return RateTable(
        "p3_coupled",
        list(spacings),
        errors,
        _orders(errors),
        {"statuses": statuses, "reference_spacing": h_ref},
    )


CONVERGENCE_CASES = {
    "p2_local_sin": _case_p2_local_sin,
    "p2_pure_nonlocal": _case_p2_pure_nonlocal,
    "p3_coupled": _case_p3_coupled,
}


def convergence_study(case: str, spacings) -> RateTable:
    """Run a builtin manufactured case over a grid sequence and report errors
    and observed orders between successive refinements."""
    if case not in CONVERGENCE_CASES:
        raise ValueError(f"unknown case {case!r}; builtin: {sorted(CONVERGENCE_CASES)}")
    spacings = sorted((float(h) for h in spacings), reverse=True)
    return CONVERGENCE_CASES[case](spacings)
