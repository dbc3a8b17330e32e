"""Rigid-motion fields on the dimer and the capacity matrices B and E.

Index convention (1-based in names, 0-based in arrays): fields 1..6 are the
generators supported on the upper component, 7..12 the same generators on
the lower component.  Generators:

    1, 2, 3 : unit translations e1, e2, e3
    4       : (x2, -x1, 0)
    5       : (x3, 0, -x1)
    6       : (0, x3, -x2)
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boundary_ops import SingleLayerSolver, assemble_np_adjoint_static, assemble_np_adjoint_term2, assemble_single_layer, evaluate_potential
from .geometry import DimerConfig, DimerGeometry, SurfaceMesh, build_sphere_dimer
from .kernels import ElasticMedium

logger = logging.getLogger(__name__)

N_RIGID = 12

_T = np.eye(3)
_M = np.zeros((6, 3, 3))
_M[3] = [[0, 1, 0], [-1, 0, 0], [0, 0, 0]]
_M[4] = [[0, 0, 1], [0, 0, 0], [-1, 0, 0]]
_M[5] = [[0, 0, 0], [0, 0, 1], [0, -1, 0]]
_TRANS = np.zeros((6, 3))
_TRANS[:3] = _T

# index sets of the four decoupled blocks (0-based)
BLOCKS: Dict[int, Tuple[int, ...]] = {1: (2, 8), 2: (3, 9), 3: (0, 4, 6, 10), 4: (1, 5, 7, 11)}


def generators(x: np.ndarray) -> np.ndarray:
    """The six rigid generators at points x (..., 3) -> (6, ..., 3)."""
    x = np.asarray(x, dtype=float)
    out = np.einsum("aij,...j->a...i", _M, x)
    out += _TRANS.reshape((6,) + (1,) * (x.ndim - 1) + (3,))
    return out


def xi_at(points: np.ndarray, comp: np.ndarray) -> np.ndarray:
    """All twelve fields at points with component labels: (12, ..., 3)."""
    g = generators(points)
    out = np.zeros((N_RIGID,) + g.shape[1:])
    up = (np.asarray(comp) == 0)[None, ..., None]
    out[:6] = np.where(up, g, 0.0)
    out[6:] = np.where(~up, g, 0.0)
    return out


@dataclass
class RigidBasis:
    """Rigid fields sampled at the collocation points."""

    mesh: SurfaceMesh
    xi: np.ndarray  # (12, N, 3)

    def integrals(self) -> np.ndarray:
        """(12, N, 3) panel integrals of each field (surface quadrature)."""
        comp = np.repeat(self.mesh.component[:, None], self.mesh.quad_points.shape[1], axis=1)
        vals = xi_at(self.mesh.quad_points, comp)
        return np.einsum("anqd,nq->and", vals, self.mesh.quad_weights)


def rigid_fields(mesh: SurfaceMesh) -> RigidBasis:
    if mesh.n_components != 2:
        raise ValueError("rigid fields need a two-component mesh")
    return RigidBasis(mesh=mesh, xi=xi_at(mesh.centroids, mesh.component))


@dataclass
class DensityBasis:
    zeta: np.ndarray  # (12, N, 3)
    residuals: np.ndarray  # (12,)


def solve_density_basis(solver: SingleLayerSolver, basis: RigidBasis, matrix: np.ndarray = None) -> DensityBasis:
    """Solve S zeta_i = xi_i for all twelve fields against one factorization."""
    zeta = solver.solve(basis.xi)
    res = np.full(N_RIGID, np.nan)
    if matrix is not None:
        for i in range(N_RIGID):
            r = matrix @ zeta[i].reshape(-1) - basis.xi[i].reshape(-1)
            res[i] = np.linalg.norm(r) / np.linalg.norm(basis.xi[i])
    return DensityBasis(zeta=zeta, residuals=res)


# ---------------------------------------------------------------------------
# B
# ---------------------------------------------------------------------------
def _ball_B(center: np.ndarray, radius: float) -> np.ndarray:
    """6x6 pairings of the generators over a ball, from its exact moments."""
    vol = 4.0 * np.pi * radius**3 / 3.0
    m1 = vol * center
    m2 = vol * (np.outer(center, center) + radius**2 / 5.0 * np.eye(3))
    out = np.empty((6, 6))
    for a in range(6):
        for b in range(6):
            out[a, b] = (
                np.sum((_M[a].T @ _M[b]) * m2)
                + _TRANS[a] @ _M[b] @ m1
                + _TRANS[b] @ _M[a] @ m1
                + vol * _TRANS[a] @ _TRANS[b]
            )
    return out


def _surface_B(mesh: SurfaceMesh, comp: int) -> np.ndarray:
    """6x6 pairings by the divergence theorem on homogeneous parts."""
    sel = mesh.component == comp
    qp = mesh.quad_points[sel].reshape(-1, 3)
    qn = mesh.quad_normals[sel].reshape(-1, 3)
    qw = mesh.quad_weights[sel].reshape(-1)
    x0 = np.einsum("q,qd->d", qw, qp) / qw.sum()
    y = qp - x0
    yn = np.einsum("qd,qd->q", y, qn) * qw
    u = generators(x0)  # (6, 3)
    My = np.einsum("aij,qj->aqi", _M, y)  # (6, Q, 3)
    out = np.empty((6, 6))
    for a in range(6):
        for b in range(6):
            f0 = u[a] @ u[b]
            f1 = My[b] @ u[a] + My[a] @ u[b]
            f2 = np.einsum("qi,qi->q", My[a], My[b])
            out[a, b] = np.sum(yn * (f0 / 3.0 + f1 / 4.0 + f2 / 5.0))
    return out


def assemble_B(geometry: DimerGeometry, method: str = "analytic") -> np.ndarray:
    """12x12 volume pairings of the rigid fields (block diagonal by component)."""
    B = np.zeros((N_RIGID, N_RIGID))
    mesh = geometry.mesh
    for c in range(2):
        if method == "analytic":
            blk = _ball_B(mesh.sphere_center[c], mesh.sphere_radius[c])
        elif method == "surface":
            blk = _surface_B(mesh, c)
        else:
            raise ValueError(f"unknown method {method!r}")
        B[6 * c : 6 * c + 6, 6 * c : 6 * c + 6] = blk
    return B


# ---------------------------------------------------------------------------
# E
# ---------------------------------------------------------------------------
def assemble_E(density: DensityBasis, rigid: RigidBasis, mesh: SurfaceMesh = None) -> np.ndarray:
    """E_ij = -integral of zeta_i . xi_j over the boundary."""
    ints = rigid.integrals()
    return -np.einsum("ind,jnd->ij", density.zeta, ints)


# ---------------------------------------------------------------------------
# Log fits
# ---------------------------------------------------------------------------
LOG_ENTRIES: Tuple[Tuple[int, int], ...] = (
    (1, 1), (1, 7), (2, 2), (2, 8), (3, 3), (3, 9), (6, 6), (6, 12), (5, 5), (5, 11), (4, 4), (4, 10),
    (1, 5), (1, 11), (2, 6), (2, 12),
)


@dataclass
class LogFit:
    entry: Tuple[int, int]
    slope: float
    intercept: float
    residual: float


def fit_log_constants(sweep: Sequence[Tuple[float, np.ndarray]],
                      entries: Sequence[Tuple[int, int]] = LOG_ENTRIES) -> Dict[Tuple[int, int], LogFit]:
    """Least-squares fit E_ij(eps) = s |log eps| + C for the listed (1-based) entries."""
    if len(sweep) < 4:
        raise ValueError("log fit requires at least 4 gap values")
    eps = np.array([e for e, _ in sweep], dtype=float)
    L = np.abs(np.log(eps))
    A = np.column_stack([L, np.ones_like(L)])
    out = {}
    for (i, j) in entries:
        y = np.array([E[i - 1, j - 1] for _, E in sweep])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        res = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
        out[(i, j)] = LogFit((i, j), float(coef[0]), float(coef[1]), res)
    return out


def constants_from_fits(fits: Dict[Tuple[int, int], LogFit]) -> Dict[Tuple[int, int], float]:
    """Fit intercepts C_ij (symmetric lookup)."""
    C = {}
    for (i, j), f in fits.items():
        C[(i, j)] = f.intercept
        C[(j, i)] = f.intercept
    return C


def log_slopes(medium: ElasticMedium, kappa: float = 1.0) -> Dict[Tuple[int, int], float]:
    """Leading |log eps| coefficients of the divergent entries."""
    t = medium.mu * math.pi / kappa
    a = (medium.lam + 2 * medium.mu) * math.pi / kappa
    return {(1, 1): t, (1, 7): -t, (2, 2): t, (2, 8): -t, (3, 3): a, (3, 9): -a}


def single_gap_constants(E: np.ndarray, epsilon: float, medium: ElasticMedium,
                         kappa: float = 1.0) -> Dict[Tuple[int, int], float]:
    """Intercepts from one gap by subtracting the known log slopes (no fit)."""
    L = abs(math.log(epsilon))
    C = {}
    for (i, j), s in log_slopes(medium, kappa).items():
        C[(i, j)] = C[(j, i)] = float(E[i - 1, j - 1] - s * L)
    return C


# ---------------------------------------------------------------------------
# Structure checks
# ---------------------------------------------------------------------------
def e_zero_pattern() -> List[Tuple[int, int]]:
    """(1-based) entries of E that vanish for a symmetric dimer."""
    zeros = set()
    for blk in BLOCKS.values():
        for i in blk:
            for j in range(N_RIGID):
                if j not in blk:
                    zeros.add((i + 1, j + 1))
    return sorted(zeros)


def b_zero_pattern() -> List[Tuple[int, int]]:
    """(1-based) entries of B that vanish for two balls on the x3 axis."""
    nz = set()
    for c in (0, 6):
        for i in range(6):
            nz.add((c + i + 1, c + i + 1))
        for a, b in ((0, 4), (1, 5)):
            nz.add((c + a + 1, c + b + 1))
            nz.add((c + b + 1, c + a + 1))
    return [(i, j) for i in range(1, 13) for j in range(1, 13) if (i, j) not in nz]


@dataclass
class StructureReport:
    checks: Dict[str, bool]
    values: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def check_structure(B: np.ndarray, E: np.ndarray, tol: float = 0.02, gap: float = None,
                    radius: float = 1.0) -> StructureReport:
    """Pass/fail of the symmetry-implied structure of B and E."""
    checks, vals = {}, {}
    nB = np.linalg.norm(B)
    nE = np.linalg.norm(E)
    zb = max(abs(B[i - 1, j - 1]) for i, j in b_zero_pattern())
    vals["B zero pattern"] = zb / nB
    checks["B zero pattern"] = zb <= tol * nB
    if gap is not None:
        vol = 4 * np.pi * radius**3 / 3
        refs = {
            (1, 1): vol,
            (4, 4): 2 * vol * radius**2 / 5,
            (1, 5): vol * (radius + gap / 2),
            (7, 7): vol,
            (10, 10): 2 * vol * radius**2 / 5,
        }
        err = max(abs(B[i - 1, j - 1] - v) / abs(v) for (i, j), v in refs.items())
        vals["B closed forms"] = err
        checks["B closed forms"] = err <= tol
    checks["B symmetric"] = np.abs(B - B.T).max() <= tol * nB
    ze = max(abs(E[i - 1, j - 1]) for i, j in e_zero_pattern())
    vals["E zero pattern"] = ze / nE
    checks["E zero pattern"] = ze <= tol * nE
    asym = np.abs(E - E.T).max() / nE
    vals["E symmetric"] = asym
    checks["E symmetric"] = asym <= tol
    d = np.abs([E[i, i] - E[i + 6, i + 6] for i in range(6)]).max() / nE
    vals["E_ii = E_i+6,i+6"] = d
    checks["E_ii = E_i+6,i+6"] = d <= tol
    d = np.abs([E[i, i + 6] - E[i + 6, i] for i in range(6)]).max() / nE
    vals["E_i,i+6 = E_i+6,i"] = d
    checks["E_i,i+6 = E_i+6,i"] = d <= tol
    # E_{i,i+4} = -E_{i+6,i+10} and E_{i,i+10} = -E_{i+6,i+4} for i = 1, 2
    rel = []
    for i in (0, 1):
        rel.append(abs(E[i, i + 4] + E[i + 6, i + 10]))
        rel.append(abs(E[i, i + 10] + E[i + 6, i + 4]))
    vals["sign relations"] = max(rel) / nE
    checks["sign relations"] = max(rel) <= tol * nE
    lo = min(min(E[i, i] - abs(E[i, i + 6]) for i in range(6)), 0.0)
    vals["E_ii +- E_i,i+6 >= 0"] = lo / nE
    checks["E_ii +- E_i,i+6 >= 0"] = lo >= -tol * nE
    emin = float(np.linalg.eigvalsh(0.5 * (E + E.T)).min())
    vals["E min eigenvalue"] = emin / nE
    checks["E positive semidefinite"] = emin >= -1e-3 * nE
    return StructureReport(checks=checks, values=vals)


def kernel_residuals(capacity: "CapacityData", medium: ElasticMedium, method: str = "direct") -> np.ndarray:
    """||(-I/2 + K*_D) zeta_i|| / ||zeta_i|| for the twelve densities."""
    K = assemble_np_adjoint_static(capacity.geometry.mesh, medium, method=method).matrix
    out = np.empty(N_RIGID)
    for i in range(N_RIGID):
        z = capacity.density.zeta[i].reshape(-1)
        out[i] = np.linalg.norm(K @ z - 0.5 * z) / np.linalg.norm(z)
    return out


# ---------------------------------------------------------------------------
# Moment identity
# ---------------------------------------------------------------------------
def ball_quadrature(center, radius: float, n_r: int = 8, n_theta: int = 12, n_phi: int = 24):
    """Gauss-Legendre in r and cos(theta), trapezoid in phi: points and weights."""
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * radius * (xr + 1.0)
    wr = 0.5 * radius * wr * r**2
    ct, wt = np.polynomial.legendre.leggauss(n_theta)
    st = np.sqrt(1.0 - ct**2)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    d = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)), np.outer(ct, np.ones(n_phi))], -1)
    d = d.reshape(-1, 3)
    wd = np.repeat(wt, n_phi) * (2 * np.pi / n_phi)
    pts = np.asarray(center, dtype=float) + r[:, None, None] * d[None]
    return pts.reshape(-1, 3), np.outer(wr, wd).reshape(-1)


@dataclass
class MomentCheck:
    boundary: np.ndarray  # (12,) integrals of K*_{D,2}[psi] . xi_j
    volume: np.ndarray  # (12,) -rho times integrals of S_D[psi] . xi_j over the inclusions

    @property
    def relative_error(self) -> float:
        return float(np.linalg.norm(self.boundary - self.volume) / np.linalg.norm(self.volume))


def moment_identity(geometry: DimerGeometry, medium: ElasticMedium, psi: np.ndarray,
                    K2: Optional[np.ndarray] = None, rigid: Optional[RigidBasis] = None,
                    quadrature: Tuple[int, int, int] = (8, 12, 24)) -> MomentCheck:
    """Both sides of the second-order moment identity for a density psi (N, 3)."""
    mesh = geometry.mesh
    if K2 is None:
        K2 = assemble_np_adjoint_term2(mesh, medium).matrix
    rigid = rigid or rigid_fields(mesh)
    psi = np.asarray(psi, dtype=float).reshape(-1, 3)
    lhs = np.einsum("nd,jnd->j", (K2 @ psi.reshape(-1)).reshape(-1, 3), rigid.integrals())
    rhs = np.zeros(N_RIGID)
    for c in range(2):
        pts, w = ball_quadrature(mesh.sphere_center[c], mesh.sphere_radius[c], *quadrature)
        u = evaluate_potential(mesh, medium, 0.0, psi, pts).real
        xi = generators(pts)
        rhs[6 * c : 6 * c + 6] = -medium.rho * np.einsum("m,md,amd->a", w, u, xi)
    return MomentCheck(lhs, rhs)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------
@dataclass
class CapacityData:
    """Everything downstream stages need from one gap value."""

    geometry: DimerGeometry
    rigid: RigidBasis
    density: DensityBasis
    E: np.ndarray
    B: np.ndarray
    condition: float
    solver: Optional[SingleLayerSolver] = None


def compute_capacity(config: DimerConfig, medium: ElasticMedium, b_method: str = "analytic",
                     keep_solver: bool = False) -> CapacityData:
    """Mesh, factor S_D, solve for the twelve densities and form E and B."""
    geometry = build_sphere_dimer(config)
    S = assemble_single_layer(geometry.mesh, medium)
    solver = SingleLayerSolver.factor(S)
    rigid = rigid_fields(geometry.mesh)
    density = solve_density_basis(solver, rigid)
    E = assemble_E(density, rigid)
    B = assemble_B(geometry, method=b_method)
    logger.info("capacity: gap=%g panels=%d", config.gap, geometry.mesh.n_panels)
    return CapacityData(geometry, rigid, density, E, B, solver.condition, solver if keep_solver else None)
