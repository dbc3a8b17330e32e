"""Method of fundamental solutions for the exterior Dirichlet problems.

Kelvin point forces on a concentric sphere inside each ball are fitted in
the least-squares sense to boundary data.  Decay at infinity is built in,
so the fitted field is the exterior solution whenever the boundary
residual is small.  Everything here is independent of the boundary element
path: own kernel, own source/collocation layout, own surface quadrature.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg as sla

from .geometry import DimerGeometry
from .kernels import ElasticMedium
from .rigid_space import N_RIGID, xi_at

logger = logging.getLogger(__name__)

RESIDUAL_THRESHOLD = 2e-2
GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


class OracleUnreliable(RuntimeError):
    pass


@dataclass(frozen=True)
class MFSConfig:
    sources: int = 600  # per ball
    depth: float = 0.7
    oversampling: float = 2.0
    grading: float = 2.0  # collocation clustering toward the facing poles
    residual_threshold: float = RESIDUAL_THRESHOLD
    rank_tol: float = 1e-13

    def __post_init__(self) -> None:
        if not 0.3 <= self.depth <= 0.9:
            raise ValueError(f"depth factor must lie in [0.3, 0.9], got {self.depth}")
        if self.oversampling < 1.5:
            raise ValueError("collocation must oversample the unknowns by at least 1.5")
        if self.sources < 4:
            raise ValueError("need at least 4 sources per ball")
        if self.grading < 1.0:
            raise ValueError("grading must be >= 1")


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------
def _kelvin_consts(medium: ElasticMedium):
    # positive-definite sign convention; the Dirichlet fit does not care
    lam, mu = medium.lam, medium.mu
    a = (lam + 3 * mu) / (8 * math.pi * mu * (lam + 2 * mu))
    b = (lam + mu) / (8 * math.pi * mu * (lam + 2 * mu))
    return a, b


def kelvin_block(medium: ElasticMedium, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Displacement at x (M,3) due to unit point forces at y (K,3): (M, 3, K, 3)."""
    a, b = _kelvin_consts(medium)
    d = x[:, None, :] - y[None, :, :]
    r = np.linalg.norm(d, axis=-1)
    out = b * np.einsum("mki,mkj->mikj", d, d) / r[:, None, :, None] ** 3
    eye = np.eye(3)[None, :, None, :]
    out += a * eye / r[:, None, :, None]
    return out


def kelvin_block_gradient(medium: ElasticMedium, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d/dx_l of kelvin_block: (M, 3, K, 3, 3) indexed [m, i, k, j, l]."""
    a, b = _kelvin_consts(medium)
    d = x[:, None, :] - y[None, :, :]
    r = np.linalg.norm(d, axis=-1)
    r3 = r ** 3
    r5 = r ** 5
    eye = np.eye(3)
    # a d_ij / r  ->  -a d_ij x_l / r^3
    g = -a * np.einsum("ij,mkl->mikjl", eye, d / r3[..., None])
    # b x_i x_j / r^3 -> b (d_il x_j + x_i d_jl) / r^3 - 3 b x_i x_j x_l / r^5
    g += b * np.einsum("il,mkj->mikjl", eye, d / r3[..., None])
    g += b * np.einsum("jl,mki->mikjl", eye, d / r3[..., None])
    g -= 3 * b * np.einsum("mki,mkj,mkl->mikjl", d, d, d / r5[..., None])
    return g


# ---------------------------------------------------------------------------
# Point layouts
# ---------------------------------------------------------------------------
def fibonacci_sphere(n: int) -> np.ndarray:
    """n nearly uniform unit vectors."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = 2.0 * math.pi * k / GOLDEN
    s = np.sqrt(1.0 - z * z)
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def graded_sphere(n: int, power: float, pole: float) -> np.ndarray:
    """Fibonacci spiral with latitude density increased toward pole*e3."""
    k = np.arange(n) + 0.5
    t = (k / n) ** power
    z = pole * (1.0 - 2.0 * t)
    phi = 2.0 * math.pi * k / GOLDEN
    s = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def _facing_pole(center: np.ndarray) -> float:
    return -1.0 if center[2] > 0 else 1.0


def sphere_quadrature(center: np.ndarray, radius: float, gap: float, n_theta: int = 24,
                      n_phi: int = 64, levels: int = 0):
    """Product rule on a sphere, geometrically graded toward the facing pole.

    Returns points, outward normals and weights.
    """
    pole = _facing_pole(center)
    if levels <= 0:
        levels = max(4, int(math.ceil(math.log2(radius / max(gap, 1e-12)))) + 3)
    # polar angle from the facing pole, panels [0, t1], [t1, t2], ... with t_k = pi 2^(k-levels)
    edges = [0.0] + [math.pi * 2.0 ** (k - levels) for k in range(1, levels + 1)]
    xg, wg = np.polynomial.legendre.leggauss(n_theta)
    th, wt = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        th.append(0.5 * (hi - lo) * xg + 0.5 * (hi + lo))
        wt.append(0.5 * (hi - lo) * wg)
    th = np.concatenate(th)
    wt = np.concatenate(wt)
    ph = 2.0 * math.pi * np.arange(n_phi) / n_phi
    T, P = np.meshgrid(th, ph, indexing="ij")
    W = (wt * np.sin(th))[:, None] * (2.0 * math.pi / n_phi) * radius**2 * np.ones_like(P)
    nrm = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), pole * np.cos(T)], axis=-1).reshape(-1, 3)
    pts = center + radius * nrm
    return pts, nrm, W.reshape(-1)


# ---------------------------------------------------------------------------
# Solve
# ---------------------------------------------------------------------------
@dataclass
class OracleSolution:
    strengths: np.ndarray  # (K, 3)
    sources: np.ndarray  # (K, 3)
    residual: float  # relative RMS boundary residual at check points
    reliable: bool
    medium: ElasticMedium = field(repr=False)
    geometry: DimerGeometry = field(repr=False)
    data_index: Optional[int] = None

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a, b = _kelvin_consts(self.medium)
        out = np.empty((len(x), 3))
        for s in range(0, len(x), 256):
            d = x[s:s + 256, None, :] - self.sources[None]
            r = np.linalg.norm(d, axis=-1)
            dc = np.einsum("mkj,kj->mk", d, self.strengths)
            out[s:s + 256] = a * (1.0 / r) @ self.strengths + b * np.einsum("mk,mki->mi", dc / r**3, d)
        return out

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """[m, i, l] = d w_i / d x_l."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a, b = _kelvin_consts(self.medium)
        c = self.strengths
        out = np.empty((len(x), 3, 3))
        for s in range(0, len(x), 256):
            d = x[s:s + 256, None, :] - self.sources[None]
            r = np.linalg.norm(d, axis=-1)
            ir3 = 1.0 / r**3
            dc = np.einsum("mkj,kj->mk", d, c)
            g = -a * np.einsum("ki,mkl->mil", c, d * ir3[..., None])
            g += b * np.eye(3)[None] * (dc * ir3).sum(axis=1)[:, None, None]
            g += b * np.einsum("mki,kl->mil", d * ir3[..., None], c)
            g -= 3 * b * np.einsum("mki,mkl->mil", d * (dc / r**5)[..., None], d)
            out[s:s + 256] = g
        return out

    def traction(self, x: np.ndarray, nu: np.ndarray) -> np.ndarray:
        g = self.gradient(x)
        m = self.medium
        div = np.trace(g, axis1=1, axis2=2)
        return m.lam * div[:, None] * nu + m.mu * np.einsum("mil,ml->mi", g + np.swapaxes(g, 1, 2), nu)


def _layout(geometry: DimerGeometry, config: MFSConfig):
    R = geometry.radius
    centers = geometry.centers
    src, col, comp = [], [], []
    ncol = int(math.ceil(config.oversampling * config.sources))
    for c, ctr in enumerate(centers):
        pole = _facing_pole(ctr)
        src.append(ctr + config.depth * R * fibonacci_sphere(config.sources))
        col.append(ctr + R * graded_sphere(ncol, config.grading, pole))
        comp.append(np.full(ncol, c))
    return np.vstack(src), np.vstack(col), np.concatenate(comp)


def _rigid_data(index: int):
    def f(x, comp):
        return xi_at(x, comp)[index]
    return f


class MFSSystem:
    """Scaled collocation matrix of one source layout, QR-factored once."""

    def __init__(self, geometry: DimerGeometry, medium: ElasticMedium, config: MFSConfig = MFSConfig()):
        self.geometry, self.medium, self.config = geometry, medium, config
        self.sources, self.colloc, self.comp = _layout(geometry, config)
        A = kelvin_block(medium, self.colloc, self.sources).reshape(3 * len(self.colloc), 3 * len(self.sources))
        self.scale = np.linalg.norm(A, axis=0)
        # pivoted QR truncated at the numerical rank regularizes the fit
        self.q, self.r, self.perm = sla.qr(A / self.scale, mode="economic", overwrite_a=True, pivoting=True)
        d = np.abs(np.diag(self.r))
        self.rank = int(np.sum(d > self.config.rank_tol * d[0]))

    def solve(self, data: Union[int, Callable], strict: bool = False) -> OracleSolution:
        index = None
        if isinstance(data, (int, np.integer)):
            if not 0 <= data < N_RIGID:
                raise ValueError("rigid index out of range")
            index = int(data)
            data = _rigid_data(index)
        geometry, medium = self.geometry, self.medium
        rhs = np.asarray(data(self.colloc, self.comp), dtype=float).reshape(-1)
        if not np.any(rhs):
            return OracleSolution(np.zeros_like(self.sources), self.sources, 0.0, True, medium, geometry, index)
        k = self.rank
        y = sla.solve_triangular(self.r[:k, :k], self.q[:, :k].T @ rhs)
        x = np.zeros(self.r.shape[1])
        x[self.perm[:k]] = y
        sol = OracleSolution((x / self.scale).reshape(-1, 3), self.sources, 0.0, True, medium, geometry, index)
        # residual on an independent set of boundary points
        res = ref = 0.0
        for k, ctr in enumerate(geometry.centers):
            p, _, w = sphere_quadrature(ctr, geometry.radius, geometry.gap, n_theta=6, n_phi=24)
            f = np.asarray(data(p, np.full(len(p), k)), dtype=float)
            r = sol.evaluate(p) - f
            res += np.sum(w * np.sum(r * r, axis=1))
            ref += np.sum(w * np.sum(f * f, axis=1))
        sol.residual = float(math.sqrt(res / ref)) if ref > 0 else float(math.sqrt(res))
        sol.reliable = sol.residual <= self.config.residual_threshold
        if not sol.reliable:
            msg = f"oracle unreliable: relative boundary residual {sol.residual:.2e}"
            if strict:
                raise OracleUnreliable(msg)
            logger.warning(msg)
        return sol


def mfs_solve(geometry: DimerGeometry, medium: ElasticMedium, data: Union[int, Callable], config: MFSConfig = MFSConfig(),
              strict: bool = False, system: Optional[MFSSystem] = None) -> OracleSolution:
    """Fit Kelvin sources to Dirichlet data on the dimer surface.

    data is a rigid-field index (0..11) or a callable f(points, component) -> (M, 3).
    Pass a prebuilt system to reuse its factorization across data vectors.
    """
    system = system or MFSSystem(geometry, medium, config)
    return system.solve(data, strict)


def _energy_row(sol: OracleSolution, geometry: DimerGeometry, n_theta: int, n_phi: int) -> np.ndarray:
    """-integral of traction(w) . xi_j for all twelve j."""
    row = np.zeros(N_RIGID)
    for k, ctr in enumerate(geometry.centers):
        p, nu, w = sphere_quadrature(ctr, geometry.radius, geometry.gap, n_theta, n_phi)
        t = sol.traction(p, nu)
        xi = xi_at(p, np.full(len(p), k))
        row -= np.einsum("m,mi,jmi->j", w, t, xi)
    return row


def oracle_energy(sol_i: OracleSolution, sol_j: Union[OracleSolution, int], geometry: Optional[DimerGeometry] = None,
                  n_theta: int = 16, n_phi: int = 48):
    """-integral of (traction of w_i) . xi_j over the dimer surface.

    Returns (value, reliable).
    """
    j = sol_j.data_index if isinstance(sol_j, OracleSolution) else int(sol_j)
    if j is None:
        raise ValueError("second argument must carry a rigid-field index")
    reliable = sol_i.reliable and (sol_j.reliable if isinstance(sol_j, OracleSolution) else True)
    return float(_energy_row(sol_i, geometry or sol_i.geometry, n_theta, n_phi)[j]), reliable


def oracle_energy_matrix(geometry: DimerGeometry, medium: ElasticMedium, indices=None,
                         config: MFSConfig = MFSConfig(), n_theta: int = 16, n_phi: int = 48):
    """Oracle E restricted to indices, plus the worst residual."""
    idx = list(range(N_RIGID)) if indices is None else list(indices)
    system = MFSSystem(geometry, medium, config)
    E = np.zeros((len(idx), len(idx)))
    worst = 0.0
    for a, i in enumerate(idx):
        sol = system.solve(i)
        worst = max(worst, sol.residual)
        E[a] = _energy_row(sol, geometry, n_theta, n_phi)[idx]
    return E, worst
