"""Boundary integral operators on panel meshes.

Densities are piecewise constant 3-vectors, one per panel, collocated at the
panel centroids (mapped to the exact surface when the mesh carries sphere
data).  A density array has shape (N, 3); operator matrices act on the flat
vector of length 3N ordered panel-major.

Quadrature
----------
* regular pairs: 7-point degree-5 rule;
* self panel of the weakly singular kernels: the panel is split at the
  collocation point into three triangles and each is integrated with a
  Duffy (collapsed square) Gauss rule, which cancels the 1/r singularity;
* near pairs (distance below ``ratio`` times the panel diameter): recursive
  4-way subdivision until every piece is admissible, up to ``max_depth``.

The double layer K (adjoint of the Neumann-Poincare operator K*) is
regularized by subtracting, at each collocation point, the translation that
matches the density there.  Translations supported on one component satisfy
K[r] = r/2 on that component and K[r] = 0 on the other, so the strongly
singular self term never has to be computed.  K* is then the transpose of K
with respect to the area-weighted inner product.
"""

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numba
import numpy as np
import scipy.linalg as sla
from numba import prange

from .geometry import TRI7_BARY, TRI7_WEIGHTS, SurfaceMesh
from .kernels import (
    ElasticMedium,
    _series_table,
    dyn_green_into,
    kelvin_grad_into,
    kelvin_into,
    series_coefficients,
    series_grad_into,
    series_term_into,
    traction_from_grad,
)

logger = logging.getLogger(__name__)

NEAR_RATIO: float = 3.0
MAX_DEPTH: int = 24
DUFFY_ORDER: int = 8
CONDITION_LIMIT: float = 1e13

# kernel identifiers for the numba core
K_KELVIN = 0  # Gamma(x - y)
K_DOUBLE = 1  # T_y Gamma(y - x)^T with normal at y  (kernel of K)
K_SERIES2 = 2  # Gamma_2(x - y)
K_SERIES2_TRACTION = 3  # T_x Gamma_2(x - y) with normal at x  (kernel of K*_2)
K_DYNAMIC = 4  # Gamma^omega(x - y)
K_KELVIN_GRAD = 5  # d/dx_k Gamma(x - y)
K_DYNAMIC_GRAD = 6  # d/dx_k Gamma^omega(x - y)
K_NP = 7  # T_x Gamma(x - y) with normal at x  (kernel of K*)

_N_OUT = {K_KELVIN: 9, K_DOUBLE: 9, K_SERIES2: 9, K_SERIES2_TRACTION: 9, K_DYNAMIC: 9,
          K_KELVIN_GRAD: 27, K_DYNAMIC_GRAD: 27, K_NP: 9}


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach an admissible subdivision."""


class EvaluationError(ValueError):
    """Potential requested on (or numerically on) the boundary."""


class IllConditionedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Packed mesh data
# ---------------------------------------------------------------------------
@dataclass
class PanelData:
    """Contiguous arrays consumed by the compiled kernels."""

    V: np.ndarray
    FN: np.ndarray
    FA: np.ndarray
    PC: np.ndarray
    PR: np.ndarray
    QP: np.ndarray
    QN: np.ndarray
    QW: np.ndarray
    X: np.ndarray
    NX: np.ndarray
    DIAM: np.ndarray
    COMP: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: SurfaceMesh) -> "PanelData":
        c = np.ascontiguousarray
        diam = np.maximum(mesh.diameters, np.max(np.linalg.norm(mesh.quad_points - mesh.centroids[:, None, :], axis=2), axis=1))
        return cls(
            V=c(mesh.vertices),
            FN=c(mesh.flat_normals),
            FA=c(mesh.flat_areas),
            PC=c(mesh.panel_centers()),
            PR=c(mesh.panel_radii()),
            QP=c(mesh.quad_points),
            QN=c(mesh.quad_normals),
            QW=c(mesh.quad_weights),
            X=c(mesh.centroids),
            NX=c(mesh.normals),
            DIAM=c(diam),
            COMP=c(mesh.component),
        )


def panel_data(mesh: SurfaceMesh) -> PanelData:
    pd = getattr(mesh, "_panel_data", None)
    if pd is None:
        pd = PanelData.from_mesh(mesh)
        mesh._panel_data = pd  # cached alongside the mesh's own cached properties
    return pd


def _duffy_rule(order: int = DUFFY_ORDER):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _params(medium: ElasticMedium, omega: float = 0.0) -> np.ndarray:
    return np.array([medium.lam, medium.mu, medium.rho, medium.alpha1, medium.alpha2, float(omega)])


def _series2(medium: ElasticMedium):
    P, Q = series_coefficients(medium.lam, medium.mu, medium.rho, 2)
    return P.real, Q.real


# ---------------------------------------------------------------------------
# Numba core
# ---------------------------------------------------------------------------
@numba.njit(cache=True)
def _map_point(p, pc, pr, fn, q, nq):
    """Map a flat-panel point to the surface; return the area Jacobian."""
    if pr == 0.0:
        for k in range(3):
            q[k] = p[k]
            nq[k] = fn[k]
        return 1.0
    d0 = p[0] - pc[0]
    d1 = p[1] - pc[1]
    d2 = p[2] - pc[2]
    dn = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    nq[0] = d0 / dn
    nq[1] = d1 / dn
    nq[2] = d2 / dn
    for k in range(3):
        q[k] = pc[k] + pr * nq[k]
    return pr * pr * abs(fn[0] * d0 + fn[1] * d1 + fn[2] * d2) / (dn * dn * dn)


@numba.njit(cache=True)
def _kernel(kind, x, nx, y, ny, prm, p2, q2, series, d, m3, g3, c3, cg3, val):
    """Evaluate kernel ``kind`` for target (x, nx) and source (y, ny) into val."""
    lam, mu, rho, a1, a2, omega = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5]
    if kind == 0:
        for k in range(3):
            d[k] = x[k] - y[k]
        kelvin_into(a1, a2, d, m3)
        for i in range(3):
            for j in range(3):
                val[3 * i + j] = m3[i, j]
    elif kind == 1:
        for k in range(3):
            d[k] = y[k] - x[k]
        kelvin_grad_into(a1, a2, d, g3)
        traction_from_grad(g3, ny, lam, mu, m3)
        for i in range(3):
            for j in range(3):
                val[3 * i + j] = m3[j, i]
    elif kind == 2:
        for k in range(3):
            d[k] = x[k] - y[k]
        r = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        if r == 0.0:
            # Gamma_2 vanishes continuously at the origin
            for i in range(9):
                val[i] = 0.0
            return
        for i in range(3):
            for j in range(3):
                v = q2 * d[i] * d[j] / r
                if i == j:
                    v += p2 * r
                val[3 * i + j] = v
    elif kind == 3:
        for k in range(3):
            d[k] = x[k] - y[k]
        r = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        if r == 0.0:
            # bounded but direction dependent; a single point carries no mass
            for i in range(9):
                val[i] = 0.0
            return
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    v = -q2 * d[i] * d[j] * d[k] / (r * r * r)
                    if i == j:
                        v += p2 * d[k] / r
                    if i == k:
                        v += q2 * d[j] / r
                    if j == k:
                        v += q2 * d[i] / r
                    g3[i, j, k] = v
        traction_from_grad(g3, nx, lam, mu, m3)
        for i in range(3):
            for j in range(3):
                val[3 * i + j] = m3[i, j]
    elif kind == 4 or kind == 6:
        for k in range(3):
            d[k] = x[k] - y[k]
        dyn_green_into(lam, mu, rho, omega, series, d, c3, cg3, kind == 6)
        if kind == 4:
            for i in range(3):
                for j in range(3):
                    val[3 * i + j] = c3[i, j]
        else:
            for i in range(3):
                for j in range(3):
                    for k in range(3):
                        val[9 * i + 3 * j + k] = cg3[i, j, k]
    elif kind == 5:
        for k in range(3):
            d[k] = x[k] - y[k]
        kelvin_grad_into(a1, a2, d, g3)
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    val[9 * i + 3 * j + k] = g3[i, j, k]
    elif kind == 7:
        for k in range(3):
            d[k] = x[k] - y[k]
        kelvin_grad_into(a1, a2, d, g3)
        traction_from_grad(g3, nx, lam, mu, m3)
        for i in range(3):
            for j in range(3):
                val[3 * i + j] = m3[i, j]


@numba.njit(cache=True)
def _tri_rule(kind, x, nx, a, b, c, pc, pr, fn, prm, p2, q2, series, bary, wts, nout, acc, work):
    """Accumulate the 7-point rule over flat triangle (a, b, c) mapped to the surface."""
    d, m3, g3, c3, cg3, val, p, q, nq = work
    e10 = b[0] - a[0]
    e11 = b[1] - a[1]
    e12 = b[2] - a[2]
    e20 = c[0] - a[0]
    e21 = c[1] - a[1]
    e22 = c[2] - a[2]
    cx = e11 * e22 - e12 * e21
    cy = e12 * e20 - e10 * e22
    cz = e10 * e21 - e11 * e20
    area = 0.5 * math.sqrt(cx * cx + cy * cy + cz * cz)
    for qi in range(bary.shape[0]):
        for k in range(3):
            p[k] = bary[qi, 0] * a[k] + bary[qi, 1] * b[k] + bary[qi, 2] * c[k]
        jac = _map_point(p, pc, pr, fn, q, nq)
        _kernel(kind, x, nx, q, nq, prm, p2, q2, series, d, m3, g3, c3, cg3, val)
        w = wts[qi] * area * jac
        for t in range(nout):
            acc[t] += w * val[t]


@numba.njit(cache=True)
def _adaptive(kind, x, nx, V, pc, pr, fn, prm, p2, q2, series, bary, wts, nout, ratio, max_depth, acc, work):
    """Integrate over a panel by recursive subdivision; return 0 on success."""
    cap = 4 * max_depth + 8
    sa = np.empty((cap, 3))
    sb = np.empty((cap, 3))
    sc = np.empty((cap, 3))
    sd = np.empty(cap, dtype=np.int64)
    p = np.empty(3)
    q = np.empty(3)
    nq = np.empty(3)
    mab = np.empty(3)
    mbc = np.empty(3)
    mca = np.empty(3)
    top = 0
    for k in range(3):
        sa[0, k] = V[0, k]
        sb[0, k] = V[1, k]
        sc[0, k] = V[2, k]
    sd[0] = 0
    top = 1
    status = 0
    while top > 0:
        top -= 1
        a = sa[top].copy()
        b = sb[top].copy()
        c = sc[top].copy()
        depth = sd[top]
        for k in range(3):
            p[k] = (a[k] + b[k] + c[k]) / 3.0
        _map_point(p, pc, pr, fn, q, nq)
        dist = math.sqrt((x[0] - q[0]) ** 2 + (x[1] - q[1]) ** 2 + (x[2] - q[2]) ** 2)
        l1 = math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)
        l2 = math.sqrt((b[0] - c[0]) ** 2 + (b[1] - c[1]) ** 2 + (b[2] - c[2]) ** 2)
        l3 = math.sqrt((c[0] - a[0]) ** 2 + (c[1] - a[1]) ** 2 + (c[2] - a[2]) ** 2)
        diam = max(l1, max(l2, l3))
        if dist >= ratio * diam:
            _tri_rule(kind, x, nx, a, b, c, pc, pr, fn, prm, p2, q2, series, bary, wts, nout, acc, work)
            continue
        if depth >= max_depth:
            status = 1
            _tri_rule(kind, x, nx, a, b, c, pc, pr, fn, prm, p2, q2, series, bary, wts, nout, acc, work)
            continue
        for k in range(3):
            mab[k] = 0.5 * (a[k] + b[k])
            mbc[k] = 0.5 * (b[k] + c[k])
            mca[k] = 0.5 * (c[k] + a[k])
        for k in range(3):
            sa[top, k] = a[k]; sb[top, k] = mab[k]; sc[top, k] = mca[k]
        sd[top] = depth + 1
        top += 1
        for k in range(3):
            sa[top, k] = mab[k]; sb[top, k] = b[k]; sc[top, k] = mbc[k]
        sd[top] = depth + 1
        top += 1
        for k in range(3):
            sa[top, k] = mca[k]; sb[top, k] = mbc[k]; sc[top, k] = c[k]
        sd[top] = depth + 1
        top += 1
        for k in range(3):
            sa[top, k] = mab[k]; sb[top, k] = mbc[k]; sc[top, k] = mca[k]
        sd[top] = depth + 1
        top += 1
    return status


@numba.njit(cache=True)
def _duffy_self(kind, x, nx, V, pc, pr, fn, prm, p2, q2, series, gx, gw, nout, acc, work):
    """Self-panel integral with the singular point at the flat centroid."""
    d, m3, g3, c3, cg3, val, p, q, nq = work
    ctr = np.empty(3)
    for k in range(3):
        ctr[k] = (V[0, k] + V[1, k] + V[2, k]) / 3.0
    for s in range(3):
        va = V[s]
        vb = V[(s + 1) % 3]
        e10 = va[0] - ctr[0]
        e11 = va[1] - ctr[1]
        e12 = va[2] - ctr[2]
        e20 = vb[0] - ctr[0]
        e21 = vb[1] - ctr[1]
        e22 = vb[2] - ctr[2]
        cx = e11 * e22 - e12 * e21
        cy = e12 * e20 - e10 * e22
        cz = e10 * e21 - e11 * e20
        area2 = math.sqrt(cx * cx + cy * cy + cz * cz)
        for iu in range(gx.shape[0]):
            u = gx[iu]
            for iv in range(gx.shape[0]):
                v = gx[iv]
                for k in range(3):
                    p[k] = ctr[k] + u * (va[k] - ctr[k]) + u * v * (vb[k] - va[k])
                jac = _map_point(p, pc, pr, fn, q, nq)
                _kernel(kind, x, nx, q, nq, prm, p2, q2, series, d, m3, g3, c3, cg3, val)
                w = gw[iu] * gw[iv] * area2 * u * jac
                for t in range(nout):
                    acc[t] += w * val[t]


@numba.njit(cache=True)
def _pv_self_np(x, nx, V, pc, pr, fn, prm, gx, gw, acc, work):
    """Principal value of the K* kernel over the panel containing x.

    Polar coordinates about the flat centroid; the 1/r part F(theta)/r of the
    integrand is subtracted and integrated in closed form, F being odd.
    Excision is taken on the surface, |y - x| < rho, which gives the extra
    log of the stretch s(theta) of the projection.
    """
    d, m3, g3, c3, cg3, val, p, q, nq = work
    lam, mu, a1, a2 = prm[0], prm[1], prm[3], prm[4]
    ctr = np.empty(3)
    for k in range(3):
        ctr[k] = (V[0, k] + V[1, k] + V[2, k]) / 3.0
    # in-plane orthonormal basis
    t1 = V[0] - ctr
    t1 = t1 / math.sqrt(t1[0] ** 2 + t1[1] ** 2 + t1[2] ** 2)
    t2 = np.empty(3)
    t2[0] = fn[1] * t1[2] - fn[2] * t1[1]
    t2[1] = fn[2] * t1[0] - fn[0] * t1[2]
    t2[2] = fn[0] * t1[1] - fn[1] * t1[0]
    # derivative of the projection at the centroid: (R/|c0-c|)(I - n n^T)
    if pr == 0.0:
        scale = 1.0
        nr = fn.copy()
        jac0 = 1.0
    else:
        dc = ctr - pc
        dn = math.sqrt(dc[0] ** 2 + dc[1] ** 2 + dc[2] ** 2)
        scale = pr / dn
        nr = dc / dn
        jac0 = pr * pr * abs(fn[0] * dc[0] + fn[1] * dc[1] + fn[2] * dc[2]) / dn ** 3
    e = np.empty(3)
    de = np.empty(3)
    F = np.empty((3, 3))
    for s in range(3):
        va = V[s]
        vb = V[(s + 1) % 3]
        ua = va - ctr
        ub = vb - ctr
        tha = math.atan2(ua[0] * t2[0] + ua[1] * t2[1] + ua[2] * t2[2], ua[0] * t1[0] + ua[1] * t1[1] + ua[2] * t1[2])
        thb = math.atan2(ub[0] * t2[0] + ub[1] * t2[1] + ub[2] * t2[2], ub[0] * t1[0] + ub[1] * t1[1] + ub[2] * t1[2])
        while thb <= tha:
            thb += 2.0 * math.pi
        # in-plane outward normal of edge (va, vb) and its distance from ctr
        ed = vb - va
        en = np.empty(3)
        en[0] = ed[1] * fn[2] - ed[2] * fn[1]
        en[1] = ed[2] * fn[0] - ed[0] * fn[2]
        en[2] = ed[0] * fn[1] - ed[1] * fn[0]
        en = en / math.sqrt(en[0] ** 2 + en[1] ** 2 + en[2] ** 2)
        h = ua[0] * en[0] + ua[1] * en[1] + ua[2] * en[2]
        for it in range(gx.shape[0]):
            th = tha + (thb - tha) * gx[it]
            wth = (thb - tha) * gw[it]
            ct = math.cos(th)
            st = math.sin(th)
            for k in range(3):
                e[k] = ct * t1[k] + st * t2[k]
            Rth = h / (e[0] * en[0] + e[1] * en[1] + e[2] * en[2])
            # leading direction on the surface
            en_ = e[0] * nr[0] + e[1] * nr[1] + e[2] * nr[2]
            for k in range(3):
                de[k] = -scale * (e[k] - en_ * nr[k])
            sth = math.sqrt(de[0] ** 2 + de[1] ** 2 + de[2] ** 2)
            kelvin_grad_into(a1, a2, de, g3)
            traction_from_grad(g3, nx, lam, mu, F)
            lg = math.log(Rth * sth)
            for i in range(3):
                for j in range(3):
                    acc[3 * i + j] += wth * jac0 * F[i, j] * lg
            for ir in range(gx.shape[0]):
                r = Rth * gx[ir]
                wr = Rth * gw[ir]
                for k in range(3):
                    p[k] = ctr[k] + r * e[k]
                jac = _map_point(p, pc, pr, fn, q, nq)
                for k in range(3):
                    d[k] = x[k] - q[k]
                kelvin_grad_into(a1, a2, d, g3)
                traction_from_grad(g3, nx, lam, mu, m3)
                for i in range(3):
                    for j in range(3):
                        acc[3 * i + j] += wth * wr * (m3[i, j] * jac * r - jac0 * F[i, j] / r)


@numba.njit(cache=True)
def _make_work():
    return (np.empty(3), np.empty((3, 3)), np.empty((3, 3, 3)), np.empty((3, 3), dtype=np.complex128),
            np.empty((3, 3, 3), dtype=np.complex128), np.empty(27, dtype=np.complex128),
            np.empty(3), np.empty(3), np.empty(3))


@numba.njit(cache=True)
def _pair(kind, i_self, x, nx, j, V, FN, PC, PR, QP, QN, QW, DIAM, prm, p2, q2, series,
          bary, wts, gx, gw, nout, ratio, max_depth, acc, work):
    """Integral of kernel ``kind`` over panel j for target (x, nx)."""
    for t in range(nout):
        acc[t] = 0.0
    if i_self and kind == 7:
        _pv_self_np(x, nx, V[j], PC[j], PR[j], FN[j], prm, gx, gw, acc, work)
        return 0
    if i_self:
        _duffy_self(kind, x, nx, V[j], PC[j], PR[j], FN[j], prm, p2, q2, series, gx, gw, nout, acc, work)
        return 0
    dx = x[0] - QP[j, 0, 0]
    dy = x[1] - QP[j, 0, 1]
    dz = x[2] - QP[j, 0, 2]
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    if dist >= ratio * DIAM[j]:
        d, m3, g3, c3, cg3, val, p, q, nq = work
        for qi in range(QW.shape[1]):
            _kernel(kind, x, nx, QP[j, qi], QN[j, qi], prm, p2, q2, series, d, m3, g3, c3, cg3, val)
            w = QW[j, qi]
            for t in range(nout):
                acc[t] += w * val[t]
        return 0
    return _adaptive(kind, x, nx, V[j], PC[j], PR[j], FN[j], prm, p2, q2, series, bary, wts, nout,
                     ratio, max_depth, acc, work)


@numba.njit(cache=True, parallel=True)
def _assemble_real(kind, self_mode, V, FN, PC, PR, QP, QN, QW, X, NX, DIAM, prm, p2, q2, series,
                   bary, wts, gx, gw, ratio, max_depth, out, fail):
    """Fill out[3i:3i+3, 3j:3j+3] with panel integrals of a 9-entry kernel.

    self_mode: 0 regular rule, 1 Duffy rule, 2 skip (left zero).
    """
    n = X.shape[0]
    for i in prange(n):
        work = _make_work()
        acc = np.zeros(27, dtype=np.complex128)
        x = X[i]
        nx = NX[i]
        for j in range(n):
            if j == i and self_mode == 2:
                continue
            st = _pair(kind, j == i and self_mode == 1, x, nx, j, V, FN, PC, PR, QP, QN, QW, DIAM, prm, p2,
                       q2, series, bary, wts, gx, gw, 9, ratio, max_depth, acc, work)
            if st != 0:
                fail[i] = j + 1
            for a in range(3):
                for b in range(3):
                    out[3 * i + a, 3 * j + b] = acc[3 * a + b].real


@numba.njit(cache=True, parallel=True)
def _assemble_complex(kind, self_mode, V, FN, PC, PR, QP, QN, QW, X, NX, DIAM, prm, p2, q2, series,
                      bary, wts, gx, gw, ratio, max_depth, out, fail):
    n = X.shape[0]
    for i in prange(n):
        work = _make_work()
        acc = np.zeros(27, dtype=np.complex128)
        x = X[i]
        nx = NX[i]
        for j in range(n):
            if j == i and self_mode == 2:
                continue
            st = _pair(kind, j == i and self_mode == 1, x, nx, j, V, FN, PC, PR, QP, QN, QW, DIAM, prm, p2,
                       q2, series, bary, wts, gx, gw, 9, ratio, max_depth, acc, work)
            if st != 0:
                fail[i] = j + 1
            for a in range(3):
                for b in range(3):
                    out[3 * i + a, 3 * j + b] = acc[3 * a + b]


@numba.njit(cache=True, parallel=True)
def _evaluate(kind, nout, pts, dens, V, FN, PC, PR, QP, QN, QW, DIAM, prm, p2, q2, series,
              bary, wts, gx, gw, ratio, max_depth, out, fail):
    """out[m, t] = sum_j integral over panel j of kernel[t = 3a+b (+k)] * dens[j, b]."""
    n = V.shape[0]
    npts = pts.shape[0]
    dummy_n = np.zeros(3)
    for m in prange(npts):
        work = _make_work()
        acc = np.zeros(27, dtype=np.complex128)
        x = pts[m]
        for j in range(n):
            st = _pair(kind, False, x, dummy_n, j, V, FN, PC, PR, QP, QN, QW, DIAM, prm, p2, q2, series,
                       bary, wts, gx, gw, nout, ratio, max_depth, acc, work)
            if st != 0:
                fail[m] = j + 1
            if nout == 9:
                for a in range(3):
                    for b in range(3):
                        out[m, a] += acc[3 * a + b] * dens[j, b]
            else:
                for a in range(3):
                    for b in range(3):
                        for k in range(3):
                            out[m, 3 * a + k] += acc[9 * a + 3 * b + k] * dens[j, b]


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------
@dataclass
class DenseBoundaryOperator:
    """Dense 3N x 3N matrix acting on panel densities."""

    matrix: np.ndarray
    kind: str
    omega: float = 0.0

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, density: np.ndarray) -> np.ndarray:
        dens = np.asarray(density)
        flat = dens.reshape(-1) if dens.ndim == 2 else dens
        return (self.matrix @ flat).reshape(-1, 3)

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.matrix)):
            raise QuadratureError(f"non-finite entries in {self.kind}")


def _run_assembly(mesh: SurfaceMesh, medium: ElasticMedium, kind: int, self_mode: int, omega: float = 0.0,
                  dtype=np.float64, ratio: float = NEAR_RATIO, max_depth: int = MAX_DEPTH) -> np.ndarray:
    pd = panel_data(mesh)
    n = mesh.n_panels
    out = np.zeros((3 * n, 3 * n), dtype=dtype)
    fail = np.zeros(n, dtype=np.int64)
    gx, gw = _duffy_rule()
    p2, q2 = _series2(medium)
    series = _series_table(medium.lam, medium.mu, medium.rho)
    fn = _assemble_real if dtype == np.float64 else _assemble_complex
    fn(kind, self_mode, pd.V, pd.FN, pd.PC, pd.PR, pd.QP, pd.QN, pd.QW, pd.X, pd.NX, pd.DIAM,
       _params(medium, omega), p2, q2, series, TRI7_BARY, TRI7_WEIGHTS, gx, gw, ratio, max_depth, out, fail)
    bad = np.nonzero(fail)[0]
    if len(bad):
        i = int(bad[0])
        raise QuadratureError(
            f"adaptive quadrature did not converge for target panel {i} and source panel {int(fail[i]) - 1}"
        )
    return out


def assemble_single_layer(mesh: SurfaceMesh, medium: ElasticMedium, omega: float = 0.0,
                          ratio: float = NEAR_RATIO) -> DenseBoundaryOperator:
    """Collocation matrix of S_D (omega = 0, real) or S_D^omega (complex)."""
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    if omega == 0:
        mat = _run_assembly(mesh, medium, K_KELVIN, 1, ratio=ratio)
        op = DenseBoundaryOperator(mat, "S_D", 0.0)
    else:
        mat = _run_assembly(mesh, medium, K_DYNAMIC, 1, omega=omega, dtype=np.complex128, ratio=ratio)
        op = DenseBoundaryOperator(mat, "S_D^omega", float(omega))
    op.check_finite()
    return op


def assemble_series_single_layer(mesh: SurfaceMesh, medium: ElasticMedium, n: int) -> DenseBoundaryOperator:
    """S_{D,n} for n in {1, 2}: Gamma_1 is constant, Gamma_2 is continuous."""
    if n == 1:
        P, _ = series_coefficients(medium.lam, medium.mu, medium.rho, 1)
        A = mesh.areas
        mat = P * np.kron(np.ones((mesh.n_panels, 1)) * A[None, :], np.eye(3))
        return DenseBoundaryOperator(mat.astype(complex), "S_D,1")
    if n == 2:
        mat = _run_assembly(mesh, medium, K_SERIES2, 1)
        return DenseBoundaryOperator(mat, "S_D,2")
    raise ValueError("only n = 1, 2 are assembled")


def assemble_double_layer(mesh: SurfaceMesh, medium: ElasticMedium, ratio: float = NEAR_RATIO) -> DenseBoundaryOperator:
    """K_D with translation subtraction (see module docstring)."""
    D = _run_assembly(mesh, medium, K_DOUBLE, 2, ratio=ratio)
    n = mesh.n_panels
    comp = mesh.component
    Dv = D.reshape(n, 3, n, 3)
    for c in np.unique(comp):
        sel = np.nonzero(comp == c)[0]
        # row sums over same-component source panels (self block is zero)
        rs = Dv[sel][:, :, sel, :].sum(axis=2)
        for k, i in enumerate(sel):
            Dv[i, :, i, :] = 0.5 * np.eye(3) - rs[k]
    op = DenseBoundaryOperator(D, "K_D")
    op.check_finite()
    return op


def adjoint(op: DenseBoundaryOperator, mesh: SurfaceMesh, kind: str) -> DenseBoundaryOperator:
    """Transpose with respect to the area-weighted L2 inner product."""
    w = np.repeat(mesh.areas, 3)
    mat = op.matrix.T * w[None, :]
    mat /= w[:, None]
    return DenseBoundaryOperator(np.ascontiguousarray(mat), kind, op.omega)


def assemble_np_adjoint_static(mesh: SurfaceMesh, medium: ElasticMedium, ratio: float = NEAR_RATIO,
                               method: str = "direct") -> DenseBoundaryOperator:
    """Static Neumann-Poincare operator K*_D.

    method="transpose": weighted transpose of the translation-regularized K_D.
    method="direct": collocation of K*_D itself, with the principal value over
    the self panel evaluated by singularity subtraction in polar coordinates.
    """
    if method == "transpose":
        return adjoint(assemble_double_layer(mesh, medium, ratio=ratio), mesh, "K*_D")
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    mat = _run_assembly(mesh, medium, K_NP, 1, ratio=ratio)
    op = DenseBoundaryOperator(mat, "K*_D")
    op.check_finite()
    return op


def assemble_np_adjoint_term2(mesh: SurfaceMesh, medium: ElasticMedium) -> DenseBoundaryOperator:
    """K*_{D,2}: bounded kernel; the self panel still goes through the polar rule
    because the kernel is discontinuous at the collocation point."""
    mat = _run_assembly(mesh, medium, K_SERIES2_TRACTION, 1)
    op = DenseBoundaryOperator(mat, "K*_D,2")
    op.check_finite()
    return op


# ---------------------------------------------------------------------------
# Solving
# ---------------------------------------------------------------------------
@dataclass
class SingleLayerSolver:
    """Cached LU factorization of the static single layer."""

    lu: tuple
    n_dof: int
    rcond: float
    norm1: float
    _matrix: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def factor(cls, S: DenseBoundaryOperator, keep_matrix: bool = False,
               condition_limit: float = CONDITION_LIMIT) -> "SingleLayerSolver":
        if S.kind != "S_D":
            raise ValueError(f"expected a static single layer, got {S.kind}")
        A = S.matrix
        norm1 = float(np.abs(A).sum(axis=0).max())
        kept = A.copy() if keep_matrix else None
        lu = sla.lu_factor(A, overwrite_a=not keep_matrix, check_finite=False)
        gecon = sla.get_lapack_funcs("gecon", (lu[0],))
        rcond, info = gecon(lu[0], norm1, norm="1")
        if rcond == 0 or 1.0 / rcond > condition_limit:
            raise IllConditionedError(
                f"single layer condition estimate {1.0 / max(rcond, 1e-300):.3e} exceeds {condition_limit:.1e}"
            )
        logger.info("single layer factored: n_dof=%d cond1~%.3e", A.shape[0], 1.0 / rcond)
        return cls(lu=lu, n_dof=A.shape[0], rcond=float(rcond), norm1=norm1, _matrix=kept)

    @property
    def condition(self) -> float:
        return 1.0 / self.rcond

    def solve(self, trace: np.ndarray) -> np.ndarray:
        """Density(ies) phi with S phi = trace; trace shape (N, 3) or (k, N, 3)."""
        t = np.asarray(trace)
        if t.ndim == 2:
            return sla.lu_solve(self.lu, t.reshape(-1)).reshape(-1, 3)
        rhs = t.reshape(t.shape[0], -1).T
        sol = sla.lu_solve(self.lu, rhs)
        return sol.T.reshape(t.shape)


def solve_single_layer(solver: SingleLayerSolver, trace: np.ndarray) -> np.ndarray:
    return solver.solve(trace)


# ---------------------------------------------------------------------------
# Off-surface evaluation
# ---------------------------------------------------------------------------
def _evaluate_generic(mesh, medium, omega, density, points, gradient, ratio=NEAR_RATIO, max_depth=MAX_DEPTH):
    pd = panel_data(mesh)
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    dens = np.ascontiguousarray(np.asarray(density, dtype=complex).reshape(-1, 3))
    if dens.shape[0] != mesh.n_panels:
        raise ValueError("density does not match the mesh")
    if mesh.curved:
        for c, (cc, rr) in enumerate(zip(mesh.sphere_center, mesh.sphere_radius)):
            r = np.linalg.norm(pts - cc, axis=1)
            if np.any(np.abs(r - rr) < 1e-12 * rr):
                raise EvaluationError("evaluation point lies on the boundary")
    if gradient:
        kind, nout = (K_KELVIN_GRAD if omega == 0 else K_DYNAMIC_GRAD), 27
    else:
        kind, nout = (K_KELVIN if omega == 0 else K_DYNAMIC), 9
    out = np.zeros((len(pts), nout // 3), dtype=np.complex128)
    fail = np.zeros(len(pts), dtype=np.int64)
    gx, gw = _duffy_rule()
    p2, q2 = _series2(medium)
    _evaluate(kind, nout, pts, dens, pd.V, pd.FN, pd.PC, pd.PR, pd.QP, pd.QN, pd.QW, pd.DIAM,
              _params(medium, omega), p2, q2, _series_table(medium.lam, medium.mu, medium.rho),
              TRI7_BARY, TRI7_WEIGHTS, gx, gw, ratio, max_depth, out, fail)
    if np.any(fail):
        m = int(np.nonzero(fail)[0][0])
        raise EvaluationError(f"point {m} is too close to panel {int(fail[m]) - 1} for adaptive quadrature")
    if gradient:
        return out.reshape(len(pts), 3, 3)
    return out


def evaluate_potential(mesh: SurfaceMesh, medium: ElasticMedium, omega: float, density: np.ndarray,
                       points: np.ndarray, ratio: float = NEAR_RATIO) -> np.ndarray:
    """S^omega[density] at the points, shape (M, 3) complex."""
    return _evaluate_generic(mesh, medium, omega, density, points, False, ratio)


def evaluate_potential_gradient(mesh: SurfaceMesh, medium: ElasticMedium, omega: float, density: np.ndarray,
                                points: np.ndarray, ratio: float = NEAR_RATIO) -> np.ndarray:
    """grad S^omega[density]; entry [m, i, k] = d u_i / d x_k at point m."""
    return _evaluate_generic(mesh, medium, omega, density, points, True, ratio)


# ---------------------------------------------------------------------------
# Binary dump
# ---------------------------------------------------------------------------
_MAGIC = b"EDOP"


def write_operator(op: DenseBoundaryOperator, path) -> None:
    """Little-endian dump: magic, int32 rows, int32 cols, int32 dtype (0 real, 1 complex),
    int32 tag length, tag bytes (utf-8), float64 omega, row-major entries."""
    mat = np.ascontiguousarray(op.matrix)
    is_c = np.iscomplexobj(mat)
    tag = op.kind.encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<iiii", mat.shape[0], mat.shape[1], int(is_c), len(tag)))
        fh.write(tag)
        fh.write(struct.pack("<d", op.omega))
        fh.write(mat.astype("<c16" if is_c else "<f8").tobytes(order="C"))


def read_operator(path) -> DenseBoundaryOperator:
    with open(Path(path), "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not an operator dump")
        rows, cols, is_c, ntag = struct.unpack("<iiii", fh.read(16))
        tag = fh.read(ntag).decode("utf-8")
        (omega,) = struct.unpack("<d", fh.read(8))
        dt = np.dtype("<c16" if is_c else "<f8")
        mat = np.frombuffer(fh.read(rows * cols * dt.itemsize), dtype=dt).reshape(rows, cols).copy()
    return DenseBoundaryOperator(mat, tag, omega)
