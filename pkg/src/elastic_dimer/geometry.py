"""Sphere dimer geometry, graded surface meshes and the gap chart.

The dimer consists of two balls of radius R centred at (0, 0, +-(R + eps/2)),
so the closest points sit at (0, 0, +-eps/2) and the gap is eps.

Meshing
-------
Each sphere is meshed on one eighth of its surface (the wedge 0 <= x2 <= x1)
and replicated by the eight symmetries of the square acting on (x1, x2).  The
wedge is built from two spherical triangles, uniformly split ``refinement``
times, then refined by conforming longest-edge bisection until every panel
meets a size target that shrinks linearly towards the contact pole (the
target also shrinks by sqrt(2) per refinement level).  Because
the wedge boundaries lie on mirror planes, the replicated mesh is conforming
and exactly invariant under x1 -> -x1, x2 -> -x2 and x1 <-> x2.  The lower
sphere is the mirror image of the upper one under x3 -> -x3.

Panels are stored as flat triangles.  Quadrature, however, runs on the exact
sphere: points of the flat triangle are projected radially, with the area
Jacobian of the projection folded into the weights.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Defaults
# ---------------------------------------------------------------------------
DEFAULT_GRADING_FACTOR: float = 0.5
DEFAULT_GRADING_EXPONENT: float = 2.0
DEFAULT_MAX_PANELS: int = 4096
REFERENCE_LEVEL: int = 2

# Degree-5 symmetric 7-point rule on the reference triangle (barycentric).
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
TRI7_BARY = np.array(
    [
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [_A1, _B1, _B1],
        [_B1, _A1, _B1],
        [_B1, _B1, _A1],
        [_A2, _B2, _B2],
        [_B2, _A2, _B2],
        [_B2, _B2, _A2],
    ]
)
TRI7_WEIGHTS = np.array(
    [0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3
)


class ResourceError(RuntimeError):
    """Raised when a discretization would exceed the configured size cap."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DimerConfig:
    """Geometric and meshing parameters of a sphere dimer."""

    radius: float = 1.0
    gap: float = 1e-3
    refinement: int = 2
    grading_exponent: float = DEFAULT_GRADING_EXPONENT
    grading_factor: float = DEFAULT_GRADING_FACTOR
    chart_radius: Optional[float] = None
    max_panels: int = DEFAULT_MAX_PANELS

    def validate(self) -> None:
        if not np.isfinite(self.gap) or self.gap <= 0:
            raise ValueError(f"gap must be positive, got {self.gap}")
        if not np.isfinite(self.radius) or self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if int(self.refinement) != self.refinement or self.refinement < 0:
            raise ValueError(f"refinement must be a nonnegative integer, got {self.refinement}")
        if self.grading_exponent <= 0:
            raise ValueError("grading_exponent must be positive")
        if not 0 < self.grading_factor <= 1:
            raise ValueError("grading_factor must lie in (0, 1]")
        if self.chart_radius is not None and not 0 < self.chart_radius <= self.radius:
            raise ValueError("chart_radius must lie in (0, R]")
        if self.max_panels < 1:
            raise ValueError("max_panels must be positive")

    @property
    def r0(self) -> float:
        return 0.5 * self.radius if self.chart_radius is None else self.chart_radius

    @property
    def kappa(self) -> float:
        return 1.0 / self.radius


# ---------------------------------------------------------------------------
# Surface mesh
# ---------------------------------------------------------------------------
@dataclass
class SurfaceMesh:
    """Triangulated closed surfaces, one or more components.

    Attributes
    ----------
    nodes : (M, 3) float array
    triangles : (N, 3) int array, counter-clockwise seen from outside
    component : (N,) int array, component id of each panel (0 or 1)
    sphere_center, sphere_radius : per-component sphere data, or None
        When present, quadrature is carried out on the exact sphere by radial
        projection of the flat panels.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    component: np.ndarray
    sphere_center: Optional[np.ndarray] = None
    sphere_radius: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.component = np.ascontiguousarray(self.component, dtype=np.int64)
        if self.sphere_center is not None:
            self.sphere_center = np.asarray(self.sphere_center, dtype=float).reshape(-1, 3)
            self.sphere_radius = np.asarray(self.sphere_radius, dtype=float).reshape(-1)

    # -- sizes ---------------------------------------------------------------
    @property
    def n_panels(self) -> int:
        return len(self.triangles)

    @property
    def n_dof(self) -> int:
        return 3 * self.n_panels

    @property
    def n_components(self) -> int:
        return int(self.component.max()) + 1 if self.n_panels else 0

    @property
    def curved(self) -> bool:
        return self.sphere_center is not None

    # -- flat panel data -----------------------------------------------------
    @cached_property
    def vertices(self) -> np.ndarray:
        """(N, 3, 3) corner coordinates per panel."""
        return self.nodes[self.triangles]

    @cached_property
    def flat_centroids(self) -> np.ndarray:
        return self.vertices.mean(axis=1)

    @cached_property
    def _flat_cross(self) -> np.ndarray:
        v = self.vertices
        return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])

    @cached_property
    def flat_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._flat_cross, axis=1)

    @cached_property
    def flat_normals(self) -> np.ndarray:
        return self._flat_cross / (2.0 * self.flat_areas[:, None])

    @cached_property
    def diameters(self) -> np.ndarray:
        v = self.vertices
        e = np.stack(
            [
                np.linalg.norm(v[:, 1] - v[:, 0], axis=1),
                np.linalg.norm(v[:, 2] - v[:, 1], axis=1),
                np.linalg.norm(v[:, 0] - v[:, 2], axis=1),
            ],
            axis=1,
        )
        return e.max(axis=1)

    # -- surface (possibly curved) data --------------------------------------
    def panel_centers(self) -> np.ndarray:
        """(N, 3) sphere centre per panel (zeros when flat)."""
        if not self.curved:
            return np.zeros((self.n_panels, 3))
        return self.sphere_center[self.component]

    def panel_radii(self) -> np.ndarray:
        """(N,) sphere radius per panel; 0 marks a flat panel."""
        if not self.curved:
            return np.zeros(self.n_panels)
        return self.sphere_radius[self.component]

    def map_points(self, flat_pts: np.ndarray, panel_ids: np.ndarray):
        """Map points on flat panels to the surface.

        Returns (points, unit normals, area Jacobians).
        """
        flat_pts = np.asarray(flat_pts, dtype=float)
        n_f = self.flat_normals[panel_ids]
        if not self.curved:
            jac = np.ones(flat_pts.shape[:-1])
            return flat_pts, np.broadcast_to(n_f, flat_pts.shape).copy(), jac
        c = self.panel_centers()[panel_ids]
        r = self.panel_radii()[panel_ids]
        d = flat_pts - c
        dn = np.linalg.norm(d, axis=-1)
        nrm = d / dn[..., None]
        pts = c + r[..., None] * nrm
        jac = r**2 * np.abs(np.sum(n_f * d, axis=-1)) / dn**3
        return pts, nrm, jac

    @cached_property
    def _quad(self):
        v = self.vertices
        flat = np.einsum("qk,nkd->nqd", TRI7_BARY, v)
        ids = np.repeat(np.arange(self.n_panels)[:, None], 7, axis=1)
        pts, nrm, jac = self.map_points(flat, ids[..., None].squeeze(-1))
        w = TRI7_WEIGHTS[None, :] * self.flat_areas[:, None] * jac
        return pts, nrm, w

    @property
    def quad_points(self) -> np.ndarray:
        """(N, 7, 3) quadrature nodes on the surface."""
        return self._quad[0]

    @property
    def quad_normals(self) -> np.ndarray:
        return self._quad[1]

    @property
    def quad_weights(self) -> np.ndarray:
        """(N, 7) quadrature weights (surface measure)."""
        return self._quad[2]

    @cached_property
    def _colloc(self):
        ids = np.arange(self.n_panels)
        return self.map_points(self.flat_centroids, ids)

    @property
    def centroids(self) -> np.ndarray:
        """(N, 3) collocation points: panel centroids mapped to the surface."""
        return self._colloc[0]

    @property
    def normals(self) -> np.ndarray:
        """(N, 3) outward unit normals at the collocation points."""
        return self._colloc[1]

    @cached_property
    def areas(self) -> np.ndarray:
        """(N,) panel areas on the surface."""
        return self.quad_weights.sum(axis=1)

    # -- checks ----------------------------------------------------------------
    def euler_characteristic(self, comp: int) -> int:
        tri = self.triangles[self.component == comp]
        verts = np.unique(tri)
        edges = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
        n_edges = len(np.unique(edges, axis=0))
        return len(verts) - n_edges + len(tri)

    def flat_volume(self, comp: int) -> float:
        sel = self.component == comp
        return float(np.sum(self.flat_areas[sel] * np.sum(self.flat_normals[sel] * self.flat_centroids[sel], axis=1)) / 3.0)

    def surface_volume(self, comp: int) -> float:
        """(1/3) integral of x.nu over the component using the surface quadrature."""
        sel = self.component == comp
        xn = np.sum(self.quad_points[sel] * self.quad_normals[sel], axis=-1)
        return float(np.sum(self.quad_weights[sel] * xn) / 3.0)

    def validate(self, tol: float = 1e-9) -> None:
        """Raise ValueError if the mesh is not a set of closed oriented surfaces."""
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be an (N, 3) array")
        if self.component.shape != (self.n_panels,):
            raise ValueError("component must have one entry per panel")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.nodes):
            raise ValueError("triangle index out of range")
        if np.any(self.flat_areas <= 0):
            raise ValueError("degenerate panel")
        for c in range(self.n_components):
            chi = self.euler_characteristic(c)
            if chi != 2:
                raise ValueError(f"component {c} has Euler characteristic {chi}, expected 2")
            sel = self.component == c
            s = np.abs((self.flat_areas[sel, None] * self.flat_normals[sel]).sum(axis=0)).max()
            if s > tol * max(1.0, self.flat_areas[sel].sum()):
                raise ValueError(f"component {c} is not closed: sum(area*normal) = {s:.3e}")
            if self.flat_volume(c) <= 0:
                raise ValueError(f"component {c} is inward oriented")


# ---------------------------------------------------------------------------
# Gap chart
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GapChart:
    """Graph description of the two facing surfaces near the contact axis.

    The lower surface of the upper ball is x3 = eps/2 + h1(x'), the upper
    surface of the lower ball is x3 = -eps/2 + h2(x').
    """

    radius: float
    gap: float
    r0: float

    @property
    def kappa(self) -> float:
        return 1.0 / self.radius

    def _rho2(self, xp) -> np.ndarray:
        xp = np.asarray(xp, dtype=float)
        return np.sum(xp * xp, axis=-1)

    def h1(self, xp) -> np.ndarray:
        r2 = self._rho2(xp)
        if np.any(r2 > self.radius**2):
            raise ValueError("x' outside the graph domain")
        # R - sqrt(R^2 - r^2) written without cancellation
        return r2 / (self.radius + np.sqrt(self.radius**2 - r2))

    def h2(self, xp) -> np.ndarray:
        return -self.h1(xp)

    def delta(self, xp) -> np.ndarray:
        return self.gap + self.h1(xp) - self.h2(xp)

    def grad_h1(self, xp) -> np.ndarray:
        xp = np.asarray(xp, dtype=float)
        s = np.sqrt(self.radius**2 - self._rho2(xp))
        return xp / s[..., None]

    def hess_h1(self, xp) -> np.ndarray:
        xp = np.asarray(xp, dtype=float)
        s = np.sqrt(self.radius**2 - self._rho2(xp))[..., None, None]
        return np.eye(2) / s + xp[..., :, None] * xp[..., None, :] / s**3

    def grad_delta(self, xp) -> np.ndarray:
        return 2.0 * self.grad_h1(xp)

    def hess_delta(self, xp) -> np.ndarray:
        return 2.0 * self.hess_h1(xp)

    def lower(self, xp) -> np.ndarray:
        """x3 of the lower boundary graph (surface of the lower ball)."""
        return -0.5 * self.gap + self.h2(xp)

    def upper(self, xp) -> np.ndarray:
        return 0.5 * self.gap + self.h1(xp)


@dataclass
class DimerGeometry:
    config: DimerConfig
    mesh: SurfaceMesh
    chart: GapChart

    @property
    def radius(self) -> float:
        return self.config.radius

    @property
    def gap(self) -> float:
        return self.config.gap

    @property
    def centers(self) -> np.ndarray:
        return self.mesh.sphere_center

    @property
    def volume(self) -> float:
        """Exact volume of one ball."""
        return 4.0 * np.pi * self.radius**3 / 3.0


# ---------------------------------------------------------------------------
# Wedge meshing on the unit sphere
# ---------------------------------------------------------------------------
def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


class _WedgeMesher:
    """Conforming longest-edge bisection on a patch of the unit sphere."""

    def __init__(self, points: List[np.ndarray], tris: List[Tuple[int, int, int]]):
        self.pts: List[np.ndarray] = list(points)
        self.tris: Dict[int, Tuple[int, int, int]] = {}
        self.edge_tris: Dict[Tuple[int, int], set] = {}
        self.mid: Dict[Tuple[int, int], int] = {}
        self._next = 0
        for t in tris:
            self._add(t)

    @staticmethod
    def _key(a: int, b: int) -> Tuple[int, int]:
        return (a, b) if a < b else (b, a)

    def _add(self, t: Tuple[int, int, int]) -> int:
        tid = self._next
        self._next += 1
        self.tris[tid] = t
        for i in range(3):
            self.edge_tris.setdefault(self._key(t[i], t[(i + 1) % 3]), set()).add(tid)
        return tid

    def _remove(self, tid: int) -> None:
        t = self.tris.pop(tid)
        for i in range(3):
            self.edge_tris[self._key(t[i], t[(i + 1) % 3])].discard(tid)

    def _midpoint(self, a: int, b: int) -> int:
        k = self._key(a, b)
        if k not in self.mid:
            self.pts.append(_unit(0.5 * (self.pts[a] + self.pts[b])))
            self.mid[k] = len(self.pts) - 1
        return self.mid[k]

    def _edge_len(self, a: int, b: int) -> float:
        return float(np.linalg.norm(self.pts[a] - self.pts[b]))

    def longest_edge(self, tid: int) -> Tuple[int, int]:
        t = self.tris[tid]
        best, best_len = None, -1.0
        for i in range(3):
            a, b = t[i], t[(i + 1) % 3]
            ln = self._edge_len(a, b)
            k = self._key(a, b)
            # deterministic tie-break on the sorted vertex pair
            if ln > best_len * (1 + 1e-12) or (abs(ln - best_len) <= 1e-12 * best_len and k < best):
                best, best_len = k, ln
        return best

    def diameter(self, tid: int) -> float:
        a, b = self.longest_edge(tid)
        return self._edge_len(a, b)

    def centroid(self, tid: int) -> np.ndarray:
        t = self.tris[tid]
        return (self.pts[t[0]] + self.pts[t[1]] + self.pts[t[2]]) / 3.0

    def _neighbor(self, tid: int, edge: Tuple[int, int]) -> Optional[int]:
        others = [o for o in self.edge_tris.get(edge, ()) if o != tid]
        return others[0] if others else None

    def _split(self, tid: int, edge: Tuple[int, int], m: int) -> None:
        t = self.tris[tid]
        for i in range(3):
            a, b, c = t[i], t[(i + 1) % 3], t[(i + 2) % 3]
            if self._key(a, b) == edge:
                self._remove(tid)
                self._add((a, m, c))
                self._add((m, b, c))
                return
        raise RuntimeError("edge not in triangle")

    def bisect(self, tid: int) -> None:
        """Longest-edge bisection keeping the mesh conforming."""
        edge = self.longest_edge(tid)
        while True:
            nb = self._neighbor(tid, edge)
            if nb is None or self.longest_edge(nb) == edge:
                break
            self.bisect(nb)
        m = self._midpoint(*edge)
        if nb is not None:
            self._split(nb, edge, m)
        self._split(tid, edge, m)

    def uniform(self) -> None:
        """Split every triangle into four."""
        old = list(self.tris.items())
        for tid, (a, b, c) in old:
            ab, bc, ca = self._midpoint(a, b), self._midpoint(b, c), self._midpoint(c, a)
            self._remove(tid)
            for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)):
                self._add(t)

    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        used = sorted(self.tris)
        return np.array(self.pts), np.array([self.tris[t] for t in used], dtype=np.int64)


def size_target(rho: np.ndarray, gap: float, radius: float, factor: float, exponent: float) -> np.ndarray:
    """Target panel diameter at chordal distance ``rho`` from the contact pole.

    Inside rho < sqrt(eps R) the target is factor*sqrt(eps R); outside it grows
    so that panel area scales like rho**exponent.
    """
    rc = np.sqrt(gap * radius)
    rho = np.maximum(np.asarray(rho, dtype=float), rc)
    return factor * rc * (rho / rc) ** (0.5 * exponent)


def level_factor(cfg: DimerConfig) -> float:
    """Grading factor at the configured level: level 2 uses ``grading_factor``,
    each further level shrinks graded panel diameters by sqrt(2)."""
    return min(1.0, cfg.grading_factor * 2.0 ** ((REFERENCE_LEVEL - cfg.refinement) / 2.0))


def _graded_unit_sphere(cfg: DimerConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Graded unit-sphere mesh with contact pole at (0, 0, -1)."""
    e1 = np.array([1.0, 0.0, 0.0])
    m = _unit(np.array([1.0, 1.0, 0.0]))
    top = np.array([0.0, 0.0, 1.0])
    bot = np.array([0.0, 0.0, -1.0])
    # orientation: counter-clockwise seen from outside
    mesher = _WedgeMesher([e1, m, top, bot], [(0, 1, 2), (1, 0, 3)])
    for _ in range(int(cfg.refinement)):
        mesher.uniform()

    gap_u = cfg.gap / cfg.radius
    cap = cfg.max_panels
    factor = level_factor(cfg)
    while True:
        marked = []
        for tid in list(mesher.tris):
            c = mesher.centroid(tid)
            rho = np.linalg.norm(c - bot)
            if mesher.diameter(tid) > size_target(rho, gap_u, 1.0, factor, cfg.grading_exponent):
                marked.append(tid)
        if not marked:
            break
        for tid in marked:
            if tid in mesher.tris:
                mesher.bisect(tid)
        if 16 * len(mesher.tris) > cap:
            raise ResourceError(
                f"mesh exceeds the panel cap of {cap} panels ({3 * cap} DOF); "
                "lower the refinement level or raise max_panels"
            )

    pts, tris = mesher.arrays()
    return _replicate_square_group(pts, tris)


def _square_group() -> List[np.ndarray]:
    """The eight symmetries of the square acting on (x1, x2)."""
    mats = []
    for swap in (False, True):
        for s1 in (1.0, -1.0):
            for s2 in (1.0, -1.0):
                m = np.diag([s1, s2, 1.0])
                if swap:
                    m = m[[1, 0, 2]]
                mats.append(m)
    return mats


def _merge_nodes(pts: np.ndarray, tris: np.ndarray, decimals: int = 12) -> Tuple[np.ndarray, np.ndarray]:
    keys = np.round(pts, decimals) + 0.0  # folds -0.0 into 0.0
    _, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    new_pts = pts[first]
    return new_pts, inv[tris]


def _replicate_square_group(pts: np.ndarray, tris: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    all_pts, all_tris = [], []
    offset = 0
    for g in _square_group():
        all_pts.append(pts @ g.T)
        t = tris + offset
        if np.linalg.det(g) < 0:
            t = t[:, [0, 2, 1]]
        all_tris.append(t)
        offset += len(pts)
    return _merge_nodes(np.vstack(all_pts), np.vstack(all_tris))


# ---------------------------------------------------------------------------
# Public builders
# ---------------------------------------------------------------------------
def build_sphere_dimer(config: DimerConfig) -> DimerGeometry:
    """Mesh the symmetric sphere dimer described by ``config``."""
    config.validate()
    R, eps = config.radius, config.gap
    unit_pts, unit_tris = _graded_unit_sphere(config)
    n_half = len(unit_tris)
    if 2 * n_half > config.max_panels:
        raise ResourceError(
            f"mesh has {2 * n_half} panels, above the cap of {config.max_panels} "
            f"panels ({3 * config.max_panels} DOF)"
        )

    c1 = np.array([0.0, 0.0, R + 0.5 * eps])
    upper = c1 + R * unit_pts
    mirror = np.diag([1.0, 1.0, -1.0])
    lower = upper @ mirror.T
    nodes = np.vstack([upper, lower])
    tris = np.vstack([unit_tris, unit_tris[:, [0, 2, 1]] + len(upper)])
    comp = np.concatenate([np.zeros(n_half, dtype=np.int64), np.ones(n_half, dtype=np.int64)])
    mesh = SurfaceMesh(
        nodes=nodes,
        triangles=tris,
        component=comp,
        sphere_center=np.array([c1, mirror @ c1]),
        sphere_radius=np.array([R, R]),
    )
    mesh.validate()
    chart = GapChart(radius=R, gap=eps, r0=config.r0)
    logger.info("dimer mesh: eps=%.3g level=%d panels=%d", eps, config.refinement, mesh.n_panels)
    return DimerGeometry(config=config, mesh=mesh, chart=chart)


def build_single_sphere(radius: float = 1.0, refinement: int = 2, center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Uniform mesh of a single sphere (used for tests and oracles)."""
    cfg = DimerConfig(radius=radius, gap=1.0, refinement=refinement, grading_factor=1.0)
    pts, tris = _graded_unit_sphere(cfg)
    c = np.asarray(center, dtype=float)
    return SurfaceMesh(
        nodes=c + radius * pts,
        triangles=tris,
        component=np.zeros(len(tris), dtype=np.int64),
        sphere_center=c[None, :],
        sphere_radius=np.array([radius]),
    )


# ---------------------------------------------------------------------------
# Symmetry
# ---------------------------------------------------------------------------
SYMMETRY_MAPS = {
    "x1,-x2,-x3": np.diag([1.0, -1.0, -1.0]),
    "-x1,x2,-x3": np.diag([-1.0, 1.0, -1.0]),
    "x1,x2,-x3": np.diag([1.0, 1.0, -1.0]),
}


@dataclass
class SymmetryReport:
    deviations: Dict[str, float]
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        self.passed = all(d <= self.tol for d in self.deviations.values())


def verify_symmetry(mesh: SurfaceMesh, tol: float = 1e-12) -> SymmetryReport:
    """Max distance from each mapped node to the nearest original node."""
    tree = cKDTree(mesh.nodes)
    dev = {}
    for name, m in SYMMETRY_MAPS.items():
        d, _ = tree.query(mesh.nodes @ m.T)
        dev[name] = float(d.max())
    return SymmetryReport(deviations=dev, tol=tol)


# ---------------------------------------------------------------------------
# Narrow region sampling
# ---------------------------------------------------------------------------
def narrow_region_points(geometry: DimerGeometry, r: float, n: int) -> np.ndarray:
    """Deterministic sample of ``n`` points in the gap region |x'| <= r.

    The first point is the gap centre (or the midline point above the first
    spiral node); the rest follow a sunflower spiral in x' with heights drawn
    from a van der Corput sequence between the two graphs.
    """
    chart = geometry.chart
    if r < 0 or r > 2 * chart.r0:
        raise ValueError(f"r={r} outside chart validity [0, {2 * chart.r0}]")
    if n < 1:
        return np.zeros((0, 3))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    k = np.arange(n)
    rad = r * np.sqrt(k / max(n - 1, 1)) if n > 1 else np.zeros(1)
    ang = golden * k
    xp = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    frac = np.array([_van_der_corput(i) for i in range(n)])
    frac = 0.1 + 0.8 * frac
    frac[0] = 0.5
    lo, hi = chart.lower(xp), chart.upper(xp)
    x3 = lo + frac * (hi - lo)
    return np.column_stack([xp, x3])


def _van_der_corput(i: int, base: int = 2) -> float:
    # index 0 maps to 0.5 so that the sequence starts at the midline
    i += 1
    v, denom = 0.0, 1.0
    while i:
        i, rem = divmod(i, base)
        denom *= base
        v += rem / denom
    return v


def solid_angle_winding(mesh: SurfaceMesh, points: np.ndarray, comp: Optional[int] = None) -> np.ndarray:
    """Generalized winding number of the flat mesh at each point (1 inside, 0 outside)."""
    sel = np.ones(mesh.n_panels, bool) if comp is None else mesh.component == comp
    v = mesh.vertices[sel]
    out = np.empty(len(points))
    for k, p in enumerate(np.asarray(points, dtype=float)):
        a, b, c = v[:, 0] - p, v[:, 1] - p, v[:, 2] - p
        la, lb, lc = (np.linalg.norm(x, axis=1) for x in (a, b, c))
        num = np.einsum("ij,ij->i", a, np.cross(b, c))
        den = la * lb * lc + np.einsum("ij,ij->i", a, b) * lc + np.einsum("ij,ij->i", b, c) * la + np.einsum("ij,ij->i", c, a) * lb
        out[k] = np.sum(2.0 * np.arctan2(num, den)) / (4.0 * np.pi)
    return out


# ---------------------------------------------------------------------------
# Mesh I/O
# ---------------------------------------------------------------------------
def write_mesh(mesh: SurfaceMesh, path) -> None:
    """Indexed-triangle text format.

    Layout::

        # elastic-dimer mesh v1
        nodes M
        x y z            (M lines)
        triangles N
        i j k comp       (N lines, zero-based)
        spheres K        (optional)
        cx cy cz R       (K lines)
    """
    path = Path(path)
    lines = ["# elastic-dimer mesh v1", f"nodes {len(mesh.nodes)}"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.nodes.tolist()]
    lines.append(f"triangles {mesh.n_panels}")
    lines += [f"{i} {j} {k} {c}" for (i, j, k), c in zip(mesh.triangles.tolist(), mesh.component.tolist())]
    if mesh.curved:
        lines.append(f"spheres {len(mesh.sphere_radius)}")
        lines += [f"{c[0]!r} {c[1]!r} {c[2]!r} {r!r}" for c, r in zip(mesh.sphere_center.tolist(), mesh.sphere_radius.tolist())]
    path.write_text("\n".join(lines) + "\n")


def read_mesh(path) -> SurfaceMesh:
    tokens = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    pos = 0

    def header(name: str) -> int:
        nonlocal pos
        if pos >= len(tokens) or tokens[pos][0] != name:
            raise ValueError(f"mesh file: expected section '{name}'")
        count = int(tokens[pos][1])
        pos += 1
        return count

    m = header("nodes")
    nodes = np.array([[float(t) for t in tok] for tok in tokens[pos : pos + m]])
    pos += m
    n = header("triangles")
    tri = np.array([[int(t) for t in tok] for tok in tokens[pos : pos + n]], dtype=np.int64)
    pos += n
    center = radius = None
    if pos < len(tokens):
        k = header("spheres")
        sph = np.array([[float(t) for t in tok] for tok in tokens[pos : pos + k]])
        center, radius = sph[:, :3], sph[:, 3]
    mesh = SurfaceMesh(nodes=nodes, triangles=tri[:, :3], component=tri[:, 3], sphere_center=center, sphere_radius=radius)
    mesh.validate()
    return mesh


def geometry_from_mesh(mesh: SurfaceMesh, config: DimerConfig) -> DimerGeometry:
    """Wrap an imported mesh with the chart of ``config``."""
    config.validate()
    return DimerGeometry(config=config, mesh=mesh, chart=GapChart(config.radius, config.gap, config.r0))
