"""Eigenmode fields in the gap, blow-up sweeps and the analytic gap predictors.

Modes are evaluated at leading order, u_i = S_D[phi_i] with
phi_i = sum_k a_k zeta_k.  Gradients are sampled at midline points of the
gap (halfway between the two boundary graphs) so that every probe keeps a
distance of at least eps/2 from both surfaces.

Probe kinds:
    "center"  : x' = 0
    "offaxis" : |x'| = sqrt(eps / kappa), along e1 (along e2 for modes 9..12)
    "sup"     : maximum over a fixed narrow-region sample with |x'| <= R0
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .boundary_ops import EvaluationError, evaluate_potential, evaluate_potential_gradient
from .geometry import DimerConfig, DimerGeometry, narrow_region_points
from .kernels import ElasticMedium
from .resonance import MODE_BLOCK, ModeEntry, beta_as_a_vector, generalized_spectrum
from .rigid_space import _M, CapacityData, DensityBasis, compute_capacity, generators, xi_at

logger = logging.getLogger(__name__)

PROBE_KINDS = ("center", "offaxis", "sup")
SUP_SAMPLES = 64

# expected exponent of |grad u_i| in eps at its natural probe
PREDICTED_EXPONENT = {1: -1.0, 6: -1.0, 10: -1.0, 3: -0.5, 7: -0.5, 8: -0.5, 11: -0.5, 12: -0.5,
                      2: 0.0, 4: 0.0, 5: -1.0, 9: -1.0}
# modes whose rate carries an extra 1/|log eps|
LOG_CORRECTED = (5, 9)
DEFAULT_PROBE = {1: "center", 6: "center", 10: "center", 5: "center", 9: "center",
                 3: "offaxis", 7: "offaxis", 8: "offaxis", 11: "offaxis", 12: "offaxis",
                 2: "sup", 4: "sup"}
LARGEST_EPS_WEIGHT = 0.5


@dataclass
class EigenmodeField:
    mode: int
    a_vector: np.ndarray
    density: np.ndarray  # (N, 3)
    geometry: DimerGeometry
    medium: ElasticMedium

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return evaluate_potential(self.geometry.mesh, self.medium, 0.0, self.density, points).real

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """[m, i, k] = d u_i / d x_k."""
        return evaluate_potential_gradient(self.geometry.mesh, self.medium, 0.0, self.density, points).real

    def predicted_trace(self, points: np.ndarray, comp: np.ndarray) -> np.ndarray:
        """The rigid combination sum_k a_k xi_k at boundary points."""
        return np.einsum("k,kmd->md", self.a_vector, xi_at(points, comp))


def asymptotic_a_vector(mode: int, betas: Dict[int, Dict[int, np.ndarray]]) -> np.ndarray:
    blk, idx = MODE_BLOCK[mode]
    return beta_as_a_vector(blk, betas[blk][idx])


def eigenmode_trace(entry, density: DensityBasis, geometry: DimerGeometry, medium: ElasticMedium,
                    mode: Optional[int] = None) -> EigenmodeField:
    """Mode density from a spectrum entry (numerical path) or a raw a-vector (asymptotic path)."""
    if isinstance(entry, ModeEntry):
        a, m = entry.a_vector, entry.mode
    else:
        a, m = np.asarray(entry, dtype=float), (mode or 0)
    phi = np.einsum("k,knd->nd", a, density.zeta)
    if not np.all(np.isfinite(phi)):
        raise ValueError("non-finite mode density")
    return EigenmodeField(m, np.asarray(a, dtype=float), phi, geometry, medium)


def trace_error(fld: EigenmodeField, offset: float = 1e-3, exclude_radius: Optional[float] = None,
                stride: int = 7) -> float:
    """Relative mismatch between u just outside the surface and the rigid trace.

    Points within exclude_radius of the contact axis (default R0) are skipped,
    where the field varies on the gap scale.
    """
    mesh = fld.geometry.mesh
    x = mesh.centroids[::stride]
    n = mesh.normals[::stride]
    comp = mesh.component[::stride]
    r0 = fld.geometry.chart.r0 if exclude_radius is None else exclude_radius
    keep = np.hypot(x[:, 0], x[:, 1]) > r0
    x, n, comp = x[keep], n[keep], comp[keep]
    u = fld.evaluate(x + offset * fld.geometry.radius * n)
    ref = fld.predicted_trace(x, comp)
    return float(np.linalg.norm(u - ref) / np.linalg.norm(ref))


def midline_point(geometry: DimerGeometry, xprime) -> np.ndarray:
    xp = np.asarray(xprime, dtype=float)
    ch = geometry.chart
    if np.hypot(*xp) > ch.r0:
        raise EvaluationError(f"x'={tuple(xp)} outside the narrow region |x'| < {ch.r0}")
    return np.array([xp[0], xp[1], 0.5 * (ch.upper(xp) + ch.lower(xp))])


def gap_gradient(fld: EigenmodeField, geometry: DimerGeometry, xprime) -> float:
    """Frobenius norm of grad u at the midline point above x'."""
    p = midline_point(geometry, xprime)
    return float(np.linalg.norm(fld.gradient(p[None, :])[0]))


def probe_xprime(kind: str, mode: int, geometry: DimerGeometry) -> np.ndarray:
    if kind == "center":
        return np.zeros(2)
    if kind == "offaxis":
        r = math.sqrt(geometry.gap / geometry.chart.kappa)
        return np.array([0.0, r]) if mode in (9, 10, 11, 12) else np.array([r, 0.0])
    if kind.startswith("r="):
        # fixed radius along the same direction as the off-axis probe
        r = float(kind[2:])
        if not 0.0 <= r < geometry.chart.r0:
            raise ValueError(f"probe radius {r} lies outside the gap chart (r0 = {geometry.chart.r0})")
        return np.array([0.0, r]) if mode in (9, 10, 11, 12) else np.array([r, 0.0])
    raise ValueError(f"probe {kind!r} is not a single point")


def probe_gradient(fld: EigenmodeField, geometry: DimerGeometry, kind: str) -> float:
    if kind == "sup":
        pts = narrow_region_points(geometry, geometry.chart.r0, SUP_SAMPLES)
        return float(np.linalg.norm(fld.gradient(pts), axis=(1, 2)).max())
    return gap_gradient(fld, geometry, probe_xprime(kind, fld.mode, geometry))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------
@dataclass
class ExponentFit:
    mode: int
    probe: str
    slope: float
    intercept: float
    residual: float
    predicted: float
    log_corrected: bool = False


def weighted_loglog_fit(eps: Sequence[float], values: Sequence[float],
                        largest_weight: float = LARGEST_EPS_WEIGHT) -> Tuple[float, float, float]:
    """Slope, intercept and weighted rms residual of log(values) against log(eps)."""
    x = np.log(np.asarray(eps, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    w = np.ones_like(x)
    w[np.argmax(x)] = largest_weight
    sw = np.sqrt(w)
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    res = float(np.sqrt(np.sum(w * (A @ coef - y) ** 2) / np.sum(w)))
    return float(coef[0]), float(coef[1]), res


@dataclass
class BlowupSweep:
    epsilons: List[float]
    samples: Dict[Tuple[int, str], Dict[float, float]]
    fits: Dict[Tuple[int, str], ExponentFit] = field(default_factory=dict)
    failures: Dict[float, str] = field(default_factory=dict)
    probe_failures: Dict[Tuple[float, int, str], str] = field(default_factory=dict)

    def series(self, mode: int, probe: str) -> Tuple[np.ndarray, np.ndarray]:
        d = self.samples[(mode, probe)]
        e = np.array(sorted(d))
        return e, np.array([d[x] for x in e])

    def rows(self) -> List[Tuple]:
        out = []
        for (mode, probe), d in sorted(self.samples.items()):
            fit = self.fits.get((mode, probe))
            for e in sorted(d):
                out.append((e, mode, probe, d[e], PREDICTED_EXPONENT.get(mode, float("nan")),
                            fit.slope if fit else float("nan")))
        return out


def fit_sweep(sweep: BlowupSweep) -> None:
    for (mode, probe), d in sweep.samples.items():
        e = np.array(sorted(d))
        if len(e) < 2:
            continue
        v = np.array([d[x] for x in e])
        corrected = mode in LOG_CORRECTED and probe != "sup"
        if corrected:
            v = v * np.abs(np.log(e))
        if np.any(v <= 0):
            continue
        s, c, r = weighted_loglog_fit(e, v)
        sweep.fits[(mode, probe)] = ExponentFit(mode, probe, s, c, r, PREDICTED_EXPONENT.get(mode, float("nan")),
                                                corrected)


def blowup_sweep(config: DimerConfig, medium: ElasticMedium, eta: float, modes: Iterable[int],
                 epsilon_list: Sequence[float], probes: Optional[Dict[int, Sequence[str]]] = None,
                 capacity: Optional[Callable[[float], CapacityData]] = None) -> BlowupSweep:
    """Full pipeline per gap, gradient samples per mode and probe, log-log fits.

    probes maps a mode to the probe kinds to sample (default: its natural
    probe).  capacity, if given, supplies precomputed per-gap data.
    """
    modes = list(modes)
    eps_list = [float(e) for e in epsilon_list]
    sweep = BlowupSweep(eps_list, {})
    if not modes:
        return sweep
    if len(eps_list) < 4:
        raise ValueError("sweep requires >= 4 gaps")
    for eps in eps_list:
        try:
            if capacity is not None:
                cap = capacity(eps)
            else:
                cfg = DimerConfig(**{**config.__dict__, "gap": eps})
                cap = compute_capacity(cfg, medium)
            spec = generalized_spectrum(cap.E, cap.B, medium, eta)
            for m in modes:
                fld = eigenmode_trace(spec.mode(m), cap.density, cap.geometry, medium)
                kinds = (probes or {}).get(m, (DEFAULT_PROBE[m],))
                for kind in kinds:
                    try:
                        val = probe_gradient(fld, cap.geometry, kind)
                    except (EvaluationError, ValueError) as exc:
                        logger.warning("eps=%g mode %d probe %s: %s", eps, m, kind, exc)
                        sweep.probe_failures[(eps, m, kind)] = str(exc)
                        continue
                    sweep.samples.setdefault((m, kind), {})[eps] = val
        except Exception as exc:  # noqa: BLE001 - keep partial results of the other gaps
            logger.error("eps=%g failed: %s", eps, exc)
            sweep.failures[eps] = f"{type(exc).__name__}: {exc}"
    fit_sweep(sweep)
    return sweep


# ---------------------------------------------------------------------------
# Analytic predictors
# ---------------------------------------------------------------------------
def _f(v):
    return 0.5 * (v - 0.5) ** 2 - 0.125


def _df(v):
    return v - 0.5


def vbar(geometry: DimerGeometry, x: np.ndarray) -> np.ndarray:
    """Linear interpolant in x3 between the graphs: 1 on the upper ball, 0 on the lower."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    ch = geometry.chart
    xp = x[:, :2]
    return (x[:, 2] + 0.5 * ch.gap - ch.h2(xp)) / ch.delta(xp)


def _vbar_grad(geometry: DimerGeometry, x: np.ndarray):
    ch = geometry.chart
    xp = x[:, :2]
    dl = ch.delta(xp)
    v = (x[:, 2] + 0.5 * ch.gap - ch.h2(xp)) / dl
    gh2 = -ch.grad_h1(xp)
    gd = ch.grad_delta(xp)
    g = np.empty((len(x), 3))
    g[:, :2] = -gh2 / dl[:, None] - v[:, None] * gd / dl[:, None]
    g[:, 2] = 1.0 / dl
    return v, g


def _check_chart(geometry: DimerGeometry, x: np.ndarray) -> None:
    ch = geometry.chart
    r = np.hypot(x[:, 0], x[:, 1])
    if np.any(r >= 2 * ch.r0):
        raise ValueError("point outside the chart |x'| < 2 R0")
    lo, hi = ch.lower(x[:, :2]), ch.upper(x[:, :2])
    if np.any(x[:, 2] < lo - 1e-14) or np.any(x[:, 2] > hi + 1e-14):
        raise ValueError("point outside the gap between the two graphs")


def aux_gradient_predictor(geometry: DimerGeometry, medium: ElasticMedium, i: int, x) -> np.ndarray:
    """Gradient [m, a, k] = d v_i,a / d x_k of the auxiliary field v_i (i = 1..12)."""
    if not 1 <= i <= 12:
        raise ValueError("i must be in 1..12")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _check_chart(geometry, x)
    lam, mu = medium.lam, medium.mu
    v, gv = _vbar_grad(geometry, x)
    if i > 6:
        v, gv = 1.0 - v, -gv
    base = (i - 1) % 6
    kap = generators(x)  # (6, M, 3)
    out = np.einsum("ma,mk->mak", kap[base], gv) + v[:, None, None] * _M[base][None]
    ch = geometry.chart
    xp = x[:, :2]
    gd = ch.grad_delta(xp)
    hd = ch.hess_delta(xp)
    f, df = _f(v), _df(v)
    if base in (0, 1):
        c = (lam + mu) / (lam + 2 * mu)
        # f(v) d_i delta e3
        grad_scalar = df[:, None] * gv * gd[:, base, None]
        grad_scalar[:, :2] += f[:, None] * hd[:, base, :]
        out[:, 2, :] += c * grad_scalar
    elif base == 2:
        c = (lam + mu) / mu
        for j in (0, 1):
            grad_scalar = df[:, None] * gv * gd[:, j, None]
            grad_scalar[:, :2] += f[:, None] * hd[:, j, :]
            out[:, j, :] += c * grad_scalar
    return out


def aux_field(geometry: DimerGeometry, medium: ElasticMedium, i: int, x) -> np.ndarray:
    """Values v_i(x), shape (M, 3), inside the chart."""
    if not 1 <= i <= 12:
        raise ValueError("i must be in 1..12")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _check_chart(geometry, x)
    lam, mu = medium.lam, medium.mu
    v = vbar(geometry, x)
    if i > 6:
        v = 1.0 - v
    base = (i - 1) % 6
    out = v[:, None] * generators(x)[base]
    gd = geometry.chart.grad_delta(x[:, :2])
    f = _f(v)
    if base in (0, 1):
        out[:, 2] += (lam + mu) / (lam + 2 * mu) * f * gd[:, base]
    elif base == 2:
        out[:, :2] += (lam + mu) / mu * f[:, None] * gd
    return out
