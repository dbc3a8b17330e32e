"""Plane-wave excitation of the dimer resonances.

With G_j = integral of S_D^{-1}[u^i] . xi_j over the boundary, the leading
order modal system reads (E - rho omega^2 / eta B) a = -G.  Two evaluations
of the coefficients b_i are provided:

    "closed"   : the block closed forms (b1..b4 directly, b5..b12 through
                 the 4x4 B-column systems), pole pairing as printed
    "spectral" : b_i = eta (v_i . G) / (rho (omega^2 - omega_i^2)) with the
                 numerical B-orthonormal eigenvectors v_i

The total field outside D is u^i - S^omega[S^{-1} u^i] + sum b_i S[phi_i].
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .boundary_ops import SingleLayerSolver, evaluate_potential, evaluate_potential_gradient
from .kernels import ContrastParams, ElasticMedium
from .resonance import MODE_BLOCK, ResonanceSpectrum, beta_as_a_vector
from .rigid_space import BLOCKS, N_RIGID, CapacityData

logger = logging.getLogger(__name__)

POLE_FLOOR = 1e-3
ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class IncidentWave:
    medium: ElasticMedium
    kind: str
    direction: tuple
    polarization: tuple
    omega: float
    amplitude: complex = 1.0

    @property
    def wavenumber(self) -> float:
        return self.medium.kp(self.omega) if self.kind == "p" else self.medium.ks(self.omega)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Displacement at points x (..., 3), complex."""
        x = np.asarray(x, dtype=float)
        d = np.asarray(self.direction)
        q = np.asarray(self.polarization)
        phase = np.exp(1j * self.wavenumber * (x @ d))
        return self.amplitude * phase[..., None] * q

    def with_omega(self, omega: float) -> "IncidentWave":
        return IncidentWave(self.medium, self.kind, self.direction, self.polarization, float(omega), self.amplitude)

    def scaled(self, factor: complex) -> "IncidentWave":
        return IncidentWave(self.medium, self.kind, self.direction, self.polarization, self.omega,
                            self.amplitude * factor)


def incident_plane_wave(medium: ElasticMedium, kind: str, direction, polarization=None, omega: float = 0.05,
                        amplitude: complex = 1.0) -> IncidentWave:
    """p-wave d e^{i k_p d.x} or s-wave q e^{i k_s d.x} with q orthogonal to d."""
    if kind not in ("p", "s"):
        raise ValueError("kind must be 'p' or 's'")
    if omega <= 0:
        raise ValueError("omega must be positive")
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    if kind == "p":
        q = d
    else:
        if polarization is None:
            raise ValueError("s-waves need a polarization")
        q = np.asarray(polarization, dtype=float)
        if abs(np.linalg.norm(q) - 1.0) > 1e-12:
            raise ValueError("polarization must be a unit vector")
        if abs(q @ d) > ORTHO_TOL:
            raise ValueError("s-wave polarization must be orthogonal to the direction")
    return IncidentWave(medium, kind, tuple(d), tuple(q), float(omega), amplitude)


def navier_residual(wave: IncidentWave, points: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """|(L + rho omega^2) u^i| at points by central differences."""
    m = wave.medium
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(pts))
    E = np.eye(3)
    for n, x in enumerate(pts):
        u0 = wave.evaluate(x)
        H = np.zeros((3, 3, 3), dtype=complex)  # H[a, k, l] = d_k d_l u_a
        for k in range(3):
            for l in range(3):
                if k == l:
                    H[:, k, k] = (wave.evaluate(x + h * E[k]) - 2 * u0 + wave.evaluate(x - h * E[k])) / h**2
                else:
                    H[:, k, l] = (wave.evaluate(x + h * E[k] + h * E[l]) - wave.evaluate(x + h * E[k] - h * E[l])
                                  - wave.evaluate(x - h * E[k] + h * E[l]) + wave.evaluate(x - h * E[k] - h * E[l])
                                  ) / (4 * h * h)
        lap = np.einsum("akk->a", H)
        graddiv = np.einsum("kka->a", H)
        r = m.mu * lap + (m.lam + m.mu) * graddiv + m.rho * wave.omega**2 * u0
        out[n] = np.linalg.norm(r)
    return out


# ---------------------------------------------------------------------------
# Coefficients
# ---------------------------------------------------------------------------
@dataclass
class ScatteringSolution:
    wave: IncidentWave
    b: np.ndarray  # (12,) complex, index i-1 for mode i; nan where flagged
    a_vectors: np.ndarray  # (12, 12): row i-1 is the coefficient vector of phi_i
    G: np.ndarray  # (12,) complex
    correction: np.ndarray  # S_D^{-1}[u^i], (N, 3) complex
    flags: Dict[int, str] = field(default_factory=dict)
    method: str = "closed"
    remainder: float = 0.0
    capacity: Optional[CapacityData] = field(default=None, repr=False)

    def excited_density(self) -> np.ndarray:
        """sum_i b_i phi_i over unflagged modes, as a density (N, 3)."""
        coef = np.where(np.isfinite(self.b), self.b, 0.0)
        a = coef @ self.a_vectors
        return np.einsum("k,knd->nd", a, self.capacity.density.zeta)


def _solve_complex(solver: SingleLayerSolver, trace: np.ndarray) -> np.ndarray:
    return solver.solve(trace.real) + 1j * solver.solve(trace.imag)


def _beta_from_numerics(spectrum: ResonanceSpectrum) -> Dict[int, Dict[int, np.ndarray]]:
    """beta vectors scaled to the unit-entry convention from the numerical a-vectors."""
    out: Dict[int, Dict[int, np.ndarray]] = {1: {}, 2: {}, 3: {}, 4: {}}
    ref = {1: 1, 2: 1, 3: 1, 4: 1}  # position inside the block fixed to one
    for i in range(1, 13):
        blk, k = MODE_BLOCK[i]
        v = spectrum.mode(i).a_vector[list(BLOCKS[blk])]
        out[blk][k] = v / v[ref[blk]]
    return out


def _pole(omega, omega_i, floor):
    gap = omega**2 - omega_i**2
    return gap, abs(gap) < floor * omega_i**2


def modal_coefficients(wave: IncidentWave, spectrum: ResonanceSpectrum, capacity: CapacityData,
                       solver: SingleLayerSolver, contrasts: ContrastParams, method: str = "closed",
                       betas: Optional[Dict[int, Dict[int, np.ndarray]]] = None,
                       pole_floor: float = POLE_FLOOR, printed_pairing: bool = True) -> ScatteringSolution:
    """Modal excitation coefficients b_1..b_12.

    betas defaults to the numerical eigenvectors rescaled to the unit-entry
    convention.  printed_pairing keeps the omega_5 / omega_6 poles on b7 / b8
    and the printed d8 numerator; False uses omega_7 / omega_8 and the
    consistent 2x2 solve.
    """
    mesh = capacity.geometry.mesh
    rho, eta, delta, tau = spectrum.rho, contrasts.eta, contrasts.delta, contrasts.tau
    omega = wave.omega
    trace = wave.evaluate(mesh.centroids)
    corr = _solve_complex(solver, trace)
    ints = capacity.rigid.integrals()  # (12, N, 3)
    G = np.einsum("nd,jnd->j", corr, ints)
    B = capacity.B
    om = {i: spectrum.mode(i).omega for i in range(1, 13)}
    b = np.full(N_RIGID, np.nan + 0j)
    flags: Dict[int, str] = {}
    avec = np.zeros((N_RIGID, N_RIGID))

    def set_b(i, num, pole_index):
        gap, hit = _pole(omega, om[pole_index], pole_floor)
        if hit:
            flags[i] = f"resonant excitation: |omega^2 - omega_{pole_index}^2| below floor"
            return
        b[i - 1] = num / gap

    if method == "spectral":
        for i in range(1, 13):
            v = spectrum.mode(i).a_vector
            avec[i - 1] = v
            set_b(i, eta * (v @ G) / rho, i)
    elif method == "closed":
        bet = betas or _beta_from_numerics(spectrum)
        for i in range(1, 13):
            blk, k = MODE_BLOCK[i]
            avec[i - 1] = beta_as_a_vector(blk, bet[blk][k])
        g1 = np.array([G[2] / B[2, 2], G[8] / B[8, 8]])
        g2 = np.array([G[3] / B[3, 3], G[9] / B[9, 9]])
        for i, (blk, g) in ((1, (1, g1)), (2, (1, g1)), (3, (2, g2)), (4, (2, g2))):
            beta = bet[blk][1 if i in (1, 3) else 2]
            set_b(i, delta * (beta @ g) / (2 * rho * tau**2), i)
        for blk, first, (T, R) in ((3, 5, (1, 5)), (4, 9, (2, 6))):
            idx = BLOCKS[blk]
            g = G[list(idx)]
            # B-columns of the 4x4 system without the rho tau^2 (omega^2 - omega_i^2) factor
            Bb = B[np.ix_(idx, idx)]
            Nh = np.column_stack([Bb.T @ bet[blk][k] for k in (1, 2, 3, 4)])
            det_o = Nh[0, 0] * Nh[1, 1] - Nh[0, 1] * Nh[1, 0]
            det_e = Nh[0, 2] * Nh[1, 3] - Nh[0, 3] * Nh[1, 2]
            d = {}
            d[0] = (Nh[1, 1] * (g[0] - g[2]) - Nh[0, 1] * (g[1] + g[3])) / (2 * rho * det_o)
            d[1] = (Nh[1, 0] * (g[2] - g[0]) + Nh[0, 0] * (g[1] + g[3])) / (2 * rho * det_o)
            d[2] = (Nh[1, 3] * (g[0] + g[2]) - Nh[0, 3] * (g[1] - g[3])) / (2 * rho * det_e)
            c8 = Nh[0, 3] if printed_pairing else Nh[0, 2]
            d[3] = (-Nh[1, 2] * (g[0] + g[2]) + c8 * (g[1] - g[3])) / (2 * rho * det_e)
            if printed_pairing and blk == 3:
                poles = (first, first + 1, first, first + 1)
            else:
                poles = (first, first + 1, first + 2, first + 3)
            for k in range(4):
                set_b(first + k, eta * d[k], poles[k])
        if printed_pairing:
            logger.info("b7, b8 use the omega_5, omega_6 poles and the printed d8 numerator")
    else:
        raise ValueError(f"unknown method {method!r}")
    for i, msg in flags.items():
        logger.warning("mode %d: %s", i, msg)
    rem = (tau * omega) ** 3 + delta * omega
    return ScatteringSolution(wave, b, avec, G, corr, flags, method, rem, capacity)


def total_field(solution: ScatteringSolution, points: np.ndarray, medium: Optional[ElasticMedium] = None) -> np.ndarray:
    """u at exterior points, (M, 3) complex."""
    cap = solution.capacity
    mesh = cap.geometry.mesh
    med = medium or solution.wave.medium
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    inc = solution.wave.evaluate(pts)
    scat = evaluate_potential(mesh, med, solution.wave.omega, solution.correction, pts)
    modal = evaluate_potential(mesh, med, 0.0, solution.excited_density(), pts)
    return inc - scat + modal


def total_field_gradient(solution: ScatteringSolution, points: np.ndarray) -> np.ndarray:
    """grad u at exterior points; entry [m, i, k] = d u_i / d x_k."""
    cap = solution.capacity
    mesh = cap.geometry.mesh
    wave = solution.wave
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    g = 1j * wave.wavenumber * np.einsum("ma,k->mak", wave.evaluate(pts), np.asarray(wave.direction))
    g = g - evaluate_potential_gradient(mesh, wave.medium, wave.omega, solution.correction, pts)
    return g + evaluate_potential_gradient(mesh, wave.medium, 0.0, solution.excited_density(), pts)


# ---------------------------------------------------------------------------
# Scan
# ---------------------------------------------------------------------------
@dataclass
class ScanRow:
    omega: float
    b: np.ndarray
    flags: Dict[int, str]
    gap_amplitude: float  # |u| at the gap centre
    gap_gradient: float  # |grad u| at the gap centre
    far_amplitude: float


def gap_probe(capacity: CapacityData) -> np.ndarray:
    # the antiphase axial mode has zero displacement here by symmetry, its strain is what resonates
    return np.zeros(3)


def resonance_scan(wave: IncidentWave, spectrum: ResonanceSpectrum, capacity: CapacityData,
                   solver: SingleLayerSolver, contrasts: ContrastParams, omega_grid: Sequence[float],
                   method: str = "closed", far_radius: float = 100.0,
                   pole_floor: float = POLE_FLOOR) -> List[ScanRow]:
    """Coefficients and field amplitudes over a frequency grid."""
    rows = []
    far = np.array([[0.0, 0.0, far_radius]])
    gp = gap_probe(capacity)[None, :]
    for w in omega_grid:
        sol = modal_coefficients(wave.with_omega(float(w)), spectrum, capacity, solver, contrasts,
                                 method=method, pole_floor=pole_floor)
        u_gap = total_field(sol, gp)[0]
        du_gap = total_field_gradient(sol, gp)[0]
        u_far = total_field(sol, far)[0] - sol.wave.evaluate(far)[0]
        rows.append(ScanRow(float(w), sol.b, sol.flags, float(np.linalg.norm(u_gap)), float(np.linalg.norm(du_gap)),
                            float(np.linalg.norm(u_far))))
    return rows
