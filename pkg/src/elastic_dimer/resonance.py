"""Subwavelength resonant frequencies: numerical eigenproblem and closed forms.

The leading-order resonance condition is the generalized symmetric-definite
problem E a = lambda B a with lambda = rho omega^2 / eta.  Modes are numbered
1..12 following the block structure of (E, B):

    block 1 (xi3, xi9)              : 1 antiphase, 2 in phase
    block 2 (xi4, xi10)             : 3 antiphase, 4 in phase
    block 3 (xi1, xi5, xi7, xi11)   : 5, 6 odd under x3 -> -x3 (lower, higher)
                                      7, 8 even (higher, lower)
    block 4 (xi2, xi6, xi8, xi12)   : 9, 10, 11, 12 likewise

Coefficient vectors are normalized to unit B-norm and signed so that the
entry at xi9, xi10, xi5 or xi6 (blocks 1..4) is positive.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from .kernels import ContrastParams, ElasticMedium
from .rigid_space import BLOCKS, N_RIGID

logger = logging.getLogger(__name__)

CLUSTER_TOL = 1e-6
CLASSIFY_TOL = 0.2
DIPOLAR, QUADRUPOLAR, HYBRID, UNCLASSIFIED = "dipolar", "quadrupolar", "hybrid", "unclassified"

# 0-based index of the entry fixed positive in each block
_SIGN_REF = {1: 8, 2: 9, 3: 4, 4: 5}


class SpectrumError(ValueError):
    pass


class FormulaDomainError(ValueError):
    pass


@dataclass
class ModeEntry:
    mode: int
    omega: float
    lambda_gen: float
    a_vector: np.ndarray
    block: int
    block_fraction: float
    parity: int
    classification: str = UNCLASSIFIED


@dataclass
class ResonanceSpectrum:
    entries: List[ModeEntry]
    eta: float
    rho: float

    @property
    def omegas(self) -> np.ndarray:
        return np.array([e.omega for e in self.entries])

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([e.lambda_gen for e in self.entries])

    def mode(self, i: int) -> ModeEntry:
        for e in self.entries:
            if e.mode == i:
                return e
        raise KeyError(i)

    def block_spectrum(self, block: int) -> np.ndarray:
        return np.sort([e.lambda_gen for e in self.entries if e.block == block])

    def degeneracy_34(self) -> float:
        """Largest relative difference between the block 3 and block 4 eigenvalues."""
        a, b = self.block_spectrum(3), self.block_spectrum(4)
        return float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-300)))

    def scaled(self, eta: float) -> "ResonanceSpectrum":
        """Same eigenproblem with a different density contrast (lambda is eta-free)."""
        out = []
        for e in self.entries:
            w = math.sqrt(max(eta * e.lambda_gen / self.rho, 0.0))
            out.append(ModeEntry(e.mode, w, e.lambda_gen, e.a_vector, e.block, e.block_fraction, e.parity,
                                 e.classification))
        return ResonanceSpectrum(out, eta, self.rho)


def _block_masks() -> np.ndarray:
    masks = np.zeros((5, N_RIGID))
    for k, idx in BLOCKS.items():
        masks[k, list(idx)] = 1.0
    return masks


def _resolve_clusters(lam: np.ndarray, V: np.ndarray, B: np.ndarray, tol: float) -> np.ndarray:
    """Rotate inside (near-)degenerate clusters so each vector lives in one block."""
    label = np.zeros(N_RIGID)
    for k, idx in BLOCKS.items():
        label[list(idx)] = k
    V = V.copy()
    scale = max(np.abs(lam).max(), 1e-300)
    i = 0
    while i < len(lam):
        j = i + 1
        while j < len(lam) and abs(lam[j] - lam[i]) <= tol * max(abs(lam[i]), scale * 1e-12):
            j += 1
        if j - i > 1:
            Vc = V[:, i:j]
            M = Vc.T @ (B * label[None, :]) @ Vc
            M = 0.5 * (M + M.T)
            _, Q = np.linalg.eigh(M)
            V[:, i:j] = Vc @ Q
        i = j
    return V


def _parity(a: np.ndarray, block: int) -> int:
    """+1 for the symmetric pattern, -1 for the antisymmetric one (see module doc)."""
    if block in (1, 2):
        p, q = BLOCKS[block]
        return 1 if a[p] * a[q] >= 0 else -1
    t0, r0, t1, r1 = BLOCKS[block]
    odd = math.hypot(a[t0] - a[t1], a[r0] + a[r1])
    even = math.hypot(a[t0] + a[t1], a[r0] - a[r1])
    return -1 if odd >= even else 1


def classify_mode(entry: ModeEntry, tol: float = CLASSIFY_TOL) -> str:
    """Dipolar (in phase), quadrupolar (antiphase) or hybrid."""
    if entry.block in (3, 4):
        return HYBRID
    p, q = BLOCKS[entry.block]
    a = entry.a_vector
    sym, anti = abs(a[p] + a[q]), abs(a[p] - a[q])
    if min(sym, anti) > tol * max(sym, anti):
        return UNCLASSIFIED
    return DIPOLAR if sym > anti else QUADRUPOLAR


def _assign_modes(entries: List[ModeEntry]) -> None:
    groups: Dict[Tuple[int, int], List[ModeEntry]] = {}
    for e in entries:
        groups.setdefault((e.block, e.parity), []).append(e)

    def take(key, modes, descending=False):
        grp = sorted(groups.get(key, []), key=lambda e: e.lambda_gen, reverse=descending)
        for e, m in zip(grp, modes):
            e.mode = m

    take((1, -1), [1])
    take((1, 1), [2])
    take((2, -1), [3])
    take((2, 1), [4])
    take((3, -1), [5, 6])
    take((3, 1), [7, 8], descending=True)
    take((4, -1), [9, 10])
    take((4, 1), [11, 12], descending=True)


def generalized_spectrum(E: np.ndarray, B: np.ndarray, medium: ElasticMedium, eta: float,
                         sym_tol: float = 0.01, psd_tol: float = 1e-3,
                         cluster_tol: float = CLUSTER_TOL) -> ResonanceSpectrum:
    """Solve E a = lambda B a and label the twelve modes."""
    E = np.asarray(E, dtype=float)
    B = np.asarray(B, dtype=float)
    if E.shape != (N_RIGID, N_RIGID) or B.shape != (N_RIGID, N_RIGID):
        raise SpectrumError("E and B must be 12 x 12")
    if eta <= 0:
        raise SpectrumError("eta must be positive")
    if np.abs(B - B.T).max() > 1e-10 * np.abs(B).max():
        raise SpectrumError("B is not symmetric")
    try:
        np.linalg.cholesky(B)
    except np.linalg.LinAlgError as exc:
        raise SpectrumError("B is not positive definite") from exc
    nE = np.linalg.norm(E)
    asym = np.abs(E - E.T).max()
    if asym > sym_tol * nE:
        raise SpectrumError(f"E is not symmetric within tolerance ({asym / nE:.2e} relative)")
    Es = 0.5 * (E + E.T)
    lam, V = sla.eigh(Es, B)
    if lam.min() < -psd_tol * np.abs(lam).max():
        raise SpectrumError(f"negative generalized eigenvalue {lam.min():.3e}")
    V = _resolve_clusters(lam, V, B, cluster_tol)
    masks = _block_masks()
    entries = []
    for k in range(N_RIGID):
        a = V[:, k]
        Ba = B @ a
        norm2 = float(a @ Ba)
        frac = np.array([float(a @ (masks[b] * Ba)) for b in range(1, 5)]) / norm2
        blk = int(np.argmax(frac)) + 1
        a = a / math.sqrt(norm2)
        if a[_SIGN_REF[blk]] < 0:
            a = -a
        l = max(float(lam[k]), 0.0)
        entries.append(ModeEntry(0, math.sqrt(eta * l / medium.rho), float(lam[k]), a, blk,
                                 float(frac[blk - 1]), _parity(a, blk)))
    _assign_modes(entries)
    for e in entries:
        e.classification = classify_mode(e)
    # ascending frequency; near-ties ordered by block label then magnitude
    scale = max(np.abs(lam).max(), 1e-300)
    keyed = sorted(entries, key=lambda e: (round(e.lambda_gen / (scale * cluster_tol)), e.block, e.lambda_gen))
    return ResonanceSpectrum(keyed, float(eta), float(medium.rho))


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------
@dataclass
class AsymptoticFormulas:
    omegas: Dict[int, float]
    d: Dict[int, float]
    d_tilde: Dict[int, float]
    flags: List[str] = field(default_factory=list)


class _Entries:
    """1-based lookup into E at the current gap, B and the fitted intercepts."""

    def __init__(self, E, B, constants):
        self.E = np.asarray(E, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.C = constants

    def e(self, i, j):
        return 0.5 * (self.E[i - 1, j - 1] + self.E[j - 1, i - 1])

    def b(self, i, j):
        return self.B[i - 1, j - 1]

    def c(self, i, j):
        if (i, j) in self.C:
            return self.C[(i, j)]
        if (j, i) in self.C:
            return self.C[(j, i)]
        raise KeyError(f"fitted constant C_{i},{j} not available")


def _d_pair(t: _Entries, tr: int, rot: int, flags: List[str], name: str):
    """d_+ and d_- of the four-dimensional blocks (tr = 1 or 2, rot = 5 or 6)."""
    T, R = tr, rot
    x = (2 * t.b(T, R) * (t.e(T, R + 6) - t.e(T, R)) - t.e(R, R + 6) * t.b(T, T)
         + t.b(R, R) * (t.c(T, T) + t.c(T, T + 6)) + t.e(R, R) * t.b(T, T))
    det = t.b(T, T) * t.b(R, R) - t.b(T, R) ** 2
    dt = x**2 - 4 * (t.b(T, R) ** 2 - t.b(T, T) * t.b(R, R)) * (
        (t.e(T, R + 6) - t.e(T, R)) ** 2 + (t.e(R, R + 6) - t.e(R, R)) * (t.c(T, T) + t.c(T, T + 6)))
    if dt < 0:
        flags.append(f"negative discriminant {name} = {dt:.3e}")
        raise FormulaDomainError(f"discriminant {name} is negative ({dt:.3e})")
    if det <= 0:
        raise FormulaDomainError("B block determinant is not positive")
    s = math.sqrt(dt)
    return (x + s) / (2 * det), (x - s) / (2 * det), dt


def _root(val: float, name: str, flags: List[str]) -> float:
    if not np.isfinite(val):
        raise FormulaDomainError(f"{name} is not finite")
    if val < 0:
        flags.append(f"negative radicand in {name}: {val:.3e}")
        return float("nan")
    return math.sqrt(val)


def asymptotic_frequencies(B: np.ndarray, constants: Dict[Tuple[int, int], float], medium: ElasticMedium,
                           eta: float, epsilon: float, kappa: float, E: np.ndarray) -> AsymptoticFormulas:
    """Evaluate the twelve leading-order resonance formulas.

    constants are fitted intercepts C_ij of E_ij = s |log eps| + C_ij (only
    C11, C17, C22, C28, C33, C39 are used); E is the capacity matrix at the
    gap epsilon, used for the bounded entries.
    """
    if not (0 < epsilon < 1):
        raise FormulaDomainError("epsilon must lie in (0, 1)")
    t = _Entries(E, B, constants)
    lam, mu, rho = medium.lam, medium.mu, medium.rho
    L = abs(math.log(epsilon))
    flags: List[str] = []
    w = {}
    w[1] = _root(2 * (lam + 2 * mu) * math.pi * L * eta / (kappa * rho * t.b(1, 1)), "omega_1", flags)
    w[2] = _root((t.c(3, 3) + t.c(3, 9)) * eta / (rho * t.b(1, 1)), "omega_2", flags)
    w[3] = _root((t.e(4, 4) - t.e(4, 10)) * eta / (rho * t.b(4, 4)), "omega_3", flags)
    w[4] = _root((t.e(4, 4) + t.e(4, 10)) * eta / (rho * t.b(4, 4)), "omega_4", flags)
    w[5] = _root((t.e(5, 5) + t.e(5, 11)) * eta / (rho * t.b(5, 5)), "omega_5", flags)
    det5 = t.b(1, 1) * t.b(5, 5) - t.b(1, 5) ** 2
    w[6] = _root(2 * mu * math.pi / (kappa * rho) * t.b(5, 5) / det5 * L * eta, "omega_6", flags)
    d1, d2, dt1 = _d_pair(t, 1, 5, flags, "d~1")
    w[7] = _root(eta * d1 / rho, "omega_7", flags)
    w[8] = _root(eta * d2 / rho, "omega_8", flags)
    w[9] = _root((t.e(6, 6) + t.e(6, 12)) * eta / (rho * t.b(6, 6)), "omega_9", flags)
    det6 = t.b(2, 2) * t.b(6, 6) - t.b(2, 6) ** 2
    w[10] = _root(2 * mu * math.pi / (kappa * rho) * t.b(6, 6) / det6 * L * eta, "omega_10", flags)
    d3, d4, dt3 = _d_pair(t, 2, 6, flags, "d~3")
    # printed with a stray sqrt(+O(1)) factor; the omega_7 analogue is used
    w[11] = _root(eta * d3 / rho, "omega_11", flags)
    w[12] = _root(eta * d4 / rho, "omega_12", flags)
    for f in flags:
        logger.warning(f)
    return AsymptoticFormulas(omegas=w, d={1: d1, 2: d2, 3: d3, 4: d4}, d_tilde={1: dt1, 3: dt3}, flags=flags)


def asymptotic_eigenvectors(B: np.ndarray, E: np.ndarray, constants: Dict[Tuple[int, int], float],
                            medium: ElasticMedium, epsilon: float, kappa: float,
                            b26_entry: Tuple[int, int] = (2, 6)) -> Dict[int, Dict[int, np.ndarray]]:
    """Leading-order coefficient vectors beta^(k)_i over the block bases.

    b26_entry selects the B entry used in beta^(4)_{1,1}: (2, 6) by the
    symmetry with block 3, (2, 12) as literally printed.
    """
    t = _Entries(E, B, constants)
    mu = medium.mu
    L = abs(math.log(epsilon))
    flags: List[str] = []
    d1, d2, _ = _d_pair(t, 1, 5, flags, "d~1")
    d3, d4, _ = _d_pair(t, 2, 6, flags, "d~3")
    out: Dict[int, Dict[int, np.ndarray]] = {
        1: {1: np.array([-1.0, 1.0]), 2: np.array([1.0, 1.0])},
        2: {1: np.array([-1.0, 1.0]), 2: np.array([1.0, 1.0])},
    }

    def blk(T, R, bTR_first, ds):
        b11 = ((t.e(R, R) + t.e(R, R + 6)) * bTR_first - (t.e(T, R) + t.e(T, R + 6)) * t.b(R, R)) / t.b(R, R)
        b11 *= kappa / (2 * mu * math.pi) / L
        e1 = mu * math.pi / kappa
        det = t.b(T, T) * t.b(R, R) - t.b(T, R) ** 2
        e2 = 2 * e1 * t.b(R, R) / det
        bTT, bRR, bTR = t.b(T, T), t.b(R, R), t.b(T, R)
        if bTR == 0:
            raise FormulaDomainError("vanishing B_{1,5}-type entry in beta_(2,1)")
        root = math.sqrt(4 * e1**2 + 4 * e1 * e2 * (bRR - bTT) + e2**2 * ((bTT - bRR) ** 2 + 4 * bTR**2))
        b21 = -((root + 2 * e1) / (2 * e2 * bTR) * (bRR - bTT) / (2 * bTR))
        vecs = {1: np.array([b11, 1.0, -b11, 1.0]), 2: np.array([b21, 1.0, -b21, 1.0])}
        for k, d in zip((3, 4), ds):
            den = t.e(T, T) - t.e(T, R) + bTR * d
            if abs(den) < 1e-12 * max(abs(t.e(T, T)), 1.0):
                raise FormulaDomainError(f"vanishing denominator in beta_({k},1)")
            b = -(t.e(R, T) - t.e(R, R) + bRR * d) / den
            vecs[k] = np.array([b, 1.0, b, -1.0])
        return vecs

    out[3] = blk(1, 5, t.b(1, 5), (d1, d2))
    out[4] = blk(2, 6, t.b(*b26_entry), (d3, d4))
    if b26_entry != (2, 6):
        logger.info("beta^(4)_(1,1) uses B%s,%s as printed", *b26_entry)
    return out


def beta_as_a_vector(block: int, beta: np.ndarray) -> np.ndarray:
    """Embed a block coefficient vector into the 12-dimensional a-space."""
    a = np.zeros(N_RIGID)
    a[list(BLOCKS[block])] = beta
    return a


MODE_BLOCK = {1: (1, 1), 2: (1, 2), 3: (2, 1), 4: (2, 2), 5: (3, 1), 6: (3, 2), 7: (3, 3), 8: (3, 4),
              9: (4, 1), 10: (4, 2), 11: (4, 3), 12: (4, 4)}


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    return float(abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)))


# ---------------------------------------------------------------------------
# Direct search on the boundary system
# ---------------------------------------------------------------------------
@dataclass
class QuasiStaticOperators:
    """Pieces of the order-2 truncated boundary system."""

    S0: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    K0: np.ndarray
    K2: np.ndarray

    @classmethod
    def assemble(cls, mesh, medium: ElasticMedium) -> "QuasiStaticOperators":
        from .boundary_ops import (assemble_np_adjoint_static, assemble_np_adjoint_term2,
                                   assemble_series_single_layer, assemble_single_layer)
        return cls(assemble_single_layer(mesh, medium).matrix,
                   assemble_series_single_layer(mesh, medium, 1).matrix,
                   assemble_series_single_layer(mesh, medium, 2).matrix,
                   assemble_np_adjoint_static(mesh, medium).matrix,
                   assemble_np_adjoint_term2(mesh, medium).matrix)

    def system(self, omega: float, contrasts: ContrastParams) -> np.ndarray:
        w, tw = omega, contrasts.tau * omega
        n = self.S0.shape[0]
        I = np.eye(n)
        A = np.empty((2 * n, 2 * n), dtype=complex)
        A[:n, :n] = self.S0 + tw * self.S1 + tw**2 * self.S2
        A[:n, n:] = -(self.S0 + w * self.S1 + w**2 * self.S2)
        A[n:, :n] = -0.5 * I + self.K0 + tw**2 * self.K2
        A[n:, n:] = -contrasts.delta * (0.5 * I + self.K0 + w**2 * self.K2)
        return A


def smallest_singular_value(A: np.ndarray, iters: int = 60, seed: int = 0) -> float:
    """sigma_min by inverse iteration on A^H A through one LU factorization."""
    lu = sla.lu_factor(A, check_finite=False)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(A.shape[0]) + 0j
    x /= np.linalg.norm(x)
    s = np.inf
    for _ in range(iters):
        y = sla.lu_solve(lu, x, check_finite=False)
        z = sla.lu_solve(lu, y, trans=2, check_finite=False)
        nz = np.linalg.norm(z)
        s_new = 1.0 / math.sqrt(nz)
        x = z / nz
        if abs(s_new - s) <= 1e-10 * s_new:
            s = s_new
            break
        s = s_new
    return float(s)


@dataclass
class CharacteristicSearch:
    omegas: np.ndarray
    sigma: np.ndarray
    minima: List[float]


def direct_characteristic_search(mesh, medium: ElasticMedium, contrasts: ContrastParams,
                                 omega_grid: Sequence[float],
                                 operators: Optional[QuasiStaticOperators] = None) -> CharacteristicSearch:
    """Local minima of sigma_min(A(omega, delta)) over a frequency grid."""
    grid = np.asarray(omega_grid, dtype=float)
    if grid.size and np.any(grid <= 0):
        raise ValueError("frequencies must be positive")
    if grid.size == 0:
        return CharacteristicSearch(grid, grid.copy(), [])
    diam = float(np.ptp(mesh.nodes, axis=0).max())
    if grid.max() * max(contrasts.tau, 1.0) * diam / medium.cs > 0.5:
        warnings.warn("frequency grid leaves the quasi-static regime", stacklevel=2)
    ops = operators or QuasiStaticOperators.assemble(mesh, medium)
    sig = np.array([smallest_singular_value(ops.system(w, contrasts)) for w in grid])
    mins = [float(grid[k]) for k in range(1, len(grid) - 1) if sig[k] < sig[k - 1] and sig[k] <= sig[k + 1]]
    if not mins:
        warnings.warn("no interior minimum on the grid; refine or widen it", stacklevel=2)
    return CharacteristicSearch(grid, sig, mins)
