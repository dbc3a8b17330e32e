"""Fundamental solutions of the isotropic Lame system.

Conventions
-----------
The static (Kelvin) matrix is

    Gamma_ij(x) = -alpha1/(8 pi) delta_ij/|x| - alpha2/(8 pi) x_i x_j/|x|^3

with alpha1 = 1/mu + 1/(lambda+2mu), alpha2 = 1/mu - 1/(lambda+2mu), so that
L Gamma = delta for L u = mu Lap u + (lambda+mu) grad div u.  The dynamic
tensor solves (L + rho omega^2) Gamma^omega = delta with outgoing waves.

For small omega, Gamma^omega = sum_n omega^n Gamma_n with

    Gamma_n = P_n |x|^(n-1) I + Q_n |x|^(n-3) x x^T,
    P_n = -i^n / (4 pi (n+2) n!) * ((n+1)/(mu c_s^n) + 1/((lambda+2mu) c_p^n))
    Q_n =  i^n (n-1) / (4 pi (n+2) n!) * (1/(mu c_s^n) - 1/((lambda+2mu) c_p^n))

which is obtained by expanding the exponentials term by term.  A variant that
factors alpha1 and alpha2 out of both brackets is available as
``form="alpha"``; it does not reproduce the Kelvin matrix at n = 0 and is kept
for reference only.

Gradients are stored as G[i, j, k] = d Gamma_ij / d x_k.  The traction of a
kernel at a point with unit normal n acts column-wise:

    T_ij = lambda n_i G[k, j, k] + mu (G[i, j, k] + G[k, j, i]) n_k.
"""

import math
from dataclasses import dataclass
import warnings

import numba
import numpy as np

SINGULARITY_FLOOR: float = 1e-14
SMALL_OMEGA_THRESHOLD: float = 1e-4
SERIES_ORDER_SMALL_OMEGA: int = 4


class SingularityError(ValueError):
    """Kernel evaluated at (or numerically at) the source point."""


# ---------------------------------------------------------------------------
# Media
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ElasticMedium:
    """Isotropic elastic medium (Lame pair and density)."""

    lam: float = 1.0
    mu: float = 1.0
    rho: float = 1.0

    def validate(self) -> None:
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not 3 * self.lam + 2 * self.mu > 0:
            raise ValueError("strong ellipticity requires 3 lambda + 2 mu > 0")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")

    @property
    def cs(self) -> float:
        return math.sqrt(self.mu / self.rho)

    @property
    def cp(self) -> float:
        return math.sqrt((self.lam + 2 * self.mu) / self.rho)

    @property
    def alpha1(self) -> float:
        return 1.0 / self.mu + 1.0 / (self.lam + 2 * self.mu)

    @property
    def alpha2(self) -> float:
        return 1.0 / self.mu - 1.0 / (self.lam + 2 * self.mu)

    def ks(self, omega: float) -> float:
        return omega / self.cs

    def kp(self, omega: float) -> float:
        return omega / self.cp

    def scaled(self, factor: float) -> "ElasticMedium":
        """Medium with both Lame constants multiplied by ``factor``."""
        return ElasticMedium(self.lam * factor, self.mu * factor, self.rho)


@dataclass(frozen=True)
class ContrastParams:
    """Stiffness contrast delta and density contrast eta of the inclusions."""

    delta: float = 1e-4
    eta: float = 1e-4

    def __post_init__(self) -> None:
        if self.delta <= 0 or self.eta <= 0:
            raise ValueError("contrast parameters must be positive")
        if self.delta > 0.1 or self.eta > 0.1:
            warnings.warn("contrast parameters are not small; asymptotics may not apply", stacklevel=2)
        if self.tau > 10:
            warnings.warn("tau = sqrt(delta/eta) is large", stacklevel=2)

    @property
    def tau(self) -> float:
        return math.sqrt(self.delta / self.eta)

    @classmethod
    def from_tau(cls, eta: float, tau: float) -> "ContrastParams":
        return cls(delta=eta * tau * tau, eta=eta)

    def interior(self, medium: ElasticMedium) -> ElasticMedium:
        """Interior medium (delta*lambda, delta*mu, eta*rho)."""
        return ElasticMedium(self.delta * medium.lam, self.delta * medium.mu, self.eta * medium.rho)


# ---------------------------------------------------------------------------
# Series coefficients
# ---------------------------------------------------------------------------
def series_coefficients(lam: float, mu: float, rho: float, n: int, form: str = "exact"):
    """(P_n, Q_n) of the low-frequency expansion, see module docstring."""
    cs = math.sqrt(mu / rho)
    cp = math.sqrt((lam + 2 * mu) / rho)
    inn = 1j**n
    fac = math.factorial(n) * (n + 2)
    if form == "exact":
        s = 1.0 / (mu * cs**n)
        p = 1.0 / ((lam + 2 * mu) * cp**n)
        P = -inn / (4 * math.pi * fac) * ((n + 1) * s + p)
        Q = inn * (n - 1) / (4 * math.pi * fac) * (s - p)
    elif form == "alpha":
        a1 = 1.0 / mu + 1.0 / (lam + 2 * mu)
        a2 = 1.0 / mu - 1.0 / (lam + 2 * mu)
        P = -a1 / (4 * math.pi) * inn / fac * ((n + 1) / cs**n + 1.0 / cp**n)
        Q = a2 / (4 * math.pi) * inn * (n - 1) / fac * (1.0 / cs**n - 1.0 / cp**n)
    else:
        raise ValueError(f"unknown series form {form!r}")
    return complex(P), complex(Q)


def _series_table(lam, mu, rho, nmax=SERIES_ORDER_SMALL_OMEGA):
    tab = np.zeros((nmax + 1, 2), dtype=np.complex128)
    for n in range(nmax + 1):
        tab[n] = series_coefficients(lam, mu, rho, n)
    return tab


# ---------------------------------------------------------------------------
# Point kernels (numba)
# ---------------------------------------------------------------------------
@numba.njit(cache=True, fastmath=False)
def kelvin_into(a1, a2, d, out):
    r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
    r = math.sqrt(r2)
    c1 = -a1 / (8.0 * math.pi * r)
    c2 = -a2 / (8.0 * math.pi * r * r2)
    for i in range(3):
        for j in range(3):
            out[i, j] = c2 * d[i] * d[j]
        out[i, i] += c1


@numba.njit(cache=True)
def kelvin_grad_into(a1, a2, d, out):
    """out[i, j, k] = d/dx_k Gamma_ij at x = d."""
    r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
    r = math.sqrt(r2)
    r3 = r * r2
    a = a1 / (8.0 * math.pi)
    b = a2 / (8.0 * math.pi)
    for i in range(3):
        for j in range(3):
            for k in range(3):
                v = 3.0 * b * d[i] * d[j] * d[k] / (r3 * r2)
                if i == j:
                    v += a * d[k] / r3
                if i == k:
                    v -= b * d[j] / r3
                if j == k:
                    v -= b * d[i] / r3
                out[i, j, k] = v


@numba.njit(cache=True)
def traction_from_grad(G, n, lam, mu, out):
    """Column-wise traction of a kernel with gradient G at unit normal n."""
    for j in range(3):
        div = G[0, j, 0] + G[1, j, 1] + G[2, j, 2]
        for i in range(3):
            s = 0.0
            for k in range(3):
                s += (G[i, j, k] + G[k, j, i]) * n[k]
            out[i, j] = lam * n[i] * div + mu * s


@numba.njit(cache=True)
def series_term_into(P, Q, n, d, out):
    """Gamma_n at x = d (complex)."""
    r = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
    rp = r ** (n - 1)
    rq = r ** (n - 3)
    for i in range(3):
        for j in range(3):
            out[i, j] = Q * rq * d[i] * d[j]
        out[i, i] += P * rp


@numba.njit(cache=True)
def series_grad_into(P, Q, n, d, out):
    """d/dx_k of Gamma_n at x = d (complex), out[i, j, k]."""
    r = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
    for i in range(3):
        for j in range(3):
            for k in range(3):
                v = Q * ((n - 3) * r ** (n - 5) * d[i] * d[j] * d[k])
                if i == k:
                    v += Q * r ** (n - 3) * d[j]
                if j == k:
                    v += Q * r ** (n - 3) * d[i]
                if i == j:
                    v += P * (n - 1) * r ** (n - 3) * d[k]
                out[i, j, k] = v


@numba.njit(cache=True)
def _radial_derivs(k, r):
    """e^{ikr}/r and its first three r-derivatives."""
    e = np.exp(1j * k * r)
    ikr = 1j * k * r
    kr2 = (k * r) ** 2
    h0 = e / r
    h1 = e * (ikr - 1.0) / (r * r)
    h2 = e * (-kr2 - 2.0 * ikr + 2.0) / (r * r * r)
    h3 = e * (-1j * (k * r) ** 3 + 3.0 * kr2 + 6.0 * ikr - 6.0) / (r * r * r * r)
    return h0, h1, h2, h3


@numba.njit(cache=True)
def dyn_green_into(lam, mu, rho, omega, series, d, out, grad, want_grad):
    """Gamma^omega at x = d, optionally with its gradient.

    ``series`` holds (P_n, Q_n) rows used when omega |x| / c_s is tiny.
    """
    r = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
    cs = math.sqrt(mu / rho)
    cp = math.sqrt((lam + 2 * mu) / rho)
    tmp = np.zeros((3, 3), dtype=np.complex128)
    gtmp = np.zeros((3, 3, 3), dtype=np.complex128)
    if omega * r / cs < 1e-4:
        for i in range(3):
            for j in range(3):
                out[i, j] = 0.0
                if want_grad:
                    for k in range(3):
                        grad[i, j, k] = 0.0
        wn = 1.0
        for n in range(series.shape[0]):
            series_term_into(series[n, 0], series[n, 1], n, d, tmp)
            for i in range(3):
                for j in range(3):
                    out[i, j] += wn * tmp[i, j]
            if want_grad:
                series_grad_into(series[n, 0], series[n, 1], n, d, gtmp)
                for i in range(3):
                    for j in range(3):
                        for k in range(3):
                            grad[i, j, k] += wn * gtmp[i, j, k]
            wn *= omega
        return
    ks = omega / cs
    kp = omega / cp
    s0, s1, s2, s3 = _radial_derivs(ks, r)
    p0, p1, p2, p3 = _radial_derivs(kp, r)
    f1 = p1 - s1
    f2 = p2 - s2
    f3 = p3 - s3
    c = 1.0 / (4.0 * math.pi * rho * omega * omega)
    cmu = -1.0 / (4.0 * math.pi * mu)
    A = (f2 - f1 / r) / (r * r)
    B = f1 / r
    for i in range(3):
        for j in range(3):
            out[i, j] = c * A * d[i] * d[j]
        out[i, i] += cmu * s0 + c * B
    if want_grad:
        Ap = (f3 - f2 / r + f1 / (r * r)) / (r * r) - 2.0 * (f2 - f1 / r) / (r * r * r)
        Bp = f2 / r - f1 / (r * r)
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    v = c * Ap * d[k] / r * d[i] * d[j]
                    if i == k:
                        v += c * A * d[j]
                    if j == k:
                        v += c * A * d[i]
                    if i == j:
                        v += cmu * s1 * d[k] / r + c * Bp * d[k] / r
                    grad[i, j, k] = v


# ---------------------------------------------------------------------------
# Public point evaluations
# ---------------------------------------------------------------------------
def _check_point(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(3)
    if np.linalg.norm(x) < SINGULARITY_FLOOR:
        raise SingularityError(f"kernel evaluated at |x| = {np.linalg.norm(x):.3e}")
    return x


def kelvin_matrix(medium: ElasticMedium, x) -> np.ndarray:
    """Static fundamental solution at x (3x3, real symmetric)."""
    x = _check_point(x)
    out = np.empty((3, 3))
    kelvin_into(medium.alpha1, medium.alpha2, x, out)
    return out


def kelvin_gradient(medium: ElasticMedium, x) -> np.ndarray:
    x = _check_point(x)
    out = np.empty((3, 3, 3))
    kelvin_grad_into(medium.alpha1, medium.alpha2, x, out)
    return out


def green_tensor(medium: ElasticMedium, omega: float, x) -> np.ndarray:
    """Outgoing time-harmonic fundamental solution at x (3x3 complex)."""
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    x = _check_point(x)
    if omega == 0:
        return kelvin_matrix(medium, x).astype(complex)
    out = np.empty((3, 3), dtype=complex)
    grad = np.empty((3, 3, 3), dtype=complex)
    dyn_green_into(medium.lam, medium.mu, medium.rho, float(omega),
                   _series_table(medium.lam, medium.mu, medium.rho), x, out, grad, False)
    return out


def green_gradient(medium: ElasticMedium, omega: float, x) -> np.ndarray:
    """G[i, j, k] = d Gamma^omega_ij / d x_k (complex)."""
    x = _check_point(x)
    if omega == 0:
        return kelvin_gradient(medium, x).astype(complex)
    out = np.empty((3, 3), dtype=complex)
    grad = np.empty((3, 3, 3), dtype=complex)
    dyn_green_into(medium.lam, medium.mu, medium.rho, float(omega),
                   _series_table(medium.lam, medium.mu, medium.rho), x, out, grad, True)
    return grad


def green_series_term(medium: ElasticMedium, n: int, x=None, form: str = "exact") -> np.ndarray:
    """Gamma_n(x), the omega^n coefficient of the low-frequency expansion.

    Gamma_1 is constant in x, so ``x`` may be omitted for n = 1.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    P, Q = series_coefficients(medium.lam, medium.mu, medium.rho, n, form)
    if n == 1:
        return P * np.eye(3, dtype=complex)
    x = _check_point(x)
    out = np.empty((3, 3), dtype=complex)
    series_term_into(P, Q, n, x, out)
    return out


def traction_kernel(medium: ElasticMedium, x, nu) -> np.ndarray:
    """Traction, at normal nu, of the Kelvin matrix columns evaluated at x."""
    x = _check_point(x)
    nu = np.asarray(nu, dtype=float).reshape(3)
    if abs(np.linalg.norm(nu) - 1.0) > 1e-10:
        raise ValueError("nu must be a unit vector")
    G = kelvin_gradient(medium, x)
    out = np.empty((3, 3))
    traction_from_grad(G, nu, medium.lam, medium.mu, out)
    return out


def traction_apply(medium: ElasticMedium, grad_u: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Traction lambda (div u) nu + mu (grad u + grad u^T) nu for grad_u[i, k] = d u_i/d x_k.

    Works on stacked arrays: grad_u (..., 3, 3), nu (..., 3).
    """
    div = np.trace(grad_u, axis1=-2, axis2=-1)
    sym = grad_u + np.swapaxes(grad_u, -1, -2)
    return medium.lam * div[..., None] * nu + medium.mu * np.einsum("...ik,...k->...i", sym, nu)
