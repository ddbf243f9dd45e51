"""PC priors on foliated parameter spaces.

When the distance depends on ``xi`` only through a linear form ``b'xi`` on
the positive orthant (a family of simplices) or a quadratic form
``xi'H xi / 2`` (a family of ellipsoids), the exponential prior on the
distance is spread uniformly over each level set. This gives closed-form
densities and exact samplers. Two applications are included: correlation
matrices parameterised by hypersphere angles and stationary AR models
parameterised by partial autocorrelations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import special

from .errors import DomainError, UnsupportedError


@dataclass(frozen=True)
class HMap:
    """Scalar map ``h`` with ``h(0) = 0``, its derivative and inverse."""

    evaluate: Callable
    derivative: Callable
    inverse: Callable
    name: str = ""


SQRT_2A = HMap(lambda a: np.sqrt(2.0 * a), lambda a: 1.0 / np.sqrt(2.0 * a), lambda d: 0.5 * d * d, "sqrt(2a)")
SQRT_A = HMap(np.sqrt, lambda a: 0.5 / np.sqrt(a), lambda d: d * d, "sqrt(a)")
IDENTITY = HMap(lambda a: a, lambda a: np.ones_like(np.asarray(a, dtype=float)), lambda d: d, "a")

CASES = ("linear", "quadratic")


@dataclass(frozen=True)
class FoliatedPCPrior:
    """Exponential prior on ``d`` spread uniformly over simplices or ellipsoids.

    Parameters
    ----------
    rate : float
    n : int
        Dimension of ``xi``.
    case : {"linear", "quadratic"}
        ``d = h(b'xi)`` on ``xi >= 0``, or ``d = h(xi'H xi / 2)`` on R^n.
    h : HMap
        Defaults to ``sqrt(2a)``.
    b : array, optional
        Positive weights for the linear case, default all ones.
    H : array, optional
        SPD matrix for the quadratic case, default the identity.
    """

    rate: float
    n: int
    case: str = "linear"
    h: HMap = SQRT_2A
    b: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.rate > 0:
            raise DomainError(f"rate must be positive, got {self.rate}")
        if self.n < 1:
            raise DomainError(f"dimension must be at least 1, got {self.n}")
        if self.case not in CASES:
            raise DomainError(f"case must be one of {CASES}, got {self.case!r}")
        if self.case == "linear":
            b = np.ones(self.n) if self.b is None else np.asarray(self.b, dtype=float)
            if b.shape != (self.n,) or np.any(b <= 0):
                raise DomainError("b must be a positive vector of length n")
            object.__setattr__(self, "b", b)
            object.__setattr__(self, "_chol", None)
        else:
            H = np.eye(self.n) if self.H is None else np.atleast_2d(np.asarray(self.H, dtype=float))
            if H.shape != (self.n, self.n) or not np.allclose(H, H.T):
                raise DomainError("H must be a symmetric n x n matrix")
            try:
                chol = np.linalg.cholesky(H)
            except np.linalg.LinAlgError as exc:
                raise DomainError("H must be positive definite") from exc
            object.__setattr__(self, "H", H)
            object.__setattr__(self, "_chol", chol)

    def level(self, xi) -> np.ndarray:
        """``b'xi`` (linear) or ``xi'H xi / 2`` (quadratic), row-wise."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if xi.shape[-1] != self.n:
            raise DomainError(f"expected vectors of length {self.n}, got {xi.shape[-1]}")
        if self.case == "linear":
            return xi @ self.b
        u = xi @ self._chol
        return 0.5 * np.sum(u * u, axis=1)

    def distance(self, xi):
        out = self.h.evaluate(self.level(xi))
        return float(out[0]) if np.ndim(xi) == 1 else out

    def density(self, xi):
        """Density at one point (1-d input) or at each row of a 2-d array."""
        xi_arr = np.atleast_2d(np.asarray(xi, dtype=float))
        lam, n = self.rate, self.n
        a = self.level(xi_arr)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = self.h.evaluate(a)
            if self.case == "linear":
                if np.any(xi_arr < 0):
                    raise DomainError("xi must be nonnegative in the linear case")
                r = a
                log_surface = special.gammaln(n) - (n - 1) * np.log(r) + np.sum(np.log(self.b))
                out = lam * np.exp(-lam * d + log_surface) * np.abs(self.h.derivative(r))
            else:
                r = np.sqrt(2.0 * a)
                log_surface = (special.gammaln(n / 2 + 1) - math.log(n) - (n / 2) * math.log(math.pi)
                               - (n - 2) * np.log(r) + np.sum(np.log(np.diag(self._chol))))
                out = lam * np.exp(-lam * d + log_surface) * np.abs(self.h.derivative(a))
        out = np.where(np.isnan(out), np.inf, out)
        return float(out[0]) if np.ndim(xi) == 1 else out

    def sample(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        """Draw ``size`` rows: ``d ~ Exp(rate)`` then a uniform point on the level set."""
        d = rng.exponential(1.0 / self.rate, size)
        a = self.h.inverse(d)
        if self.case == "linear":
            z = rng.exponential(1.0, (size, self.n))
            s = z / z.sum(axis=1, keepdims=True)
            return a[:, None] * s / self.b
        z = rng.standard_normal((size, self.n))
        s = z / np.linalg.norm(z, axis=1, keepdims=True)
        # xi'H xi = |L'xi|^2, so xi = L^-T (radius * s)
        radius = np.sqrt(2.0 * a)
        u = radius[:, None] * s
        return np.linalg.solve(self._chol.T, u.T).T


def simplex_pc_density(prior: FoliatedPCPrior, xi):
    if prior.case != "linear":
        raise DomainError("simplex density needs a linear-case prior")
    return prior.density(xi)


def sphere_pc_density(prior: FoliatedPCPrior, xi):
    if prior.case != "quadratic":
        raise DomainError("sphere density needs a quadratic-case prior")
    return prior.density(xi)


def simplex_pc_sample(prior: FoliatedPCPrior, rng, size: int = 1):
    if prior.case != "linear":
        raise DomainError("simplex sampler needs a linear-case prior")
    return prior.sample(rng, size)


def sphere_pc_sample(prior: FoliatedPCPrior, rng, size: int = 1):
    if prior.case != "quadratic":
        raise DomainError("sphere sampler needs a quadratic-case prior")
    return prior.sample(rng, size)


# ---------------------------------------------------------------------------
# correlation matrices
# ---------------------------------------------------------------------------


def n_angles(q: int) -> int:
    return q * (q - 1) // 2


def angle_index(q: int):
    """Pairs ``(i, j)``, ``i > j``, in the storage order of the angle vector."""
    return [(i, j) for i in range(1, q) for j in range(i)]


def _dimension_from_angles(p: int) -> int:
    q = int(round((1 + math.sqrt(1 + 8 * p)) / 2))
    if n_angles(q) != p:
        raise DomainError(f"{p} angles do not form a q(q-1)/2 table")
    return q


@dataclass(frozen=True)
class CorrelationModel:
    """Correlation matrix ``R = BB'`` built from hypersphere angles.

    ``angles`` holds ``theta_ij`` for ``i > j`` in row order:
    ``theta_10, theta_20, theta_21, theta_30, ...`` (0-based indices).
    Row ``i`` of ``B`` is a point on the unit sphere:
    ``B_ij = cos(theta_ij) prod_{k<j} sin(theta_ik)`` and
    ``B_ii = prod_{k<i} sin(theta_ik)``.
    """

    angles: np.ndarray

    def __post_init__(self):
        angles = np.atleast_1d(np.asarray(self.angles, dtype=float))
        if angles.ndim != 1:
            raise DomainError("angles must be a vector")
        if np.any(angles < 0) or np.any(angles > math.pi) or np.any(np.isnan(angles)):
            raise DomainError("angles must lie in [0, pi]")
        _dimension_from_angles(angles.size)
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)

    @property
    def q(self) -> int:
        return _dimension_from_angles(self.angles.size)

    @property
    def p(self) -> int:
        return self.angles.size

    @cached_property
    def B(self) -> np.ndarray:
        q = self.q
        B = np.zeros((q, q))
        B[0, 0] = 1.0
        k = 0
        for i in range(1, q):
            th = self.angles[k:k + i]
            k += i
            sin_prod = 1.0
            for j in range(i):
                B[i, j] = math.cos(th[j]) * sin_prod
                sin_prod *= math.sin(th[j])
            B[i, i] = sin_prod
        return B

    @cached_property
    def R(self) -> np.ndarray:
        R = self.B @ self.B.T
        np.fill_diagonal(R, 1.0)
        return R

    @property
    def gamma(self) -> np.ndarray:
        """``gamma_ij = -log(sin theta_ij)``."""
        with np.errstate(divide="ignore"):
            return -np.log(np.sin(self.angles))

    def neg_log_det(self) -> float:
        """``-log|R| = -2 sum log B_ii`` from the triangular factor."""
        with np.errstate(divide="ignore"):
            return float(-2.0 * np.sum(np.log(np.diag(self.B))))

    def distance(self) -> float:
        """``d(R) = sqrt(-log|R|) = sqrt(2 sum gamma_ij)``."""
        return math.sqrt(2.0 * float(np.sum(self.gamma)))


def angles_to_correlation(theta) -> CorrelationModel:
    return CorrelationModel(np.asarray(theta, dtype=float))


def _angles_from_factor(L) -> np.ndarray:
    """Angles whose rows of ``B`` are the normalised rows of a lower-triangular ``L``."""
    q = L.shape[0]
    angles = []
    for i in range(1, q):
        row = L[i] / np.linalg.norm(L[i])
        sin_prod = 1.0
        for j in range(i):
            # cos and sin of theta_ij from the remaining tail of the row
            c = row[j] / sin_prod if sin_prod > 0 else 1.0
            s = np.linalg.norm(row[j + 1:i + 1]) / sin_prod if sin_prod > 0 else 0.0
            theta = math.atan2(s, c)
            angles.append(theta)
            sin_prod *= math.sin(theta)
    return np.array(angles)


def correlation_from_matrix(R) -> CorrelationModel:
    """Recover the angles of a positive definite correlation matrix from its Cholesky factor."""
    R = np.asarray(R, dtype=float)
    q = R.shape[0]
    if R.shape != (q, q) or not np.allclose(R, R.T) or not np.allclose(np.diag(R), 1.0):
        raise DomainError("R must be a symmetric matrix with unit diagonal")
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise DomainError("R must be positive definite") from exc
    return CorrelationModel(_angles_from_factor(L))


def correlation_pc_density(lam: float, theta) -> float:
    """PC density of the angle vector.

    The simplex density (``n = p``, ``h(a) = sqrt(2a)``) at ``gamma`` times
    ``prod |cot theta_ij|``. Each ``gamma_ij`` is reached from ``theta`` and
    ``pi - theta``, and the factor ``2^-p`` shares the mass between them.
    Returns 0 when some ``sin(theta_ij) = 0``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    model = CorrelationModel(theta)
    p = model.p
    sin = np.sin(theta)
    if np.any(sin <= 0):
        return 0.0
    gamma = -np.log(sin)
    r = float(np.sum(gamma))
    if r == 0.0:
        # at the base model: finite limit only for a single angle
        return 0.5 * lam if p == 1 else math.inf
    prior = FoliatedPCPrior(lam, p, "linear", SQRT_2A)
    with np.errstate(divide="ignore"):
        log_jac = float(np.sum(np.log(np.abs(np.cos(theta)) / sin)))
    base = prior.density(gamma)
    if base == 0.0 or log_jac == -math.inf:
        return 0.0
    return float(base * math.exp(log_jac - p * math.log(2.0)))


def correlation_pc_sample(q: int, lam: float, rng: np.random.Generator,
                          permute: bool = False) -> CorrelationModel:
    """One draw from the correlation-matrix PC prior.

    ``gamma`` comes from the simplex sampler, ``sin theta_ij = exp(-gamma_ij)``
    and each angle is reflected to ``pi - theta`` with probability one half.
    With ``permute=True`` the rows and columns are shuffled by a uniform
    random permutation, which makes the draw exchangeable in the indices.
    """
    if q < 2:
        raise DomainError(f"dimension must be at least 2, got {q}")
    p = n_angles(q)
    gamma = FoliatedPCPrior(lam, p, "linear", SQRT_2A).sample(rng, 1)[0]
    sin = np.exp(-gamma)
    cos = np.sqrt(-np.expm1(-2.0 * gamma))
    cos = np.where(rng.random(p) < 0.5, -cos, cos)
    model = CorrelationModel(np.arctan2(sin, cos))
    if not permute:
        return model
    perm = rng.permutation(q)
    # (PB)' = QT gives PB = T'Q', so T' is a triangular factor of the permuted
    # matrix; this avoids a Cholesky factorisation of a nearly singular draw
    T = np.linalg.qr(model.B[perm].T, mode="r")
    T = T * np.where(np.diag(T) < 0, -1.0, 1.0)[:, None]
    return CorrelationModel(np.clip(_angles_from_factor(T.T), 0.0, math.pi))


def _offdiag(R):
    q = R.shape[0]
    return np.array([R[i, j] for i, j in angle_index(q)])


def _from_offdiag(v, q):
    R = np.eye(q)
    for val, (i, j) in zip(v, angle_index(q)):
        R[i, j] = R[j, i] = val
    return R


def correlation_density_on_entries(lam: float, R, step: float = 1e-6) -> float:
    """Density of the off-diagonal entries of ``R`` for the fixed index order.

    The angle density is multiplied by ``|det d theta / d rho|``, obtained by
    central differences of :func:`correlation_from_matrix`.
    """
    R = np.asarray(R, dtype=float)
    q = R.shape[0]
    model = correlation_from_matrix(R)
    v = _offdiag(R)
    p = v.size
    jac = np.empty((p, p))
    for k in range(p):
        e = np.zeros(p)
        e[k] = step
        up = correlation_from_matrix(_from_offdiag(v + e, q)).angles
        dn = correlation_from_matrix(_from_offdiag(v - e, q)).angles
        jac[:, k] = (up - dn) / (2.0 * step)
    return correlation_pc_density(lam, model.angles) * abs(np.linalg.det(jac))


def correlation_exchangeable_density(lam: float, R) -> float:
    """Order-averaged density over all ``q!`` index permutations (``q <= 4``)."""
    R = np.asarray(R, dtype=float)
    q = R.shape[0]
    if q > 4:
        raise UnsupportedError(f"exact order summation is limited to q <= 4, got q={q}")
    perms = list(itertools.permutations(range(q)))
    return float(np.mean([correlation_density_on_entries(lam, R[np.ix_(pm, pm)]) for pm in perms]))


# ---------------------------------------------------------------------------
# partial autocorrelations and Toeplitz structure
# ---------------------------------------------------------------------------


def _check_pacf(phi) -> np.ndarray:
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if phi.ndim != 1 or phi.size == 0:
        raise DomainError("partial correlations must be a non-empty vector")
    if np.any(np.abs(phi) >= 1) or np.any(np.isnan(phi)):
        raise DomainError("partial correlations must satisfy |phi_i| < 1")
    return phi


def levinson_durbin(phi):
    """Map partial autocorrelations to AR coefficients and autocorrelations.

    Returns
    -------
    psi : ndarray, shape (p,)
        Coefficients of ``x_t = sum_j psi_j x_{t-j} + e_t``.
    s : ndarray, shape (p + 1,)
        Autocorrelations at lags ``0..p``, with ``s[0] = 1``.
    """
    phi = _check_pacf(phi)
    p = phi.size
    s = np.empty(p + 1)
    s[0] = 1.0
    a = np.zeros(0)
    for k in range(1, p + 1):
        # innovation variance of the order k-1 fit, relative to s[0]
        v = 1.0 - a @ s[1:k] if k > 1 else 1.0
        s[k] = a @ s[k - 1:0:-1] + phi[k - 1] * v if k > 1 else phi[0]
        a = np.append(a - phi[k - 1] * a[::-1], phi[k - 1])
    return a, s


def autocorrelations_to_pacf(s) -> np.ndarray:
    """Inverse of :func:`levinson_durbin`: ``s`` (with ``s[0] = 1``) to ``phi``."""
    s = np.asarray(s, dtype=float)
    if s.ndim != 1 or s.size < 2 or s[0] != 1.0:
        raise DomainError("s must be an autocorrelation vector starting with s[0] = 1")
    p = s.size - 1
    phi = np.empty(p)
    a = np.zeros(0)
    v = 1.0
    for k in range(1, p + 1):
        num = s[k] - (a @ s[k - 1:0:-1] if k > 1 else 0.0)
        phi[k - 1] = num / v
        if abs(phi[k - 1]) >= 1:
            raise DomainError("autocorrelations are not positive definite")
        a = np.append(a - phi[k - 1] * a[::-1], phi[k - 1])
        v *= 1.0 - phi[k - 1] ** 2
    return phi


def ar_roots(psi) -> np.ndarray:
    """Roots of the AR polynomial ``1 - sum psi_j z^j``."""
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    return np.roots(np.concatenate([-psi[::-1], [1.0]]))


def step_down(psi) -> np.ndarray:
    """Partial autocorrelations of an AR polynomial by the step-down recursion.

    The inverse of the coefficient update in :func:`levinson_durbin`. A
    reflection coefficient of modulus one or more means the polynomial has a
    root on or inside the unit circle; the recursion stops there and reports it.
    """
    a = np.atleast_1d(np.asarray(psi, dtype=float)).copy()
    p = a.size
    phi = np.empty(p)
    for k in range(p, 0, -1):
        phi[k - 1] = a[-1]
        if abs(a[-1]) >= 1.0:
            phi[:k - 1] = np.nan
            return phi
        prev = a[:-1]
        a = (prev + a[-1] * prev[::-1]) / (1.0 - a[-1] ** 2)
    return phi


def is_stationary(psi) -> bool:
    """True when every root of ``1 - sum psi_j z^j`` lies outside the unit circle.

    Decided by the step-down recursion (all reflection coefficients inside
    ``(-1, 1)``), which stays reliable when roots crowd the unit circle; use
    :func:`ar_roots` to inspect the roots themselves.
    """
    phi = step_down(psi)
    return bool(np.all(np.abs(phi) < 1.0))


def toeplitz_correlation(phi) -> np.ndarray:
    """The ``(p+1) x (p+1)`` Toeplitz correlation matrix implied by ``phi``."""
    from scipy.linalg import toeplitz

    _, s = levinson_durbin(phi)
    return toeplitz(s)


def toeplitz_log_det(phi) -> float:
    """Exact ``log|R|`` of the Toeplitz matrix: ``sum_k (p+1-k) log(1 - phi_k^2)``."""
    phi = _check_pacf(phi)
    p = phi.size
    weights = p + 1 - np.arange(1, p + 1)
    return float(np.sum(weights * np.log1p(-phi * phi)))


def toeplitz_distance(phi) -> float:
    """``d(phi) = sqrt(-sum log(1 - phi_i^2))``."""
    phi = _check_pacf(phi)
    return math.sqrt(float(-np.sum(np.log1p(-phi * phi))))


def toeplitz_pc_density(lam: float, phi) -> float:
    """PC density of the partial autocorrelations.

    Simplex density with ``h(a) = sqrt(a)`` at ``gamma_i = -log(1 - phi_i^2)``
    times ``prod 2|phi_i| / (1 - phi_i^2)``, halved once per coordinate for
    the two signs of ``phi_i``. Zero on the boundary ``|phi_i| = 1``.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if np.any(np.abs(phi) > 1):
        raise DomainError("partial correlations must satisfy |phi_i| <= 1")
    if np.any(np.abs(phi) == 1):
        return 0.0
    p = phi.size
    gamma = -np.log1p(-phi * phi)
    r = float(np.sum(gamma))
    if r == 0.0:
        return 0.5 * lam if p == 1 else math.inf
    if np.any(phi == 0):
        return 0.0
    prior = FoliatedPCPrior(lam, p, "linear", SQRT_A)
    log_jac = float(np.sum(np.log(2.0 * np.abs(phi)) - np.log1p(-phi * phi)))
    return float(prior.density(gamma) * math.exp(log_jac - p * math.log(2.0)))


_BELOW_ONE = np.nextafter(1.0, 0.0)


def toeplitz_pc_sample(p: int, lam: float, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """Draw ``size`` vectors of partial autocorrelations with uniform random signs."""
    gamma = FoliatedPCPrior(lam, p, "linear", SQRT_A).sample(rng, size)
    # draws closer to the boundary than machine precision are kept strictly inside it
    mag = np.minimum(np.sqrt(-np.expm1(-gamma)), _BELOW_ONE)
    sign = np.where(rng.random((size, p)) < 0.5, -1.0, 1.0)
    return sign * mag


__all__ = [
    "CorrelationModel", "FoliatedPCPrior", "HMap", "IDENTITY", "SQRT_2A", "SQRT_A",
    "angle_index", "angles_to_correlation", "autocorrelations_to_pacf",
    "correlation_density_on_entries", "correlation_exchangeable_density",
    "correlation_from_matrix", "correlation_pc_density", "correlation_pc_sample",
    "ar_roots", "is_stationary", "levinson_durbin", "step_down", "n_angles", "simplex_pc_density",
    "simplex_pc_sample", "sphere_pc_density", "sphere_pc_sample", "toeplitz_correlation",
    "toeplitz_distance", "toeplitz_log_det", "toeplitz_pc_density", "toeplitz_pc_sample",
]
