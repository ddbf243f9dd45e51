"""Scalar PC priors: Gaussian precision, Student-t degrees of freedom,
AR(1) lag-one correlation and exchangeable correlation.

Each prior is available twice: as a closed-form density and as a
:class:`~pcpriors.core.PCPrior1D` built from its distance function, so the
two routes can be checked against each other.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np
from scipy import integrate as _integrate
from scipy import optimize
from scipy.interpolate import PchipInterpolator

from .core import (
    DistanceFunction,
    PCPrior1D,
    TailCondition,
    calibrate_rate,
)
from .errors import DomainError, FeasibilityError, NumericalError

# ---------------------------------------------------------------------------
# precision of a Gaussian random effect
# ---------------------------------------------------------------------------


def precision_distance() -> DistanceFunction:
    """``d(tau) = tau^{-1/2}``; the base model sits at ``tau = inf``."""
    return DistanceFunction(
        evaluate=lambda tau: np.power(tau, -0.5),
        derivative=lambda tau: 0.5 * np.power(tau, -1.5),
        inverse=lambda d, b: d ** -2.0,
        support=(0.0, math.inf),
        base=math.inf,
        name="precision",
    )


def precision_density(lam, tau):
    """Type-2 Gumbel density ``lam/2 tau^{-3/2} exp(-lam tau^{-1/2})``."""
    tau = np.asarray(tau, dtype=float)
    if lam <= 0:
        raise DomainError(f"rate must be positive, got {lam}")
    if np.any(tau <= 0):
        raise DomainError("precision must be positive")
    out = 0.5 * lam * tau ** -1.5 * np.exp(-lam / np.sqrt(tau))
    return float(out) if out.ndim == 0 else out


def precision_sample(lam: float, rng: np.random.Generator, size=None):
    """Draw precisions as ``sigma^-2`` with ``sigma ~ Exp(lam)``."""
    if lam <= 0:
        raise DomainError(f"rate must be positive, got {lam}")
    sigma = rng.exponential(1.0 / lam, size)
    return sigma ** -2.0


@dataclass(frozen=True)
class PrecisionPrior:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise DomainError(f"rate must be positive, got {self.rate}")

    @classmethod
    def from_tail(cls, U: float, alpha: float) -> "PrecisionPrior":
        """Rate from ``Prob(1/sqrt(tau) > U) = alpha``, i.e. ``-log(alpha)/U``."""
        if U <= 0:
            raise DomainError(f"U must be positive, got {U}")
        TailCondition(U, alpha)
        return cls(-math.log(alpha) / U)

    def density(self, tau):
        return precision_density(self.rate, tau)

    def sample(self, rng, size=None):
        return precision_sample(self.rate, rng, size)

    def pc_prior(self) -> PCPrior1D:
        return PCPrior1D(self.rate, precision_distance())


# ---------------------------------------------------------------------------
# Student-t degrees of freedom
# ---------------------------------------------------------------------------

NU_MIN_OFFSET = 1e-6
NU_MAX = 1e6
N_NODES = 400


def _log_const(nu: float) -> tuple[float, float]:
    # log Gamma((nu+1)/2) - log Gamma(nu/2), and the same minus log((nu-2)/2) / 2,
    # evaluated in extended precision to avoid cancellation at large nu
    with mpmath.workdps(40):
        nu_m = mpmath.mpf(nu)
        ratio = mpmath.loggamma((nu_m + 1) / 2) - mpmath.loggamma(nu_m / 2)
        return float(ratio), float(ratio - mpmath.log((nu_m - 2) / 2) / 2)


def student_t_kld(nu: float) -> float:
    """KLD of the unit-variance Student-t from the standard Gaussian.

    The t density is scaled by ``sqrt((nu - 2) / nu)`` so its variance is one.
    The expectation of the log density ratio is integrated in the coordinates
    of the unscaled t. For ``nu < 10`` the quadratic part of the Gaussian log
    density is integrated analytically (its integrand decays too slowly near
    ``nu = 2``); above it the ratio is integrated pointwise, which keeps the
    O(nu^-2) result free of cancellation.
    """
    if not nu > 2:
        raise DomainError(f"degrees of freedom must exceed 2, got {nu}")
    if math.isinf(nu):
        return 0.0
    log_ratio, const = _log_const(nu)
    s2 = (nu - 2.0) / nu
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", _integrate.IntegrationWarning)
        val = _student_t_kld_quad(nu, log_ratio, const, s2)
    if val < 0.0:
        if val < -1e-14:
            raise NumericalError(f"negative KLD {val} at nu={nu}")
        val = 0.0
    return val


def _student_t_kld_quad(nu, log_ratio, const, s2):
    c = math.exp(log_ratio) / math.sqrt(nu * math.pi)
    half = 0.5 * (nu + 1.0)

    def pdf(u):
        return c * math.exp(-half * math.log1p(u * u / nu))

    if nu >= 10.0:
        def f(u):
            return pdf(u) * (const + 0.5 * s2 * u * u - 0.5 * (nu + 1.0) * math.log1p(u * u / nu))
        val, _ = _integrate.quad(f, 0.0, math.inf, epsabs=0.0, epsrel=1e-12, limit=500)
        val *= 2.0
    else:
        def f(u):
            return pdf(u) * (const - 0.5 * (nu + 1.0) * math.log1p(u * u / nu))
        val, _ = _integrate.quad(f, 0.0, math.inf, epsabs=0.0, epsrel=1e-12, limit=500)
        val = 2.0 * val + 0.5
    return val


def student_t_distance(nu: float) -> float:
    """``sqrt(2 KLD)`` by direct quadrature."""
    return math.sqrt(2.0 * student_t_kld(nu))


def _asymptotic_distance(nu):
    return np.sqrt(1.5 / nu ** 2 + 3.0 / nu ** 3)


@lru_cache(maxsize=1)
def _student_t_table():
    x = np.linspace(math.log(NU_MIN_OFFSET), math.log(NU_MAX - 2.0), N_NODES)
    d = np.array([student_t_distance(2.0 + math.exp(xi)) for xi in x])
    if np.any(np.diff(d) >= 0):
        raise NumericalError("tabulated Student-t distance is not strictly decreasing")
    interp = PchipInterpolator(x, np.log(d))
    # d^2 is asymptotically linear in log(nu - 2) as nu -> 2
    slope = (d[1] ** 2 - d[0] ** 2) / (x[1] - x[0])
    return x, d, interp, interp.derivative(), slope


def _tabulated_distance(nu):
    nu = np.asarray(nu, dtype=float)
    x_nodes, d_nodes, interp, _, slope = _student_t_table()
    out = np.empty(nu.shape)
    with np.errstate(all="ignore"):
        x = np.log(nu - 2.0)
        low = x < x_nodes[0]
        high = nu > NU_MAX
        mid = ~low & ~high
        out[mid] = np.exp(interp(x[mid]))
        out[low] = np.sqrt(d_nodes[0] ** 2 + slope * (x[low] - x_nodes[0]))
        out[high] = _asymptotic_distance(nu[high])
    # d grows like sqrt(-log(nu - 2)) and has no finite bound at the support edge
    out[nu == 2.0] = math.inf
    out[nu < 2.0] = np.nan
    return out


def _tabulated_derivative(nu):
    nu = np.asarray(nu, dtype=float)
    x_nodes, d_nodes, interp, dinterp, slope = _student_t_table()
    out = np.empty(nu.shape)
    d = _tabulated_distance(nu)
    with np.errstate(all="ignore"):
        x = np.log(nu - 2.0)
        low = x < x_nodes[0]
        high = nu > NU_MAX
        mid = ~low & ~high
        out[mid] = d[mid] * dinterp(x[mid]) / (nu[mid] - 2.0)
        out[low] = slope / (2.0 * d[low] * (nu[low] - 2.0))
        nh = nu[high]
        out[high] = (-3.0 / nh ** 3 - 9.0 / nh ** 4) / (2.0 * d[high])
    return np.abs(out)


def _scalar_or_array(fn):
    def wrapped(nu):
        out = fn(nu)
        return float(out) if np.ndim(out) == 0 else out
    return wrapped


def student_t_distance_function() -> DistanceFunction:
    """Tabulated Student-t distance with its interpolant derivative."""
    return DistanceFunction(
        evaluate=_scalar_or_array(_tabulated_distance),
        derivative=_scalar_or_array(_tabulated_derivative),
        support=(2.0, math.inf),
        base=math.inf,
        name="student_t",
    )


def student_t_pc_density(lam, nu):
    """``lam exp(-lam d(nu)) |d'(nu)|`` on the tabulated distance."""
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 2):
        raise DomainError("degrees of freedom must exceed 2")
    out = lam * np.exp(-lam * _tabulated_distance(nu)) * _tabulated_derivative(nu)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class StudentTPrior:
    """PC prior for the degrees of freedom of a unit-variance Student-t."""

    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise DomainError(f"rate must be positive, got {self.rate}")

    @classmethod
    def from_tail(cls, U: float, alpha: float) -> "StudentTPrior":
        """Rate from ``Prob(nu < U) = alpha``, i.e. ``-log(alpha) / d(U)``."""
        if not U > 2:
            raise DomainError(f"U must exceed 2, got {U}")
        TailCondition(U, alpha, "lower")
        return cls(-math.log(alpha) / float(_tabulated_distance(U)))

    def distance(self, nu):
        out = _tabulated_distance(nu)
        return float(out) if np.ndim(out) == 0 else out

    def density(self, nu):
        return student_t_pc_density(self.rate, nu)

    def log_density(self, nu):
        nu = np.asarray(nu, dtype=float)
        return math.log(self.rate) - self.rate * _tabulated_distance(nu) + np.log(_tabulated_derivative(nu))

    def tail_mass(self, nu_max: float) -> float:
        """``Prob(nu > nu_max)``."""
        return -math.expm1(-self.rate * float(_tabulated_distance(nu_max)))

    def pc_prior(self) -> PCPrior1D:
        return PCPrior1D(self.rate, student_t_distance_function())


@dataclass(frozen=True)
class ExponentialDofPrior:
    """``nu = 2 + E`` with ``E`` exponential, so that ``E(nu) = mean``."""

    mean: float

    def __post_init__(self):
        if not self.mean > 2:
            raise DomainError(f"mean must exceed 2, got {self.mean}")

    def density(self, nu):
        nu = np.asarray(nu, dtype=float)
        scale = self.mean - 2.0
        out = np.where(nu > 2.0, np.exp(-(nu - 2.0) / scale) / scale, 0.0)
        return float(out) if out.ndim == 0 else out

    def log_density(self, nu):
        nu = np.asarray(nu, dtype=float)
        scale = self.mean - 2.0
        return -(nu - 2.0) / scale - math.log(scale)

    def tail_mass(self, nu_max: float) -> float:
        return math.exp(-(nu_max - 2.0) / (self.mean - 2.0))


@dataclass(frozen=True)
class UniformDofPrior:
    """Uniform prior for ``nu`` on ``(2, upper)``."""

    upper: float

    def density(self, nu):
        nu = np.asarray(nu, dtype=float)
        out = np.where((nu > 2.0) & (nu < self.upper), 1.0 / (self.upper - 2.0), 0.0)
        return float(out) if out.ndim == 0 else out

    def log_density(self, nu):
        with np.errstate(divide="ignore"):
            return np.log(self.density(nu))

    def tail_mass(self, nu_max: float) -> float:
        return max(0.0, (self.upper - nu_max) / (self.upper - 2.0))


# ---------------------------------------------------------------------------
# AR(1) lag-one correlation
# ---------------------------------------------------------------------------

BASES = ("rho_zero", "rho_one")


def ar1_distance(base: str = "rho_zero") -> DistanceFunction:
    if base == "rho_zero":
        return DistanceFunction(
            evaluate=lambda r: np.sqrt(-np.log1p(-r * r)),
            derivative=lambda r: np.abs(r) / ((1.0 - r * r) * np.sqrt(-np.log1p(-r * r))),
            inverse=lambda d, b: (1.0 if b == 1 else -1.0) * math.sqrt(-math.expm1(-d * d)),
            support=(-1.0, 1.0),
            base=0.0,
            name="ar1_rho_zero",
        )
    if base == "rho_one":
        return DistanceFunction(
            evaluate=lambda r: np.sqrt(1.0 - r),
            derivative=lambda r: 0.5 / np.sqrt(1.0 - r),
            inverse=lambda d, b: 1.0 - d * d,
            support=(-1.0, 1.0),
            base=1.0,
            closed=(True, False),
            name="ar1_rho_one",
        )
    raise DomainError(f"base must be one of {BASES}, got {base!r}")


@dataclass(frozen=True)
class AR1Prior:
    rate: float
    base: str = "rho_zero"

    def __post_init__(self):
        if not self.rate > 0:
            raise DomainError(f"rate must be positive, got {self.rate}")
        if self.base not in BASES:
            raise DomainError(f"base must be one of {BASES}, got {self.base!r}")

    @classmethod
    def from_tail(cls, base: str, U: float, alpha: float) -> "AR1Prior":
        return cls(ar1_calibrate(base, U, alpha), base)

    def density(self, rho):
        return ar1_density(self, rho)

    def density_z(self, z):
        """Base-0 density on ``z = log((1 + rho) / (1 - rho))``, which resolves ``|rho|`` near one."""
        if self.base != "rho_zero":
            raise DomainError("density_z is defined for the rho_zero base only")
        return exchangeable_density_z(self.rate, 2, z)

    def pc_prior(self) -> PCPrior1D:
        return PCPrior1D(self.rate, ar1_distance(self.base))

    def sample(self, rng, size=None):
        n = 1 if size is None else size
        theta = self.rate
        u = rng.random(n)
        if self.base == "rho_zero":
            d = rng.exponential(1.0 / theta, n)
            sign = np.where(u < 0.5, -1.0, 1.0)
            # keep draws within machine precision of |rho| = 1 strictly inside the support
            out = sign * np.minimum(np.sqrt(-np.expm1(-d * d)), np.nextafter(1.0, 0.0))
        else:
            d = -np.log1p(u * np.expm1(-math.sqrt(2.0) * theta)) / theta
            out = 1.0 - d * d
        return out[0] if size is None else out


def ar1_density(prior: AR1Prior, rho):
    """Closed-form AR(1) PC density for either base model."""
    rho = np.asarray(rho, dtype=float)
    theta = prior.rate
    if prior.base == "rho_zero":
        if np.any(np.abs(rho) >= 1):
            raise DomainError("rho must satisfy |rho| < 1")
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.sqrt(-np.log1p(-rho * rho))
            ratio = np.where(rho == 0.0, 1.0, np.abs(rho) / d)
            out = 0.5 * theta * np.exp(-theta * d) * ratio / (1.0 - rho * rho)
    else:
        if np.any(rho >= 1) or np.any(rho < -1):
            raise DomainError("rho must satisfy -1 <= rho < 1")
        root = np.sqrt(1.0 - rho)
        out = theta * np.exp(-theta * root) / (-np.expm1(-math.sqrt(2.0) * theta) * 2.0 * root)
    return float(out) if out.ndim == 0 else out


def ar1_calibrate(base: str, U: float, alpha: float) -> float:
    """Rate from ``Prob(|rho| > U) = alpha`` (base 0) or ``Prob(rho > U) = alpha`` (base 1).

    Raises
    ------
    FeasibilityError
        For base 1 when ``alpha <= sqrt((1 - U) / 2)``.
    """
    TailCondition(U, alpha)
    if base == "rho_zero":
        if not 0.0 < U < 1.0:
            raise DomainError(f"U must lie in (0, 1), got {U}")
        return -math.log(alpha) / math.sqrt(-math.log1p(-U * U))
    if base != "rho_one":
        raise DomainError(f"base must be one of {BASES}, got {base!r}")
    if not U < 1.0:
        raise DomainError(f"U must be below 1, got {U}")
    bound = math.sqrt((1.0 - U) / 2.0)
    if alpha <= bound:
        raise FeasibilityError(
            f"Prob(rho > {U}) = {alpha} is infeasible: alpha must exceed sqrt((1-U)/2) = {bound:.6g}",
            attainable=(bound, 1.0), bound=bound,
        )
    root = math.sqrt(1.0 - U)

    def f(log_theta):
        theta = math.exp(log_theta)
        return math.expm1(-theta * root) / math.expm1(-math.sqrt(2.0) * theta) - alpha

    lo, hi = math.log(1e-8), math.log(1e8)
    if f(lo) * f(hi) > 0:
        raise FeasibilityError(
            f"Prob(rho > {U}) = {alpha} is not reachable for rates in [1e-8, 1e8]",
            attainable=(bound, 1.0), bound=bound,
        )
    return math.exp(optimize.bisect(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=400))


# ---------------------------------------------------------------------------
# exchangeable correlation
# ---------------------------------------------------------------------------


def _exch_neg_log_det(rho, m):
    # -log((1 + (m-1) rho) (1 - rho)^(m-1)), series near zero to avoid cancellation
    rho = np.asarray(rho, dtype=float)
    k = m - 1
    with np.errstate(all="ignore"):
        direct = -(np.log1p(k * rho) + k * np.log1p(-rho))
    small = np.abs(rho) * k < 1e-3
    if np.any(small):
        r = rho[small] if rho.ndim else rho
        series = np.zeros_like(r)
        for j in range(2, 12):
            series -= (r ** j / j) * ((-1.0) ** (j + 1) * k ** j - k)
        if rho.ndim:
            direct[small] = series
        else:
            direct = series
    return direct


def exchangeable_distance(m: int) -> DistanceFunction:
    """``d(rho) = sqrt(-log((1 + (m-1) rho) (1 - rho)^(m-1)))`` on ``(-1/(m-1), 1)``."""
    if m < 2:
        raise DomainError(f"block size must be at least 2, got {m}")

    def evaluate(rho):
        return np.sqrt(np.maximum(_exch_neg_log_det(rho, m), 0.0))

    def derivative(rho):
        slope = (m - 1) * m * rho / ((1.0 + (m - 1) * rho) * (1.0 - rho))
        return np.abs(slope) / (2.0 * evaluate(rho))

    return DistanceFunction(
        evaluate=evaluate, derivative=derivative,
        support=(-1.0 / (m - 1), 1.0), base=0.0, name=f"exchangeable_m{m}",
    )


@dataclass(frozen=True)
class ExchangeableCorrPrior:
    rate: float
    m: int

    def __post_init__(self):
        if not self.rate > 0:
            raise DomainError(f"rate must be positive, got {self.rate}")
        if self.m < 2:
            raise DomainError(f"block size must be at least 2, got {self.m}")

    @property
    def support(self):
        return (-1.0 / (self.m - 1), 1.0)

    def density(self, rho):
        return exchangeable_corr_density(self.rate, self.m, rho)

    def density_z(self, z):
        """Density of ``z = log((1 + (m-1) rho) / (1 - rho))``; see :func:`exchangeable_density_z`."""
        return exchangeable_density_z(self.rate, self.m, z)

    def pc_prior(self) -> PCPrior1D:
        return PCPrior1D(self.rate, exchangeable_distance(self.m))


def rho_from_z(z, m: int):
    """Inverse of ``z = log((1 + (m-1) rho) / (1 - rho))``."""
    z = np.asarray(z, dtype=float)
    with np.errstate(all="ignore"):
        out = np.where(z > 0, -np.expm1(-z) / (1.0 + (m - 1) * np.exp(-z)), np.expm1(z) / (np.exp(z) + m - 1))
    return float(out) if out.ndim == 0 else out


def exchangeable_density_z(lam: float, m: int, z):
    """Exchangeable-correlation PC density on ``z = log((1 + (m-1) rho) / (1 - rho))``.

    The map sends the support of ``rho`` onto the real line and keeps
    ``1 - rho`` exact when it is far below machine epsilon. For small ``lam``
    a noticeable share of the mass sits there, so this is the scale on which
    to integrate the prior numerically.
    """
    z = np.asarray(z, dtype=float)
    rho = np.asarray(rho_from_z(z, m))
    # -log det = m log((e^z + m - 1) / m) - z
    big = np.logaddexp(z, math.log(m - 1)) - math.log(m)
    neg_log_det = np.where(np.abs(rho) * (m - 1) < 1e-3, _exch_neg_log_det(rho, m), m * big - z)
    d = np.sqrt(np.maximum(neg_log_det, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(d > 0, np.abs(rho) / d, math.sqrt(2.0 / (m * (m - 1))))
    out = 0.25 * lam * (m - 1) * np.exp(-lam * d) * ratio
    return float(out) if out.ndim == 0 else out


def exchangeable_corr_density(lam: float, m: int, rho):
    """Exponential density on ``d`` shared equally by the ``rho < 0`` and ``rho > 0`` branches."""
    rho = np.asarray(rho, dtype=float)
    lo = -1.0 / (m - 1)
    if np.any(rho <= lo) or np.any(rho >= 1):
        raise DomainError(f"rho must lie in ({lo}, 1)")
    dist = exchangeable_distance(m)
    d = dist.evaluate(rho)
    with np.errstate(invalid="ignore", divide="ignore"):
        jac = dist.derivative(rho)
    jac = np.where(rho == 0.0, math.sqrt(m * (m - 1) / 2.0), jac)
    out = 0.5 * lam * np.exp(-lam * d) * jac
    return float(out) if out.ndim == 0 else out


__all__ = [
    "AR1Prior", "ExchangeableCorrPrior", "ExponentialDofPrior", "PrecisionPrior",
    "StudentTPrior", "UniformDofPrior", "ar1_calibrate", "ar1_density", "ar1_distance",
    "exchangeable_corr_density", "exchangeable_density_z", "exchangeable_distance", "rho_from_z", "precision_density",
    "precision_distance", "precision_sample", "student_t_distance",
    "student_t_distance_function", "student_t_kld", "student_t_pc_density",
]
