"""Distance machinery shared by every PC prior.

A prior is built in four moves: measure the complexity of the flexible
model against its base model by the Kullback-Leibler divergence, turn it
into a distance ``d = sqrt(2 KLD)``, put an exponential (or truncated
exponential) density on ``d`` and change variables back to the parameter.
The rate is fixed by a user-supplied tail statement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate as _integrate
from scipy import optimize

from .errors import DomainError, FeasibilityError, NumericalError, UnsupportedError

# quadrature tolerances used throughout the package
QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-8

RATE_BRACKET = (1e-8, 1e8)
PROB_TOL = 1e-10


def kld_gaussian(mean0, cov0, mean1, cov1) -> float:
    """Kullback-Leibler divergence of ``N(mean1, cov1)`` from ``N(mean0, cov0)``.

    ``(mean0, cov0)`` is the base model and ``(mean1, cov1)`` the flexible one::

        0.5 * (tr(cov0^-1 cov1) + (m0 - m1)' cov0^-1 (m0 - m1) - p
               - log(|cov1| / |cov0|))

    Raises
    ------
    DomainError
        On a dimension mismatch or when ``cov0`` is not symmetric positive
        definite.
    """
    cov0 = np.atleast_2d(np.asarray(cov0, dtype=float))
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    p = cov0.shape[0]
    mean0 = np.asarray(mean0, dtype=float)
    mean1 = np.asarray(mean1, dtype=float)
    if mean0.ndim == 0:
        mean0 = np.full(p, float(mean0))
    if mean1.ndim == 0:
        mean1 = np.full(p, float(mean1))
    if cov0.shape != (p, p) or cov1.shape != (p, p) or mean0.shape != (p,) or mean1.shape != (p,):
        raise DomainError(
            f"dimension mismatch: cov0 {cov0.shape}, cov1 {cov1.shape}, "
            f"mean0 {mean0.shape}, mean1 {mean1.shape}"
        )
    try:
        chol0 = np.linalg.cholesky(cov0)
    except np.linalg.LinAlgError as exc:
        raise DomainError("cov0 must be symmetric positive definite") from exc
    sign1, logdet1 = np.linalg.slogdet(cov1)
    if sign1 <= 0:
        raise DomainError("cov1 must have a positive determinant")
    logdet0 = 2.0 * np.sum(np.log(np.diag(chol0)))
    # cov0^-1 cov1 through two triangular solves
    a = np.linalg.solve(chol0, cov1)
    trace = np.trace(np.linalg.solve(chol0, a.T))
    z = np.linalg.solve(chol0, mean0 - mean1)
    val = 0.5 * (trace + z @ z - p - (logdet1 - logdet0))
    # roundoff can push an exact zero slightly negative
    if val < 0.0 and val > -1e-12 * max(1.0, abs(trace)):
        val = 0.0
    return float(val)


def distance_from_kld(kld) -> float:
    """Return ``sqrt(2 * kld)``."""
    if kld < 0:
        raise DomainError(f"KLD must be nonnegative, got {kld}")
    return math.sqrt(2.0 * kld)


def finite_difference(f: Callable[[float], float], x: float, lo: float = -math.inf,
                      hi: float = math.inf) -> float:
    """Derivative of ``f`` at ``x`` by central differences.

    The step is ``max(1e-6 |x|, 1e-8)``; within two steps of ``lo`` or ``hi``
    a second-order one-sided formula is used instead.
    """
    h = max(1e-6 * abs(x), 1e-8)
    if x - h > lo and x + h < hi:
        return (f(x + h) - f(x - h)) / (2.0 * h)
    if x + 2.0 * h < hi:
        return (-3.0 * f(x) + 4.0 * f(x + h) - f(x + 2.0 * h)) / (2.0 * h)
    if x - 2.0 * h > lo:
        return (3.0 * f(x) - 4.0 * f(x - h) + f(x - 2.0 * h)) / (2.0 * h)
    raise NumericalError(f"interval ({lo}, {hi}) too narrow to differentiate at {x}")


def _interval_map(lo: float, hi: float) -> Callable[[float], float]:
    """Map ``t`` in ``(0, 1)`` onto ``(lo, hi)``; infinite ends use ``t / (1 - t)``."""
    if math.isfinite(lo) and math.isfinite(hi):
        return lambda t: lo + t * (hi - lo)
    if math.isfinite(lo):
        return lambda t: lo + t / (1.0 - t)
    if math.isfinite(hi):
        return lambda t: hi - (1.0 - t) / t
    return lambda t: math.tan(math.pi * (t - 0.5))


def integrate(f: Callable[[float], float], lo: float, hi: float,
              points: Optional[Sequence[float]] = None,
              epsabs: float = QUAD_EPSABS, epsrel: float = QUAD_EPSREL,
              limit: int = 200) -> float:
    """Adaptive Gauss-Kronrod quadrature of ``f`` over ``(lo, hi)``.

    Semi-infinite ranges are mapped to ``(0, 1)`` with ``x = lo + t / (1 - t)``
    (or its mirror); doubly infinite ranges are split at zero.
    """
    if lo >= hi:
        return 0.0
    if not math.isfinite(lo) and not math.isfinite(hi):
        return integrate(f, lo, 0.0, epsabs=epsabs, epsrel=epsrel, limit=limit) + \
            integrate(f, 0.0, hi, epsabs=epsabs, epsrel=epsrel, limit=limit)
    if math.isfinite(lo) and math.isfinite(hi):
        val, _ = _integrate.quad(f, lo, hi, points=points, epsabs=epsabs,
                                 epsrel=epsrel, limit=limit)
    else:
        if math.isfinite(lo):
            def g(t):
                s = 1.0 - t
                return f(lo + t / s) / (s * s) if s > 0 else 0.0
        else:
            def g(t):
                return f(hi - (1.0 - t) / t) / (t * t) if t > 0 else 0.0
        tpoints = None
        if points:
            if math.isfinite(lo):
                tpoints = [(p - lo) / (1.0 + p - lo) for p in points if p > lo]
            else:
                tpoints = [1.0 / (1.0 + hi - p) for p in points if p < hi]
        val, _ = _integrate.quad(g, 0.0, 1.0, points=tpoints, epsabs=epsabs,
                                 epsrel=epsrel, limit=limit)
    if not math.isfinite(val):
        raise NumericalError(f"quadrature over ({lo}, {hi}) returned {val}")
    return float(val)


def _safe_eval(f, x):
    with np.errstate(all="ignore"):
        try:
            return float(f(np.float64(x)))
        except (ValueError, ZeroDivisionError, OverflowError):
            return math.nan


@dataclass(frozen=True)
class DistanceFunction:
    """The map from a flexibility parameter to its distance from the base model.

    Parameters
    ----------
    evaluate
        ``xi -> d(xi) >= 0``.
    support
        Interval ``(lo, hi)`` of valid parameter values; ``closed`` says which
        ends belong to it.
    base
        Parameter value of the base model (may be infinite).
    derivative
        Optional analytic ``xi -> |d'(xi)|``. When missing, or when it returns
        a non-finite value (removable singularity), a finite difference is used.
    inverse
        Optional ``(d, branch) -> xi``. Root finding is used otherwise.
    branches
        Intervals on which ``d`` is monotone. Defaults to splitting the support
        at an interior base point.
    """

    evaluate: Callable[[float], float]
    support: tuple
    base: float = 0.0
    derivative: Optional[Callable[[float], float]] = None
    inverse: Optional[Callable[[float, int], float]] = None
    branches: Optional[tuple] = None
    closed: tuple = (False, False)
    name: str = ""

    def __post_init__(self):
        lo, hi = self.support
        if not lo < hi:
            raise DomainError(f"empty support {self.support}")
        if self.branches is None:
            if lo < self.base < hi:
                object.__setattr__(self, "branches", ((lo, self.base), (self.base, hi)))
            else:
                object.__setattr__(self, "branches", ((lo, hi),))

    def __call__(self, xi):
        return self.evaluate(xi)

    def contains(self, xi: float) -> bool:
        lo, hi = self.support
        if xi < lo or xi > hi or math.isnan(xi):
            return False
        if xi == lo and not self.closed[0]:
            return False
        if xi == hi and not self.closed[1]:
            return False
        return True

    def _end_value(self, end: float, inner: float) -> float:
        val = _safe_eval(self.evaluate, end)
        if not math.isnan(val):
            return val
        if not math.isfinite(end):
            end = math.copysign(1e300, end)
            val = _safe_eval(self.evaluate, end)
            if not math.isnan(val):
                return val
        for k in range(15, 3, -1):
            x = end + (inner - end) * 10.0 ** (-k)
            val = _safe_eval(self.evaluate, x)
            if not math.isnan(val):
                return val
        raise NumericalError(f"distance undefined near support end {end}")

    @cached_property
    def branch_ranges(self) -> tuple:
        """``(d at lower end, d at upper end)`` for each branch."""
        out = []
        for lo, hi in self.branches:
            mid = _interval_map(lo, hi)(0.5)
            out.append((self._end_value(lo, mid), self._end_value(hi, mid)))
        return tuple(out)

    @cached_property
    def d_max(self) -> float:
        """Least upper bound of the distance over the support."""
        return max(max(r) for r in self.branch_ranges)

    def branch_d_max(self, b: int) -> float:
        return max(self.branch_ranges[b])

    def branch_index(self, xi: float) -> int:
        """Index of the branch containing ``xi`` (the later one on a shared end)."""
        idx = -1
        for b, (lo, hi) in enumerate(self.branches):
            if lo <= xi <= hi:
                idx = b
        if idx < 0:
            raise DomainError(f"{xi} outside the support {self.support}")
        return idx

    def branch_count(self, d: float) -> int:
        """Number of branches whose distance range contains ``d``."""
        n = 0
        for r in self.branch_ranges:
            if min(r) - 1e-14 <= d <= max(r) + 1e-14:
                n += 1
        return n

    def jacobian(self, xi: float) -> float:
        """``|d'(xi)|``, analytic when available, otherwise by finite differences."""
        if self.derivative is not None:
            with np.errstate(all="ignore"):
                val = float(self.derivative(xi))
            if math.isfinite(val):
                return abs(val)
        lo, hi = self.branches[self.branch_index(xi)]
        return abs(finite_difference(lambda x: float(self.evaluate(x)), xi, lo, hi))

    def invert(self, d: float, b: int) -> float:
        """Parameter value on branch ``b`` at distance ``d``."""
        if self.inverse is not None:
            return float(self.inverse(d, b))
        lo, hi = self.branches[b]
        d_lo, d_hi = self.branch_ranges[b]
        if not min(d_lo, d_hi) <= d <= max(d_lo, d_hi):
            raise DomainError(f"distance {d} not attained on branch {b}")
        xmap = _interval_map(lo, hi)
        sign = 1.0 if d_hi > d_lo else -1.0

        def g(t):
            if t <= 0.0:
                return sign * (d_lo - d)
            if t >= 1.0:
                return sign * (d_hi - d)
            return sign * (float(self.evaluate(xmap(t))) - d)

        eps = 1e-15
        a, c = eps, 1.0 - eps
        ga, gc = g(a), g(c)
        if ga >= 0.0:
            return xmap(a)
        if gc <= 0.0:
            return xmap(c)
        t = optimize.brentq(g, a, c, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
        return xmap(t)

    def check_monotone(self, npts: int = 257) -> None:
        """Raise ``UnsupportedError`` unless ``d`` is monotone on every branch."""
        for lo, hi in self.branches:
            xmap = _interval_map(lo, hi)
            t = np.linspace(0.0, 1.0, npts + 2)[1:-1]
            vals = np.array([_safe_eval(self.evaluate, xmap(ti)) for ti in t])
            vals = vals[np.isfinite(vals)]
            diff = np.diff(vals)
            tol = 1e-12 * max(1.0, np.max(np.abs(vals)) if vals.size else 1.0)
            if not (np.all(diff >= -tol) or np.all(diff <= tol)):
                raise UnsupportedError(
                    f"distance {self.name or ''} is not monotone on ({lo}, {hi}); "
                    "supply a branch decomposition"
                )

    def pullback(self, transform: Callable[[float], float], support: tuple,
                 base: float, transform_derivative: Optional[Callable] = None,
                 closed: tuple = (False, False), name: str = "") -> "DistanceFunction":
        """The same distance written in a new parameter ``eta`` with ``xi = transform(eta)``.

        Without ``transform_derivative`` the Jacobian of the result is left to
        finite differences.
        """
        derivative = None
        if transform_derivative is not None:
            def derivative(eta):
                return self.jacobian(transform(eta)) * abs(transform_derivative(eta))
        return DistanceFunction(
            evaluate=lambda eta: self.evaluate(transform(eta)),
            support=support, base=base, derivative=derivative,
            closed=closed, name=name or f"{self.name}-pullback",
        )


@dataclass(frozen=True)
class TailCondition:
    """``Prob(Q(xi) > U) = alpha`` (``direction='upper'``) or ``Prob(Q(xi) < U) = alpha``."""

    bound: float
    alpha: float
    direction: str = "upper"
    transform: Callable[[float], float] = field(default=lambda x: x)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.direction not in ("upper", "lower"):
            raise DomainError(f"direction must be 'upper' or 'lower', got {self.direction!r}")

    def holds(self, xi: float) -> bool:
        q = self.transform(xi)
        return q > self.bound if self.direction == "upper" else q < self.bound


@dataclass(frozen=True)
class PCPrior1D:
    """Exponential prior on the distance scale, written on the parameter scale.

    The prior is truncated whenever the distance is bounded; on branching
    distances the mass at a given ``d`` is shared equally between the
    branches that reach it.
    """

    rate: float
    distance: DistanceFunction

    def __post_init__(self):
        if not self.rate > 0.0 or not math.isfinite(self.rate):
            raise DomainError(f"rate must be positive and finite, got {self.rate}")

    @property
    def truncated(self) -> bool:
        return math.isfinite(self.distance.d_max)

    @property
    def normalizer(self) -> float:
        if not self.truncated:
            return 1.0
        return 1.0 / -math.expm1(-self.rate * self.distance.d_max)

    def density_on_distance(self, d):
        """``rate * exp(-rate d) * normalizer`` on ``[0, d_max]``."""
        d = np.asarray(d, dtype=float)
        out = self.rate * np.exp(-self.rate * d) * self.normalizer
        return np.where((d >= 0) & (d <= self.distance.d_max), out, 0.0)

    def _density_scalar(self, xi: float) -> float:
        dist = self.distance
        if not dist.contains(xi):
            raise DomainError(f"{xi} outside the support {dist.support}")
        d = _safe_eval(dist.evaluate, xi)
        if not math.isfinite(d):
            return 0.0
        k = max(dist.branch_count(d), 1)
        return self.rate * math.exp(-self.rate * d) * dist.jacobian(xi) * self.normalizer / k

    def density(self, xi):
        if np.ndim(xi) == 0:
            return self._density_scalar(float(xi))
        return np.array([self._density_scalar(float(x)) for x in np.ravel(xi)]).reshape(np.shape(xi))

    def distance_mass(self, a: float, b: float, branch: int) -> float:
        """Prior probability that ``d`` falls in ``[a, b]`` on one branch."""
        dist = self.distance
        lo_b, hi_b = sorted(dist.branch_ranges[branch])
        a, b = max(a, lo_b), min(b, hi_b)
        if a >= b:
            return 0.0
        cuts = sorted({a, b, *(v for r in dist.branch_ranges for v in r if a < v < b)})
        total = 0.0
        for left, right in zip(cuts[:-1], cuts[1:]):
            mid = right if not math.isfinite(right) else 0.5 * (left + right)
            if not math.isfinite(mid):
                mid = left + 1.0
            k = max(dist.branch_count(mid), 1)
            upper = 0.0 if not math.isfinite(right) else math.exp(-self.rate * right)
            total += (math.exp(-self.rate * left) - upper) / k
        return total * self.normalizer

    def sample(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        """Draw ``d`` from the (truncated) exponential, pick a branch, invert."""
        dist = self.distance
        u = rng.random(size)
        if self.truncated:
            d = -np.log1p(u * np.expm1(-self.rate * dist.d_max)) / self.rate
        else:
            d = -np.log1p(-u) / self.rate
        nb = len(dist.branches)
        pick = rng.random(size)
        out = np.empty(size)
        for i, di in enumerate(d):
            if nb == 1:
                b = 0
            else:
                avail = [j for j in range(nb) if dist.branch_d_max(j) >= di]
                b = avail[min(int(pick[i] * len(avail)), len(avail) - 1)]
            out[i] = dist.invert(float(di), b)
        return out

    def tail_probability(self, tail: TailCondition) -> float:
        return _event_probability(self.rate, self.distance, _event_intervals(self.distance, tail))


def pc_density(prior: PCPrior1D, xi):
    """PC prior density at ``xi``: ``rate exp(-rate d) |d'| normalizer`` (branch shared)."""
    return prior.density(xi)


def prior_on_distance_scale(density_xi: Callable[[float], float], distance: DistanceFunction,
                            grid: Sequence[float]) -> np.ndarray:
    """Push an arbitrary prior on the parameter to the distance scale.

    Returns an ``(len(grid), 2)`` array of ``(d, pi_d(d))``, summing the
    contributions of every monotone branch.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise DomainError("grid must be strictly increasing")
    distance.check_monotone()
    out = np.zeros((grid.size, 2))
    out[:, 0] = grid
    for i, d in enumerate(grid):
        total = 0.0
        for b, r in enumerate(distance.branch_ranges):
            if not min(r) <= d <= max(r):
                continue
            xi = distance.invert(float(d), b)
            if not distance.contains(xi):
                continue
            jac = distance.jacobian(xi)
            dens = float(density_xi(xi))
            if dens == 0.0:
                continue
            total += dens / jac
        out[i, 1] = total
    return out


def _event_intervals(distance: DistanceFunction, tail: TailCondition, npts: int = 1025):
    """Translate a tail event on the parameter into distance intervals per branch."""
    events = []
    anywhere = False
    everywhere = True
    for b, (lo, hi) in enumerate(distance.branches):
        xmap = _interval_map(lo, hi)
        ts = np.linspace(0.0, 1.0, npts + 2)[1:-1]

        def resid(t):
            return tail.transform(xmap(t)) - tail.bound

        with np.errstate(all="ignore"):
            vals = np.array([resid(t) for t in ts])
        roots = []
        for j in range(len(ts) - 1):
            if vals[j] == 0.0:
                roots.append(ts[j])
            elif np.sign(vals[j]) * np.sign(vals[j + 1]) < 0:
                roots.append(optimize.brentq(resid, ts[j], ts[j + 1], xtol=1e-16,
                                             rtol=4 * np.finfo(float).eps))
        cuts = [0.0, *roots, 1.0]
        d_lo, d_hi = distance.branch_ranges[b]
        for left, right in zip(cuts[:-1], cuts[1:]):
            if right - left <= 0.0:
                continue
            held = tail.holds(xmap(0.5 * (left + right)))
            anywhere |= held
            everywhere &= held
            if not held:
                continue
            dl = d_lo if left == 0.0 else float(distance.evaluate(xmap(left)))
            dr = d_hi if right == 1.0 else float(distance.evaluate(xmap(right)))
            events.append((b, min(dl, dr), max(dl, dr)))
    if not anywhere or everywhere:
        raise DomainError(f"bound U={tail.bound} is not inside the image of Q over the support")
    return events


def _event_probability(rate: float, distance: DistanceFunction, events) -> float:
    prior = PCPrior1D(rate, distance)
    return sum(prior.distance_mass(a, b, br) for br, a, b in events)


def calibrate_rate(distance: DistanceFunction, tail: TailCondition) -> float:
    """Rate such that the PC prior satisfies the tail statement.

    Uses ``-log(alpha) / d*`` when the event is ``{d > d*}`` on an unbounded
    distance, bisection on ``log(rate)`` over ``[1e-8, 1e8]`` otherwise.

    Raises
    ------
    FeasibilityError
        When ``alpha`` lies outside the probabilities attainable by any rate.
    """
    events = _event_intervals(distance, tail)
    starts = {round(a, 15) for _, a, b in events}
    untruncated = not math.isfinite(distance.d_max)
    covers_all = len({br for br, _, _ in events}) == len(distance.branches)
    if (untruncated and covers_all and len(starts) == 1
            and all(not math.isfinite(b) for _, _, b in events)
            and all(math.isinf(distance.branch_d_max(j)) for j in range(len(distance.branches)))):
        d_star = events[0][1]
        if d_star > 0.0:
            return -math.log(tail.alpha) / d_star

    def f(log_rate):
        return _event_probability(math.exp(log_rate), distance, events) - tail.alpha

    lo, hi = math.log(RATE_BRACKET[0]), math.log(RATE_BRACKET[1])
    f_lo, f_hi = f(lo), f(hi)
    attainable = tuple(sorted((f_lo + tail.alpha, f_hi + tail.alpha)))
    if f_lo * f_hi > 0:
        raise FeasibilityError(
            f"alpha={tail.alpha} is not attainable; the prior reaches probabilities in "
            f"({attainable[0]:.6g}, {attainable[1]:.6g})",
            attainable=attainable,
        )
    log_rate = optimize.bisect(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=400)
    if abs(f(log_rate)) > PROB_TOL:
        raise NumericalError(f"calibration residual {f(log_rate):.3g} exceeds {PROB_TOL}")
    return math.exp(log_rate)
