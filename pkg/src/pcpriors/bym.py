"""Priors that depend on a structure matrix.

Covers scaling of (possibly intrinsic) structure matrices, the prior for the
mixing parameter of a structured/unstructured random effect, the same
construction with an interior base model for two arbitrary covariances, and
the prior on variance weights of an additive model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .core import DistanceFunction, PCPrior1D, TailCondition, calibrate_rate
from .errors import DegenerateComponentError, DomainError, FeasibilityError, NumericalError
from .multivariate import SQRT_2A, FoliatedPCPrior

RANK_TOL = 1e-10
RADICAND_TOL = 1e-10
HESSIAN_STEP = 1e-4
DEGENERATE_CURVATURE = 1e-6


# ---------------------------------------------------------------------------
# structure matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StructureModel:
    """Eigen-decomposed structure (precision) matrix.

    Attributes
    ----------
    R : ndarray
        The (scaled) structure matrix.
    eigenvalues : ndarray
        ``gamma_i``, ascending, with values under the rank tolerance set to 0.
    eigenvectors : ndarray
    null_space : ndarray
        Columns spanning the kernel of ``R`` (possibly zero columns).
    scale : float
        Factor the input matrix was multiplied by.
    """

    R: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    null_space: np.ndarray
    scale: float = 1.0
    scaled: bool = False

    @property
    def n(self) -> int:
        return self.R.shape[0]

    @property
    def rank(self) -> int:
        return int(np.sum(self.eigenvalues > 0))

    @property
    def gamma_tilde(self) -> np.ndarray:
        """Eigenvalues of the generalized inverse: ``1/gamma_i``, or 0 on the kernel."""
        g = self.eigenvalues
        out = np.zeros_like(g)
        pos = g > 0
        out[pos] = 1.0 / g[pos]
        return out

    def generalized_inverse(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.gamma_tilde) @ V.T

    def marginal_variances(self) -> np.ndarray:
        """Diagonal of the generalized inverse (variances of ``x`` given ``V'x = 0``)."""
        return np.einsum("ij,j,ij->i", self.eigenvectors, self.gamma_tilde, self.eigenvectors)


def decompose_structure(R, rank_tol: float = RANK_TOL) -> StructureModel:
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DomainError("structure matrix must be square")
    if not np.allclose(R, R.T, atol=1e-12 * max(1.0, np.abs(R).max())):
        raise DomainError("structure matrix must be symmetric")
    R = 0.5 * (R + R.T)
    vals, vecs = np.linalg.eigh(R)
    top = max(abs(vals).max(), np.finfo(float).tiny)
    if vals.min() < -rank_tol * top:
        raise DomainError(f"structure matrix is indefinite (smallest eigenvalue {vals.min():.3g})")
    vals = np.where(vals <= rank_tol * top, 0.0, vals)
    return StructureModel(R, vals, vecs, vecs[:, vals == 0.0])


def scale_structure(R, rank_tol: float = RANK_TOL) -> StructureModel:
    """Scale ``R`` so the geometric mean of the constrained marginal variances is one."""
    model = decompose_structure(R, rank_tol)
    var = model.marginal_variances()
    if np.any(var <= 0):
        raise DomainError("some marginal variances vanish; every node must be connected to the structure")
    c = float(np.exp(np.mean(np.log(var))))
    return StructureModel(model.R * c, model.eigenvalues * c, model.eigenvectors,
                          model.null_space, model.scale * c, True)


def rw2_structure(m: int) -> np.ndarray:
    """Second-order random-walk precision ``D'D`` for ``m`` equally spaced nodes."""
    if m < 3:
        raise DomainError("a second-order random walk needs at least 3 nodes")
    D = np.diff(np.eye(m), n=2, axis=0)
    return D.T @ D


# ---------------------------------------------------------------------------
# mixing parameter distances
# ---------------------------------------------------------------------------


def _x_minus_log1p(x):
    """``x - log(1 + x)`` without cancellation near zero."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = x - np.log1p(x)
    small = np.abs(x) < 1e-3
    xs = np.where(small, x, 0.0)
    series = xs * xs * (0.5 - xs / 3.0 + xs * xs / 4.0 - xs ** 3 / 5.0)
    return np.where(small, series, direct)


def _radicand_to_distance(rad):
    rad = np.asarray(rad, dtype=float)
    if np.any(rad < -RADICAND_TOL):
        raise NumericalError(f"negative squared distance {rad.min():.3g}")
    return np.sqrt(np.maximum(rad, 0.0))


def bym_distance(model: StructureModel, phi):
    """Distance of the mixture ``(1 - phi) I + phi R^-`` from the identity.

    ``d(phi)^2 = sum_i [phi (g_i - 1) - log(1 + phi (g_i - 1))]`` with ``g`` the
    generalized-inverse eigenvalues. For an intrinsic ``R`` the zero entries of
    ``g`` make ``d`` grow without bound as ``phi -> 1``.
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0) or np.any(phi > 1):
        raise DomainError("phi must lie in [0, 1]")
    mu = model.gamma_tilde - 1.0
    rad = np.sum(_x_minus_log1p(np.multiply.outer(phi, mu)), axis=-1)
    out = _radicand_to_distance(rad)
    return float(out) if out.ndim == 0 else out


def _eigen_mixing_distance(mu: np.ndarray, base: float, support=(0.0, 1.0), name="mixing") -> DistanceFunction:
    """Distance function with ``d^2 = sum_j [t mu_j - log(1 + t mu_j)]``, ``t = phi - base``."""
    slope0 = math.sqrt(0.5 * float(np.sum(mu * mu)))

    def evaluate(phi):
        t = np.asarray(phi, dtype=float) - base
        rad = np.sum(_x_minus_log1p(np.multiply.outer(t, mu)), axis=-1)
        return _radicand_to_distance(rad)

    def derivative(phi):
        t = np.asarray(phi, dtype=float) - base
        with np.errstate(divide="ignore", invalid="ignore"):
            drad = np.sum(t[..., None] * mu * mu / (1.0 + np.multiply.outer(t, mu)), axis=-1)
            d = evaluate(phi)
            out = np.abs(drad) / (2.0 * d)
        return np.where(t == 0.0, slope0, out)

    return DistanceFunction(evaluate=evaluate, derivative=derivative, support=support,
                            base=base, closed=(True, True), name=name)


def bym_distance_function(model: StructureModel) -> DistanceFunction:
    return _eigen_mixing_distance(model.gamma_tilde - 1.0, 0.0, name="bym")


class MixingDistance:
    """Distance for ``Sigma(phi) = (1 - phi) S1 + phi S2`` from ``Sigma(phi0)``.

    The KLD only depends on the eigenvalues ``mu`` of
    ``Sigma(phi0)^-1 (S2 - S1)``. When ``S2 - S1`` has rank ``k < n`` they are
    found from a ``k x k`` problem (matrix determinant lemma), so every
    evaluation costs ``O(k)``.
    """

    def __init__(self, S1, S2, phi0: float = 0.5, rank_tol: float = RANK_TOL):
        S1 = np.atleast_2d(np.asarray(S1, dtype=float))
        S2 = np.atleast_2d(np.asarray(S2, dtype=float))
        if S1.shape != S2.shape or S1.shape[0] != S1.shape[1]:
            raise DomainError("S1 and S2 must be square matrices of the same size")
        if not 0.0 <= phi0 <= 1.0:
            raise DomainError("phi0 must lie in [0, 1]")
        self.S1, self.S2, self.phi0 = S1, S2, float(phi0)
        self.base_cov = (1.0 - phi0) * S1 + phi0 * S2
        try:
            self._chol = np.linalg.cholesky(self.base_cov)
        except np.linalg.LinAlgError as exc:
            raise DomainError("the base covariance is singular") from exc
        self.log_det_base = 2.0 * float(np.sum(np.log(np.diag(self._chol))))
        diff = 0.5 * ((S2 - S1) + (S2 - S1).T)
        vals, vecs = np.linalg.eigh(diff)
        top = abs(vals).max() if vals.size else 0.0
        keep = np.abs(vals) > rank_tol * max(top, np.finfo(float).tiny)
        self.rank = int(keep.sum())
        if self.rank == 0:
            self.mu = np.zeros(0)
        elif self.rank < diff.shape[0]:
            U = vecs[:, keep]
            C = vals[keep]
            W = linalg.solve_triangular(self._chol, U, lower=True)
            M = W.T @ W
            Lm = np.linalg.cholesky(M)
            self.mu = np.linalg.eigvalsh(Lm.T @ (C[:, None] * Lm))
        else:
            A = linalg.solve_triangular(self._chol, diff, lower=True)
            A = linalg.solve_triangular(self._chol, A.T, lower=True)
            self.mu = np.linalg.eigvalsh(0.5 * (A + A.T))
        self.distance = _eigen_mixing_distance(self.mu, self.phi0, name="mixing_general")

    def log_det(self, phi: float) -> float:
        """``log|Sigma(phi)|`` by the determinant lemma."""
        return self.log_det_base + float(np.sum(np.log1p((phi - self.phi0) * self.mu)))

    def dense_log_det(self, phi: float) -> float:
        sign, val = np.linalg.slogdet((1.0 - phi) * self.S1 + phi * self.S2)
        if sign <= 0:
            raise NumericalError("covariance is not positive definite")
        return float(val)

    def __call__(self, phi):
        out = self.distance.evaluate(phi)
        return float(out) if np.ndim(out) == 0 else out


def mixing_distance_general(S1, S2, phi, phi0: float = 0.5):
    return MixingDistance(S1, S2, phi0)(phi)


@dataclass(frozen=True)
class MixingPrior:
    """Truncated exponential prior on a mixing distance over ``phi`` in ``[0, 1]``."""

    rate: float
    distance: DistanceFunction

    @property
    def base(self) -> float:
        return self.distance.base

    @property
    def pc(self) -> PCPrior1D:
        return PCPrior1D(self.rate, self.distance)

    def density(self, phi):
        return self.pc.density(phi)

    def sample(self, rng, size: int = 1):
        return self.pc.sample(rng, size)

    def prob_below(self, u: float) -> float:
        return self.pc.tail_probability(TailCondition(u, 0.5, "lower"))


def bym_pc_density(model: StructureModel, lam: float, phi):
    return MixingPrior(lam, bym_distance_function(model)).density(phi)


def bym_calibrate(model: StructureModel, u: float, alpha: float) -> float:
    """Rate with ``Prob(phi < u) = alpha``.

    For a bounded distance the attainable range is ``(d(u)/d(1), 1)``; the
    error raised outside it carries that bound.
    """
    if not 0.0 < u < 1.0:
        raise DomainError(f"u must lie in (0, 1), got {u}")
    dist = bym_distance_function(model)
    d1 = dist.d_max
    bound = float(dist.evaluate(u)) / d1 if math.isfinite(d1) else 0.0
    try:
        return calibrate_rate(dist, TailCondition(u, alpha, "lower"))
    except FeasibilityError as exc:
        raise FeasibilityError(
            f"Prob(phi < {u}) = {alpha} is infeasible: alpha must exceed d(u)/d(1) = {bound:.6g}",
            attainable=exc.attainable, bound=bound,
        ) from exc


def general_mixing_prior(S1, S2, lam: float, phi0: float = 0.5) -> MixingPrior:
    return MixingPrior(lam, MixingDistance(S1, S2, phi0).distance)


# ---------------------------------------------------------------------------
# variance weights
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightSimplex:
    """Weights on the simplex and their log-ratio coordinates ``log(w_i / w_n)``."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or w.size < 2 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be a nonnegative vector summing to one")
        object.__setattr__(self, "w", w)

    @property
    def logratio(self) -> np.ndarray:
        return to_logratio(self.w)

    @classmethod
    def from_logratio(cls, wt) -> "WeightSimplex":
        return cls(from_logratio(wt))


def to_logratio(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.log(w[..., :-1]) - np.log(w[..., -1:])


def from_logratio(wt) -> np.ndarray:
    wt = np.asarray(wt, dtype=float)
    z = np.concatenate([wt, np.zeros(wt.shape[:-1] + (1,))], axis=-1)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _mixture(covs, w):
    return sum(wi * C for wi, C in zip(w, covs))


def weights_kld(covs: Sequence[np.ndarray], wt) -> float:
    """KLD of the mixture at log-ratio ``wt`` from the equal-weight mixture.

    Evaluated as ``sum_j [mu_j - log(1 + mu_j)] / 2`` with ``mu`` the
    eigenvalues of ``base^-1 (Sigma(w) - base)``. The difference is formed
    from the weight differences, so near the base model nothing cancels and
    finite differences of the KLD stay accurate.
    """
    n = len(covs)
    base = _mixture(covs, np.full(n, 1.0 / n))
    try:
        chol = np.linalg.cholesky(base)
    except np.linalg.LinAlgError as exc:
        raise DomainError("the equal-weight mixture covariance must be positive definite") from exc
    diff = _mixture(covs, from_logratio(wt) - 1.0 / n)
    A = linalg.solve_triangular(chol, diff, lower=True)
    A = linalg.solve_triangular(chol, A.T, lower=True)
    mu = np.linalg.eigvalsh(0.5 * (A + A.T))
    return 0.5 * float(np.sum(_x_minus_log1p(mu)))


def weights_kld_gradient(covs, wt=None, step: float = HESSIAN_STEP) -> np.ndarray:
    n = len(covs)
    wt = np.zeros(n - 1) if wt is None else np.asarray(wt, dtype=float)
    g = np.empty(n - 1)
    for i in range(n - 1):
        e = np.zeros(n - 1)
        e[i] = step
        g[i] = (weights_kld(covs, wt + e) - weights_kld(covs, wt - e)) / (2.0 * step)
    return g


def weights_kld_hessian(covs, step: float = HESSIAN_STEP) -> np.ndarray:
    """Central-difference Hessian of the KLD at ``wt = 0``, symmetrized."""
    m = len(covs) - 1
    f0 = weights_kld(covs, np.zeros(m))
    H = np.empty((m, m))
    for i in range(m):
        ei = np.zeros(m)
        ei[i] = step
        H[i, i] = (weights_kld(covs, ei) - 2.0 * f0 + weights_kld(covs, -ei)) / step ** 2
        for j in range(i):
            ej = np.zeros(m)
            ej[j] = step
            H[i, j] = H[j, i] = (
                weights_kld(covs, ei + ej) - weights_kld(covs, ei - ej)
                - weights_kld(covs, ej - ei) + weights_kld(covs, -ei - ej)
            ) / (4.0 * step ** 2)
    return 0.5 * (H + H.T)


def weights_pc_prior(component_covariances: Sequence[np.ndarray], lam: float,
                     step: float = HESSIAN_STEP) -> FoliatedPCPrior:
    """Sphere-case PC prior on the log-ratio weights.

    The KLD is replaced by its quadratic approximation ``wt'H wt / 2`` at the
    equal-weight base model, ``H`` being a central-difference Hessian.

    Raises
    ------
    DegenerateComponentError
        When ``H`` has no positive curvature or is clearly indefinite, which
        happens when some components cannot be told apart.
    """
    covs = [np.atleast_2d(np.asarray(C, dtype=float)) for C in component_covariances]
    if len(covs) < 2:
        raise DomainError("at least two components are needed")
    H = weights_kld_hessian(covs, step)
    vals, vecs = np.linalg.eigh(H)
    top = vals.max()
    # finite-difference noise on a KLD that is identically zero is about eps / step^2
    if top <= DEGENERATE_CURVATURE or vals.min() < -1e-6 * top:
        raise DegenerateComponentError(
            f"KLD Hessian is not positive definite (eigenvalues {vals.min():.3g}..{top:.3g}); "
            "the components are not distinguishable"
        )
    floor = 1e-10 * np.trace(H) / H.shape[0]
    if vals.min() < floor:
        H = (vecs * np.maximum(vals, floor)) @ vecs.T
        H = 0.5 * (H + H.T)
    return FoliatedPCPrior(lam, H.shape[0], "quadratic", SQRT_2A, H=H)


def sample_weights(prior: FoliatedPCPrior, rng, size: int = 1) -> np.ndarray:
    """Draw weights on the simplex from a log-ratio prior."""
    return from_logratio(prior.sample(rng, size))


def intercept_projection(n: int) -> np.ndarray:
    """Orthonormal basis (``n x (n-1)``) of the complement of the constant vector."""
    q, _ = np.linalg.qr(np.column_stack([np.ones(n), np.eye(n)[:, : n - 1]]))
    return q[:, 1:]


class AdditiveVariancePrior:
    """Variance-weight prior for an additive predictor ``sum_i sqrt(w_i) (linear_i + smooth_i)``.

    Component ``i`` has covariance ``(1 - phi_i) x_i x_i' + phi_i K_i``. The
    weight prior depends on ``phi`` and is rebuilt by :meth:`weights_prior`;
    the result is memoised per ``phi`` vector on this instance, so share an
    instance across threads only with outside locking.
    """

    def __init__(self, covariates: Sequence[np.ndarray], smooth_covariances: Sequence[np.ndarray],
                 rate: float, project_intercept: bool = False):
        if len(covariates) != len(smooth_covariances) or len(covariates) < 2:
            raise DomainError("need matching covariates and smooth covariances for at least two components")
        xs = [np.asarray(x, dtype=float).reshape(-1) for x in covariates]
        Ks = [np.atleast_2d(np.asarray(K, dtype=float)) for K in smooth_covariances]
        n = xs[0].size
        if any(x.size != n for x in xs) or any(K.shape != (n, n) for K in Ks):
            raise DomainError("all components must live on the same n observations")
        if project_intercept:
            Q = intercept_projection(n)
            xs = [Q.T @ x for x in xs]
            Ks = [Q.T @ K @ Q for K in Ks]
        self.covariates, self.smooth = xs, Ks
        self.rate = rate
        self._cache: dict = {}

    def component_covariance(self, i: int, phi: float) -> np.ndarray:
        x = self.covariates[i]
        return (1.0 - phi) * np.outer(x, x) + phi * self.smooth[i]

    def weights_prior(self, phi) -> FoliatedPCPrior:
        key = tuple(float(v) for v in phi)
        if len(key) != len(self.covariates):
            raise DomainError("one phi per component is required")
        if key not in self._cache:
            covs = [self.component_covariance(i, p) for i, p in enumerate(key)]
            self._cache[key] = weights_pc_prior(covs, self.rate)
        return self._cache[key]

    def mixing_prior(self, i: int, rate: float) -> MixingPrior:
        """Prior for ``phi_i`` with base ``phi_i = 1/2`` (equal linear and smooth parts)."""
        x = self.covariates[i]
        return general_mixing_prior(np.outer(x, x), self.smooth[i], rate, 0.5)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _read_header(lines, path):
    for k, line in enumerate(lines):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        if len(parts) != 2 or parts[0] != "n":
            raise DomainError(f"{path}: expected header 'n <dim>', got {line.strip()!r}")
        try:
            n = int(parts[1])
        except ValueError as exc:
            raise DomainError(f"{path}: bad dimension {parts[1]!r}") from exc
        if n < 1:
            raise DomainError(f"{path}: dimension must be positive")
        return n, lines[k + 1:]
    raise DomainError(f"{path}: empty file")


def _records(lines, width, path):
    for line in lines:
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        if len(parts) != width:
            raise DomainError(f"{path}: expected {width} fields per line, got {line.strip()!r}")
        yield parts


def read_structure_triplets(path) -> np.ndarray:
    """Read ``n <dim>`` then ``i j value`` lines (0-based); a single off-diagonal entry is mirrored."""
    with open(path) as fh:
        n, rest = _read_header(fh.readlines(), path)
    R = np.zeros((n, n))
    seen = np.zeros((n, n), dtype=bool)
    for i, j, v in _records(rest, 3, path):
        i, j, v = int(i), int(j), float(v)
        if not (0 <= i < n and 0 <= j < n):
            raise DomainError(f"{path}: index ({i}, {j}) out of range for n={n}")
        R[i, j] = v
        seen[i, j] = True
        if not seen[j, i]:
            R[j, i] = v
    return R


def read_adjacency(path) -> np.ndarray:
    """Read ``n <dim>`` then ``i j`` edges and return the CAR structure (degree on the diagonal, -1 per edge)."""
    with open(path) as fh:
        n, rest = _read_header(fh.readlines(), path)
    A = np.zeros((n, n))
    for i, j in _records(rest, 2, path):
        i, j = int(i), int(j)
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise DomainError(f"{path}: bad edge ({i}, {j}) for n={n}")
        A[i, j] = A[j, i] = 1.0
    return np.diag(A.sum(axis=1)) - A


__all__ = [
    "AdditiveVariancePrior", "MixingDistance", "MixingPrior", "StructureModel", "WeightSimplex",
    "bym_calibrate", "bym_distance", "bym_distance_function", "bym_pc_density",
    "decompose_structure", "from_logratio", "general_mixing_prior", "intercept_projection",
    "mixing_distance_general", "read_adjacency", "read_structure_triplets", "rw2_structure",
    "sample_weights", "scale_structure", "to_logratio", "weights_kld", "weights_kld_gradient",
    "weights_kld_hessian", "weights_pc_prior",
]
