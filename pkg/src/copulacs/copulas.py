"""Copula models tying together the marginals of multi-modal coefficients.

Two elliptical families (Gaussian, Student-t) carry a full correlation
matrix and work in any dimension. Three Archimedean families (Clayton,
Frank, Gumbel) are driven by a scalar generator parameter; their cdf is
available in any dimension, the density in the bivariate case.

All densities also come in log form so the conditional correction ratio
(joint density over history density) stays finite deep in the tails.
"""

from __future__ import annotations

import json
import math

import numpy as np
from scipy.integrate import quad
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gammaln, ndtr, ndtri
from scipy.stats import kendalltau, spearmanr
from scipy.stats import t as student_t

from .errors import (
    CapabilityError,
    ConvergenceError,
    DimensionError,
    InsufficientDataError,
    ParameterError,
)

U_EPS = 1e-10


def clamp_unit(u, eps: float = U_EPS):
    """Clamp copula arguments into [eps, 1-eps] before transforms."""
    return np.clip(np.asarray(u, dtype=float), eps, 1.0 - eps)


def _as_u_matrix(u, dim=None):
    arr = np.asarray(u, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionError("u must be a vector or a (n, dim) matrix")
    if dim is not None and arr.shape[1] != dim:
        raise DimensionError(f"expected dimension {dim}, got {arr.shape[1]}")
    return arr


def _validate_correlation(matrix) -> np.ndarray:
    r = np.asarray(matrix, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise DimensionError("correlation matrix must be square")
    if r.shape[0] < 1:
        raise DimensionError("correlation matrix must be at least 1x1")
    if not np.allclose(np.diag(r), 1.0, atol=1e-12):
        raise ParameterError("correlation matrix needs a unit diagonal")
    if not np.allclose(r, r.T, atol=1e-12):
        raise ParameterError("correlation matrix must be symmetric")
    if np.any(np.linalg.eigvalsh(r) <= 0.0):
        raise ParameterError("correlation matrix must be positive definite")
    return 0.5 * (r + r.T)


class GaussianCopula:
    """Elliptical copula of a multivariate normal with correlation R."""

    family = "gaussian"

    def __init__(self, correlation):
        self.correlation = _validate_correlation(correlation)
        self.dim = self.correlation.shape[0]
        self._cho = cho_factor(self.correlation, lower=True)
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._cho[0]))))

    def log_density(self, u):
        z = ndtri(clamp_unit(_as_u_matrix(u, self.dim)))
        quad_form = np.einsum("ij,ij->i", z, cho_solve(self._cho, z.T).T)
        return -0.5 * (self._logdet + quad_form - np.einsum("ij,ij->i", z, z))

    def density(self, u):
        return np.exp(self.log_density(u))

    def cdf(self, u):
        z = ndtri(clamp_unit(_as_u_matrix(u, self.dim)))
        return np.array([_gauss_cdf(zi, self.correlation) for zi in z])

    def sample(self, n_samples: int, rng) -> np.ndarray:
        rng = np.random.default_rng(rng)
        chol = np.linalg.cholesky(self.correlation)
        z = rng.standard_normal((n_samples, self.dim)) @ chol.T
        return ndtr(z)

    def marginal(self, indices) -> "GaussianCopula":
        idx = np.asarray(indices, dtype=int)
        return GaussianCopula(self.correlation[np.ix_(idx, idx)])

    def _params(self):
        return {"correlation": self.correlation.tolist()}


class StudentTCopula:
    """Elliptical copula of a multivariate t with correlation R and dof nu."""

    family = "student-t"

    def __init__(self, correlation, dof: float):
        if not (dof > 0.0 and np.isfinite(dof)):
            raise ParameterError("degrees of freedom must be positive and finite")
        self.correlation = _validate_correlation(correlation)
        self.dof = float(dof)
        self.dim = self.correlation.shape[0]
        self._cho = cho_factor(self.correlation, lower=True)
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._cho[0]))))

    def log_density(self, u):
        nu, ell = self.dof, self.dim
        z = student_t.ppf(clamp_unit(_as_u_matrix(u, self.dim)), nu)
        quad_form = np.einsum("ij,ij->i", z, cho_solve(self._cho, z.T).T)
        log_joint = (
            gammaln((nu + ell) / 2.0)
            - gammaln(nu / 2.0)
            - 0.5 * ell * math.log(nu * math.pi)
            - 0.5 * self._logdet
            - 0.5 * (nu + ell) * np.log1p(quad_form / nu)
        )
        log_margs = np.sum(student_t.logpdf(z, nu), axis=1)
        return log_joint - log_margs

    def density(self, u):
        return np.exp(self.log_density(u))

    def cdf(self, u):
        z = student_t.ppf(clamp_unit(_as_u_matrix(u, self.dim)), self.dof)
        return np.array([_student_cdf(zi, self.correlation, self.dof) for zi in z])

    def sample(self, n_samples: int, rng) -> np.ndarray:
        rng = np.random.default_rng(rng)
        chol = np.linalg.cholesky(self.correlation)
        z = rng.standard_normal((n_samples, self.dim)) @ chol.T
        w = rng.chisquare(self.dof, size=n_samples)
        x = z * np.sqrt(self.dof / w)[:, None]
        return student_t.cdf(x, self.dof)

    def marginal(self, indices) -> "StudentTCopula":
        idx = np.asarray(indices, dtype=int)
        return StudentTCopula(self.correlation[np.ix_(idx, idx)], self.dof)

    def _params(self):
        return {"correlation": self.correlation.tolist(), "dof": self.dof}


def _conditioned_pair(correlation):
    """Conditional 2x2 geometry of (X2, X3) given X1 for a 3x3 correlation."""
    r12, r13, r23 = correlation[0, 1], correlation[0, 2], correlation[1, 2]
    s11 = 1.0 - r12 * r12
    s22 = 1.0 - r13 * r13
    rho_c = (r23 - r12 * r13) / math.sqrt(s11 * s22)
    return r12, r13, math.sqrt(s11), math.sqrt(s22), rho_c


def _gauss_cdf(z, correlation) -> float:
    """Deterministic multivariate normal cdf (dim <= 3) by nested quadrature.

    Conditioning on the first coordinate turns the orthant probability into a
    1-D integral over its probability scale, which keeps the integrand bounded
    on a compact interval.
    """
    ell = len(z)
    if ell == 1:
        return float(ndtr(z[0]))
    if ell == 2:
        return _bvn_cdf(z[0], z[1], correlation[0, 1])
    if ell == 3:
        r12, r13, sd2, sd3, rho_c = _conditioned_pair(correlation)

        def integrand(p):
            x = ndtri(p)
            return _bvn_cdf((z[1] - r12 * x) / sd2, (z[2] - r13 * x) / sd3, rho_c)

        top = float(ndtr(z[0]))
        if top < 1e-16:
            return 0.0
        val, _ = quad(integrand, 0.0, top, epsabs=1e-11, epsrel=1e-11, limit=200)
        return float(val)
    raise CapabilityError("multivariate normal cdf implemented for dim <= 3")


def _bvn_cdf(h: float, k: float, rho: float) -> float:
    """Bivariate standard normal cdf by conditioning + adaptive quadrature."""
    if abs(rho) >= 1.0 - 1e-14:
        if rho > 0:
            return float(ndtr(min(h, k)))
        return float(max(0.0, ndtr(h) + ndtr(k) - 1.0))
    top = float(ndtr(h))
    if top < 1e-16 or ndtr(k) < 1e-16:
        return 0.0
    denom = math.sqrt(1.0 - rho * rho)

    def integrand(p):
        return ndtr((k - rho * ndtri(p)) / denom)

    val, _ = quad(integrand, 0.0, top, epsabs=1e-13, epsrel=1e-13, limit=200)
    return float(val)


def _student_cdf(z, correlation, nu: float) -> float:
    """Deterministic multivariate t cdf (dim <= 3) by nested quadrature."""
    ell = len(z)
    if ell == 1:
        return float(student_t.cdf(z[0], nu))
    if ell == 2:
        return _bvt_cdf(z[0], z[1], correlation[0, 1], nu)
    if ell == 3:
        r12, r13, sd2, sd3, rho_c = _conditioned_pair(correlation)

        def integrand(p):
            x = student_t.ppf(p, nu)
            scale = math.sqrt((nu + x * x) / (nu + 1.0))
            h = (z[1] - r12 * x) / (scale * sd2)
            k = (z[2] - r13 * x) / (scale * sd3)
            return _bvt_cdf(h, k, rho_c, nu + 1.0)

        top = float(student_t.cdf(z[0], nu))
        if top < 1e-16:
            return 0.0
        val, _ = quad(integrand, 0.0, top, epsabs=1e-10, epsrel=1e-10, limit=200)
        return float(val)
    raise CapabilityError("multivariate t cdf implemented for dim <= 3")


def _bvt_cdf(h: float, k: float, rho: float, nu: float) -> float:
    """Bivariate t cdf via the nu+1 conditional decomposition."""
    if abs(rho) >= 1.0 - 1e-14:
        if rho > 0:
            return float(student_t.cdf(min(h, k), nu))
        return float(max(0.0, student_t.cdf(h, nu) + student_t.cdf(k, nu) - 1.0))
    top = float(student_t.cdf(h, nu))
    if top < 1e-16 or student_t.cdf(k, nu) < 1e-16:
        return 0.0
    denom = math.sqrt(1.0 - rho * rho)

    def integrand(p):
        x = student_t.ppf(p, nu)
        scale = denom * math.sqrt((nu + x * x) / (nu + 1.0))
        return student_t.cdf((k - rho * x) / scale, nu + 1.0)

    val, _ = quad(integrand, 0.0, top, epsabs=1e-12, epsrel=1e-12, limit=200)
    return float(val)


class _ArchimedeanCopula:
    """Shared machinery: cdf from the generator, bivariate-only density."""

    family = "archimedean"
    _xi_exclusive_min: float | None = None
    _xi_inclusive_min: float | None = None

    def __init__(self, xi: float, dim: int = 2):
        xi = float(xi)
        bad = not np.isfinite(xi)
        if self._xi_exclusive_min is not None:
            bad = bad or xi <= self._xi_exclusive_min
        if self._xi_inclusive_min is not None:
            bad = bad or xi < self._xi_inclusive_min
        if bad:
            raise ParameterError(f"{self.family} parameter {xi} outside its domain")
        if dim < 2:
            raise DimensionError("copula dimension must be at least 2")
        self.xi = xi
        self.dim = int(dim)

    # generator and inverse are supplied by subclasses
    def generator(self, u):
        raise NotImplementedError

    def generator_inverse(self, t):
        raise NotImplementedError

    def cdf(self, u):
        u = clamp_unit(_as_u_matrix(u))
        return self.generator_inverse(np.sum(self.generator(u), axis=1))

    def log_density(self, u):
        u = _as_u_matrix(u)
        if u.shape[1] != 2:
            raise CapabilityError(
                f"{self.family} density implemented for 2 modalities, got {u.shape[1]}"
            )
        return self._log_density_bivariate(clamp_unit(u))

    def density(self, u):
        return np.exp(self.log_density(u))

    def _params(self):
        return {"xi": self.xi, "dim": self.dim}


class ClaytonCopula(_ArchimedeanCopula):
    """Clayton copula, lower-tail dependent, xi > 0 (Kendall tau = xi/(xi+2))."""

    family = "clayton"
    _xi_exclusive_min = 0.0

    def generator(self, u):
        return (np.asarray(u, dtype=float) ** (-self.xi) - 1.0) / self.xi

    def generator_inverse(self, t):
        return (1.0 + self.xi * np.asarray(t, dtype=float)) ** (-1.0 / self.xi)

    def cdf(self, u):
        u = clamp_unit(_as_u_matrix(u))
        ell = u.shape[1]
        return np.maximum(np.sum(u ** (-self.xi), axis=1) - ell + 1.0, 0.0) ** (-1.0 / self.xi)

    def _log_density_bivariate(self, u):
        xi = self.xi
        lu = np.log(u)
        core = np.sum(u**-xi, axis=1) - 1.0
        return (
            math.log1p(xi)
            - (1.0 + xi) * np.sum(lu, axis=1)
            - (2.0 + 1.0 / xi) * np.log(core)
        )

    def sample(self, n_samples: int, rng) -> np.ndarray:
        # gamma frailty: u_i = (1 + E_i / W)**(-1/xi), W ~ Gamma(1/xi, 1)
        rng = np.random.default_rng(rng)
        w = rng.gamma(1.0 / self.xi, 1.0, size=n_samples)
        e = rng.exponential(1.0, size=(n_samples, self.dim))
        return (1.0 + e / w[:, None]) ** (-1.0 / self.xi)


class FrankCopula(_ArchimedeanCopula):
    """Frank copula, radially symmetric, xi real and nonzero."""

    family = "frank"

    def __init__(self, xi: float, dim: int = 2):
        if xi == 0.0:
            raise ParameterError("frank parameter must be nonzero (0 is independence)")
        super().__init__(xi, dim)

    def generator(self, u):
        xi = self.xi
        u = np.asarray(u, dtype=float)
        return -np.log(np.expm1(-xi * u) / np.expm1(-xi))

    def generator_inverse(self, t):
        xi = self.xi
        t = np.asarray(t, dtype=float)
        return -np.log1p(np.exp(-t) * np.expm1(-xi)) / xi

    def _log_density_bivariate(self, u):
        # c = xi*(1-e^-xi)*e^(-xi(u+v)) / [(1-e^-xi) - (1-e^-xi*u)(1-e^-xi*v)]^2;
        # with a=e^-xi*u - 1 etc. the bracket is -(d + a*b), squared below.
        xi = self.xi
        a = np.expm1(-xi * u[:, 0])
        b = np.expm1(-xi * u[:, 1])
        d = math.expm1(-xi)
        core = d + a * b
        return (
            math.log(abs(xi))
            + math.log(abs(d))
            - xi * np.sum(u, axis=1)
            - 2.0 * np.log(np.abs(core))
        )

    def sample(self, n_samples: int, rng) -> np.ndarray:
        # conditional-inverse: draw u1, invert the conditional cdf for u2
        if self.dim != 2:
            raise CapabilityError("frank sampling implemented for 2 modalities")
        rng = np.random.default_rng(rng)
        u1 = rng.random(n_samples)
        v = rng.random(n_samples)
        xi = self.xi
        b = 1.0 + v * np.expm1(-xi) / (v + (1.0 - v) * np.exp(-xi * u1))
        u2 = -np.log(b) / xi
        return np.column_stack([u1, np.clip(u2, U_EPS, 1.0 - U_EPS)])


class GumbelCopula(_ArchimedeanCopula):
    """Gumbel copula, upper-tail dependent, xi >= 1 (1 is independence)."""

    family = "gumbel"
    _xi_inclusive_min = 1.0

    def generator(self, u):
        return (-np.log(np.asarray(u, dtype=float))) ** self.xi

    def generator_inverse(self, t):
        return np.exp(-np.asarray(t, dtype=float) ** (1.0 / self.xi))

    def _log_density_bivariate(self, u):
        xi = self.xi
        x = -np.log(u[:, 0])
        y = -np.log(u[:, 1])
        s = x**xi + y**xi
        a = s ** (1.0 / xi)
        return (
            -a
            + (xi - 1.0) * (np.log(x) + np.log(y))
            + (1.0 / xi - 2.0) * np.log(s)
            + np.log(a + xi - 1.0)
            + x
            + y
        )

    def sample(self, n_samples: int, rng) -> np.ndarray:
        # positive-stable frailty (Kanter construction), alpha = 1/xi
        rng = np.random.default_rng(rng)
        if self.xi == 1.0:
            return rng.random((n_samples, self.dim))
        alpha = 1.0 / self.xi
        theta = rng.uniform(0.0, math.pi, size=n_samples)
        w = rng.exponential(1.0, size=n_samples)
        frailty = (
            np.sin(alpha * theta)
            / np.sin(theta) ** (1.0 / alpha)
            * (np.sin((1.0 - alpha) * theta) / w) ** ((1.0 - alpha) / alpha)
        )
        e = rng.exponential(1.0, size=(n_samples, self.dim))
        return np.exp(-((e / frailty[:, None]) ** alpha))


_FAMILIES = {
    "gaussian": GaussianCopula,
    "student-t": StudentTCopula,
    "clayton": ClaytonCopula,
    "frank": FrankCopula,
    "gumbel": GumbelCopula,
}


def conditional_correction(copula, history_u, u_values) -> np.ndarray:
    """Prior correction c(history, u) / c(history) on a grid of u values.

    `history_u` holds the probability-integral transforms of the modalities
    already recovered (in the copula's modality order); `u_values` are the
    candidate transforms of the modality being decoded. With an empty history
    the correction is identically one.
    """
    hist = np.atleast_1d(np.asarray(history_u, dtype=float))
    grid = np.asarray(u_values, dtype=float)
    if hist.size == 0:
        return np.ones_like(grid)
    k = hist.size
    if k + 1 > copula.dim:
        raise DimensionError(
            f"history of {k} modalities exceeds copula dimension {copula.dim}"
        )
    hist = clamp_unit(hist)
    joint_u = np.empty((grid.size, k + 1), dtype=float)
    joint_u[:, :k] = hist
    joint_u[:, k] = clamp_unit(grid)
    if isinstance(copula, (GaussianCopula, StudentTCopula)):
        num_model = copula.marginal(np.arange(k + 1))
        log_num = num_model.log_density(joint_u)
        if k == 1:
            log_den = 0.0
        else:
            log_den = copula.marginal(np.arange(k)).log_density(hist[None, :])[0]
    else:
        if k != 1:
            raise CapabilityError("archimedean correction implemented for 2 modalities")
        log_num = copula.log_density(joint_u)
        log_den = 0.0
    return np.exp(log_num - log_den)


def pseudo_observations(data, marginal_models=None) -> np.ndarray:
    """Map per-modality samples to the unit cube.

    With marginal models, applies each fitted cdf; without, uses the rank
    transform ranks/(n+1).
    """
    x = _as_u_matrix(np.asarray(data, dtype=float))
    n, ell = x.shape
    if marginal_models is not None:
        if len(marginal_models) != ell:
            raise DimensionError("one marginal model per modality is required")
        cols = [m.cdf(x[:, j]) for j, m in enumerate(marginal_models)]
        return clamp_unit(np.column_stack(cols))
    ranks = np.argsort(np.argsort(x, axis=0), axis=0) + 1.0
    return ranks / (n + 1.0)


def spearman_correlation(u) -> np.ndarray:
    """Pairwise Spearman rank correlation matrix."""
    u = _as_u_matrix(u)
    if u.shape[0] < 3:
        raise InsufficientDataError("need at least 3 rows for rank correlation")
    if u.shape[1] == 2:
        rho = float(spearmanr(u[:, 0], u[:, 1]).statistic)
        return np.array([[1.0, rho], [rho, 1.0]])
    rho, _ = spearmanr(u)
    return np.atleast_2d(rho)


def _repair_correlation(r: np.ndarray) -> np.ndarray:
    """Clip eigenvalues at 1e-6 and rescale to a unit diagonal."""
    r = 0.5 * (r + r.T)
    vals, vecs = np.linalg.eigh(r)
    if vals.min() > 1e-6:
        np.fill_diagonal(r, 1.0)
        return r
    vals = np.maximum(vals, 1e-6)
    fixed = (vecs * vals) @ vecs.T
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    np.fill_diagonal(fixed, 1.0)
    return fixed


def _correlation_from_u(u, method: str, use_sin_transform: bool) -> np.ndarray:
    if method == "spearman":
        r = spearman_correlation(u)
        if use_sin_transform:
            off = 2.0 * np.sin(math.pi * r / 6.0)
            np.fill_diagonal(off, 1.0)
            r = off
    elif method == "mle":
        z = ndtri(clamp_unit(u))
        r = np.corrcoef(z, rowvar=False)
        r = np.atleast_2d(r)
    else:
        raise ParameterError(f"unknown correlation method {method!r}")
    return _repair_correlation(r)


def fit_gaussian_copula(u, method: str = "spearman", use_sin_transform: bool = False):
    u = _as_u_matrix(u)
    return GaussianCopula(_correlation_from_u(u, method, use_sin_transform))


def golden_section_maximize(f, lo: float, hi: float, tol: float = 1e-9,
                            max_iterations: int = 200) -> float:
    """Deterministic golden-section search for the maximizer of f on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iterations):
        if b - a < tol:
            return 0.5 * (a + b)
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    raise ConvergenceError(f"golden-section search did not reach tol={tol} "
                           f"in {max_iterations} iterations")


def fit_student_t_copula(u, method: str = "spearman", use_sin_transform: bool = False,
                         dof_bounds: tuple[float, float] = (1.0, 1e6)):
    """Correlation from ranks, dof by profile likelihood on a log grid."""
    u = _as_u_matrix(u)
    r = _correlation_from_u(u, method, use_sin_transform)
    uc = clamp_unit(u)

    def profile(log_nu):
        model = StudentTCopula(r, math.exp(log_nu))
        return float(np.sum(model.log_density(uc)))

    log_nu = golden_section_maximize(
        profile, math.log(dof_bounds[0]), math.log(dof_bounds[1]), tol=1e-6
    )
    return StudentTCopula(r, math.exp(log_nu))


_ARCHIMEDEAN_BOUNDS = {
    "clayton": (1e-3, 100.0),
    "frank": (-35.0, 35.0),
    "gumbel": (1.0 + 1e-9, 30.0),
}


def fit_archimedean_copula(u, family: str):
    u = _as_u_matrix(u, dim=2)
    uc = clamp_unit(u)
    cls = _FAMILIES[family]
    lo, hi = _ARCHIMEDEAN_BOUNDS[family]

    def loglik(xi):
        if family == "frank" and abs(xi) < 1e-8:
            return 0.0  # independence limit
        return float(np.sum(cls(xi).log_density(uc)))

    xi = golden_section_maximize(loglik, lo, hi, tol=1e-8)
    return cls(xi)


def fit_copula(u, family: str, **kwargs):
    """Fit one copula family to pseudo-observations on the unit cube."""
    if family == "gaussian":
        return fit_gaussian_copula(u, **kwargs)
    if family == "student-t":
        return fit_student_t_copula(u, **kwargs)
    if family in _ARCHIMEDEAN_BOUNDS:
        return fit_archimedean_copula(u, family)
    raise ParameterError(f"unknown copula family {family!r}; expected one of {sorted(_FAMILIES)}")


def empirical_kendall_tau(u) -> float:
    """Kendall tau of a bivariate sample (sampler sanity checks)."""
    u = _as_u_matrix(u, dim=2)
    return float(kendalltau(u[:, 0], u[:, 1]).statistic)


def save_copula(model, path) -> None:
    """Write the family tag + parameters as a structured key-value file."""
    payload = {"family": model.family, "dim": model.dim}
    payload.update(model._params())
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_copula(path):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    family = payload.get("family")
    if family == "gaussian":
        return GaussianCopula(np.asarray(payload["correlation"], dtype=float))
    if family == "student-t":
        return StudentTCopula(np.asarray(payload["correlation"], dtype=float), payload["dof"])
    if family in _ARCHIMEDEAN_BOUNDS:
        return _FAMILIES[family](payload["xi"], dim=payload.get("dim", 2))
    raise ParameterError(f"unknown copula family in file: {family!r}")
