"""Zero-mean Gaussian-process regression with a squared-exponential ARD kernel.

Hyperparameters are handled as a log-space vector
``theta = [log l_1, ..., log l_n, log sigma_f^2, log sigma_n^2]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.linalg.lapack import dpotri
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .scenario import lhs_unit, make_rng

LOG_2PI = math.log(2.0 * math.pi)

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class FitError(RuntimeError):
    """Cholesky factorization failed even at the largest allowed jitter."""


@dataclass(frozen=True)
class Kernel:
    lengthscales: np.ndarray
    signal_var: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(~np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError("lengthscales must be finite and positive")
        if not (np.isfinite(self.signal_var) and self.signal_var > 0):
            raise ValueError("signal_var must be finite and positive")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_var", float(self.signal_var))

    def __call__(self, A, B) -> np.ndarray:
        return kernel_matrix(self, A, B)


def _scaled_sqdist(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    return cdist(A / lengthscales, B / lengthscales, "sqeuclidean")


def kernel_matrix(k: Kernel, A, B) -> np.ndarray:
    """SE-ARD covariance between the rows of ``A`` (p, n) and ``B`` (q, n)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValueError("kernel inputs must be finite")
    if A.shape[1] != k.lengthscales.size or B.shape[1] != k.lengthscales.size:
        raise ValueError("input dimension does not match the number of lengthscales")
    return k.signal_var * np.exp(-0.5 * _scaled_sqdist(A, B, k.lengthscales))


def robust_cholesky(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K + j*mean(diag K)*I`` with escalating ``j``.

    Returns the factor and the relative jitter ``j`` that succeeded.
    """
    scale = float(np.mean(np.diag(K)))
    if not np.isfinite(scale) or scale <= 0:
        raise FitError("covariance has a non-positive or non-finite diagonal")
    jitter = JITTER_START
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return cholesky(K + jitter * scale * eye, lower=True, check_finite=False), jitter
        except LinAlgError:
            jitter *= 10.0
    raise FitError("Cholesky failed at maximum jitter")


def split_theta(theta, n: int) -> tuple[np.ndarray, float, float]:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n + 2,):
        raise ValueError(f"theta must have length {n + 2}")
    return np.exp(theta[:n]), float(np.exp(theta[n])), float(np.exp(theta[n + 1]))


def _pairwise_sq(X: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences, shape (n, m, m)."""
    diff = X.T[:, :, None] - X.T[:, None, :]
    return diff * diff


def _lml_core(D, y, theta, want_grad):
    n = D.shape[0]
    m = y.size
    ls, sf2, sn2 = split_theta(theta, n)
    inv_l2 = 1.0 / (ls * ls)
    Kf = sf2 * np.exp(-0.5 * np.tensordot(inv_l2, D, axes=1))
    K = Kf.copy()
    K[np.diag_indices(m)] += sn2
    try:
        L, jitter = robust_cholesky(K)
    except FitError as exc:
        raise FitError(f"{exc} for theta={np.round(theta, 6).tolist()}") from None
    # robust_cholesky scales jitter by mean(diag K) = sf2 + sn2
    alpha = cho_solve((L, True), y, check_finite=False)
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * m * LOG_2PI
    if not want_grad:
        return lml, None, L, alpha, jitter
    Kinv, info = dpotri(L, lower=1)
    if info != 0:
        raise FitError(f"dpotri failed (info={info}) for theta={np.round(theta, 6).tolist()}")
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    W = np.outer(alpha, alpha) - Kinv
    WK = W * Kf
    trW = np.trace(W)
    grad = np.empty(n + 2)
    grad[:n] = 0.5 * np.tensordot(D, WK, axes=([1, 2], [0, 1])) * inv_l2
    grad[n] = 0.5 * (WK.sum() + jitter * sf2 * trW)
    grad[n + 1] = 0.5 * sn2 * (1.0 + jitter) * trW
    return lml, grad, L, alpha, jitter


def log_marginal_likelihood(X, y, theta, return_grad: bool = False):
    """Log evidence of ``y`` under the zero-mean GP with log-hyperparameters ``theta``.

    With ``return_grad`` the gradient with respect to ``theta`` is returned as
    well, as ``(value, grad)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    lml, grad, *_ = _lml_core(_pairwise_sq(X), y, np.asarray(theta, float), return_grad)
    return (lml, grad) if return_grad else lml


@dataclass(frozen=True)
class HyperOptSettings:
    n_restarts: int = 8
    log_lengthscale_bounds: tuple[float, float] = (math.log(0.01), math.log(10.0))
    log_signal_var_bounds: tuple[float, float] = (math.log(1e-4), math.log(1e4))
    log_noise_var_bounds: tuple[float, float] = (math.log(1e-8), math.log(1.0))
    maxiter: int = 200
    standardize: bool = True
    seed: int = 0

    def bounds(self, n: int) -> list[tuple[float, float]]:
        return [self.log_lengthscale_bounds] * n + [self.log_signal_var_bounds,
                                                    self.log_noise_var_bounds]

    def default_theta(self, n: int) -> np.ndarray:
        return np.array([math.log(0.3)] * n + [0.0, math.log(1e-3)])


@dataclass(frozen=True, eq=False)
class GPModel:
    X: np.ndarray
    y: np.ndarray
    kernel: Kernel
    noise_var: float
    chol: np.ndarray
    alpha: np.ndarray
    y_mean: float = 0.0
    y_scale: float = 1.0
    jitter: float = 0.0
    lml: float = float("nan")

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([np.log(self.kernel.lengthscales),
                               [math.log(self.kernel.signal_var), math.log(self.noise_var)]])

    @property
    def y_std(self) -> np.ndarray:
        """Training targets on the scale the GP was fit on."""
        return (self.y - self.y_mean) / self.y_scale

    @classmethod
    def from_theta(cls, X, y, theta, standardize: bool = False) -> "GPModel":
        """Condition a GP on ``(X, y)`` at fixed hyperparameters, no optimization."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError("X and y have different numbers of rows")
        mean, scale = _standardizer(y) if standardize else (0.0, 1.0)
        ys = (y - mean) / scale
        lml, _, L, alpha, jitter = _lml_core(_pairwise_sq(X), ys, np.asarray(theta, float), False)
        ls, sf2, sn2 = split_theta(theta, X.shape[1])
        return cls(X, y, Kernel(ls, sf2), sn2, L, alpha, mean, scale, jitter, float(lml))

    def predict(self, Xs, standardized: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance of the latent function at the rows of ``Xs``."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        Ks = kernel_matrix(self.kernel, self.X, Xs)
        mean = Ks.T @ self.alpha
        V = solve_triangular(self.chol, Ks, lower=True, check_finite=False)
        var = np.maximum(self.kernel.signal_var - (V * V).sum(0), 0.0)
        if standardized:
            return mean, var
        return mean * self.y_scale + self.y_mean, var * self.y_scale**2

    def posterior_cov(self, Xs, standardized: bool = False) -> tuple[np.ndarray, np.ndarray]:
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        Ks = kernel_matrix(self.kernel, self.X, Xs)
        V = solve_triangular(self.chol, Ks, lower=True, check_finite=False)
        mean = Ks.T @ self.alpha
        cov = kernel_matrix(self.kernel, Xs, Xs) - V.T @ V
        cov = 0.5 * (cov + cov.T)
        if standardized:
            return mean, cov
        return mean * self.y_scale + self.y_mean, cov * self.y_scale**2


def _standardizer(y: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(y))
    scale = float(np.std(y))
    if not np.isfinite(scale) or scale < 1e-12:
        scale = 1.0
    return mean, scale


def fit(X, y, opt: HyperOptSettings | None = None, init_theta=None) -> GPModel:
    """Fit hyperparameters by multi-start maximization of the log evidence.

    One local ascent starts from ``init_theta`` (previous optimum, or a fixed
    default), the remaining ``n_restarts - 1`` from a Latin hypercube over the
    log-space bound box. The best optimum is kept.
    """
    opt = opt or HyperOptSettings()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    m, n = X.shape
    if m < 2:
        raise ValueError("need at least two training points")
    if y.size != m:
        raise ValueError("X and y have different numbers of rows")
    if np.unique(X, axis=0).shape[0] != m:
        raise ValueError("training inputs must be distinct")
    mean, scale = _standardizer(y) if opt.standardize else (0.0, 1.0)
    ys = (y - mean) / scale
    D = _pairwise_sq(X)
    bounds = np.array(opt.bounds(n))

    def negative(theta):
        try:
            lml, grad, *_ = _lml_core(D, ys, theta, True)
        except FitError:
            return 1e25, np.zeros_like(theta)
        return -lml, -grad

    first = opt.default_theta(n) if init_theta is None else np.asarray(init_theta, float)
    first = np.clip(first, bounds[:, 0], bounds[:, 1])
    starts = [first]
    if opt.n_restarts > 1:
        u = lhs_unit(opt.n_restarts - 1, n + 2, make_rng(opt.seed))
        starts.extend(bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0]))

    best_theta, best_val = None, np.inf
    for x0 in starts:
        res = minimize(negative, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": opt.maxiter})
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = res.x, res.fun
    if best_theta is None or best_val >= 1e25:
        raise FitError(f"no hyperparameter start could be factorized (first start {first.tolist()})")
    model = GPModel.from_theta(X, ys, best_theta, standardize=False)
    return GPModel(X, y, model.kernel, model.noise_var, model.chol, model.alpha,
                   mean, scale, model.jitter, model.lml)


def sample_posterior(model: GPModel, Xs, rng_seed) -> np.ndarray:
    """One joint draw of the latent function at the rows of ``Xs``."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    if Xs.shape[0] < 1:
        raise ValueError("need at least one query point")
    mean, cov = model.posterior_cov(Xs, standardized=True)
    # posterior covariance is often numerically rank-deficient
    cov[np.diag_indices_from(cov)] = np.maximum(np.diag(cov), model.kernel.signal_var * 1e-12)
    L, _ = robust_cholesky(cov)
    z = make_rng(rng_seed).standard_normal(Xs.shape[0])
    f = mean + L @ z
    return f * model.y_scale + model.y_mean


def predict(model: GPModel, Xs) -> tuple[np.ndarray, np.ndarray]:
    return model.predict(Xs)
