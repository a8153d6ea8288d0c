"""
Gaussian-process surrogate: Matérn-5/2 ARD kernel, Cholesky posterior,
log-marginal-likelihood hyperparameter search
"""

import time
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.linalg import cho_solve, cholesky, solve_triangular, LinAlgError
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from app.core.exceptions import FittingError, ValidationError

logger = structlog.get_logger(__name__)

LENGTHSCALE_BOUNDS = (1e-2, 10.0)
SIGNAL_VARIANCE_BOUNDS = (1e-3, 1e3)
NOISE_VARIANCE_BOUNDS = (1e-6, 1.0)
JITTER_START = 1e-6
JITTER_MAX = 1e-2
SQRT5 = np.sqrt(5.0)


@dataclass(frozen=True)
class GpHyperparameters:
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float
    constant_mean: float = 0.0

    def validate(self, dim: Optional[int] = None) -> None:
        ls = np.asarray(self.lengthscales, dtype=float)
        if ls.ndim != 1 or np.any(ls <= 0) or self.signal_variance <= 0:
            raise ValidationError("lengthscales and signal variance must be positive")
        if self.noise_variance < 0:
            raise ValidationError("noise variance must be non-negative")
        if dim is not None and ls.shape[0] != dim:
            raise ValidationError(
                "lengthscale count does not match input dimension",
                details={"lengthscales": int(ls.shape[0]), "dim": dim},
            )


@dataclass(frozen=True)
class PosteriorPrediction:
    mean: float
    variance: float


@dataclass(frozen=True)
class GpModel:
    """A fitted, immutable GP posterior in standardized target units"""
    hyperparameters: GpHyperparameters
    train_inputs: np.ndarray
    train_targets: np.ndarray
    factorization: np.ndarray
    alpha: np.ndarray
    jitter: float
    log_marginal_likelihood: float

    @property
    def dim(self) -> int:
        return int(self.train_inputs.shape[1])

    def posterior(self, inputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized posterior mean and latent variance at the rows of `inputs`"""
        x = np.atleast_2d(np.asarray(inputs, dtype=float))
        if x.shape[1] != self.dim:
            raise ValidationError("input dimension mismatch", details={"expected": self.dim, "got": int(x.shape[1])})
        h = self.hyperparameters
        k_star = matern52(x, self.train_inputs, h.lengthscales, h.signal_variance)
        mean = h.constant_mean + k_star @ self.alpha
        v = solve_triangular(self.factorization, k_star.T, lower=True, check_finite=False)
        variance = h.signal_variance - np.sum(v * v, axis=0)
        return mean, np.maximum(variance, 0.0)


def matern52(
    a: np.ndarray,
    b: np.ndarray,
    lengthscales: np.ndarray,
    signal_variance: float,
) -> np.ndarray:
    """Matérn-5/2 ARD covariance matrix between the rows of a and b"""
    r = cdist(a / lengthscales, b / lengthscales)
    s = SQRT5 * r
    return signal_variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


def kernel(x: Sequence[float], x_prime: Sequence[float], hyperparameters: GpHyperparameters) -> float:
    """Scalar kernel value k(x, x')"""
    x = np.asarray(x, dtype=float)
    x_prime = np.asarray(x_prime, dtype=float)
    hyperparameters.validate(dim=x.shape[0])
    if x_prime.shape != x.shape:
        raise ValidationError("kernel inputs must share a dimension")
    return float(
        matern52(x[None, :], x_prime[None, :], hyperparameters.lengthscales, hyperparameters.signal_variance)[0, 0]
    )


def standardize(values: Sequence[float]) -> Tuple[np.ndarray, float, float]:
    """Zero-mean, unit-variance targets; degenerate spread uses unit scale"""
    y = np.asarray(values, dtype=float)
    center = float(np.mean(y))
    scale = float(np.std(y))
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    return (y - center) / scale, center, scale


def _factorize(
    inputs: np.ndarray,
    hyperparameters: GpHyperparameters,
    jitter_start: float = JITTER_START,
    jitter_max: float = JITTER_MAX,
) -> Tuple[np.ndarray, float]:
    """Cholesky of K + (noise + jitter) I with jitter escalation"""
    h = hyperparameters
    gram = matern52(inputs, inputs, h.lengthscales, h.signal_variance)
    n = gram.shape[0]
    jitter = jitter_start
    while jitter <= jitter_max * (1.0 + 1e-9):
        try:
            factor = cholesky(
                gram + (h.noise_variance + jitter) * np.eye(n), lower=True, check_finite=False
            )
            return factor, jitter
        except LinAlgError:
            jitter *= 10.0
    condition = float(np.linalg.cond(gram + h.noise_variance * np.eye(n)))
    raise FittingError(
        f"Cholesky failed up to jitter {jitter_max:g}",
        condition_number=condition,
    )


def _gls_mean(factor: np.ndarray, targets: np.ndarray) -> float:
    """Generalized-least-squares constant mean"""
    ones = np.ones_like(targets)
    k_inv_ones = cho_solve((factor, True), ones, check_finite=False)
    k_inv_y = cho_solve((factor, True), targets, check_finite=False)
    return float(ones @ k_inv_y / (ones @ k_inv_ones))


def log_marginal_likelihood(
    hyperparameters: GpHyperparameters,
    inputs: np.ndarray,
    targets: np.ndarray,
    jitter_start: float = JITTER_START,
    jitter_max: float = JITTER_MAX,
) -> float:
    """-½ (y−m)ᵀ α − Σ log diag(L) − (n/2) log 2π"""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float)
    if inputs.shape[0] < 2:
        raise ValidationError("log marginal likelihood needs at least two observations")
    hyperparameters.validate(dim=inputs.shape[1])
    factor, _ = _factorize(inputs, hyperparameters, jitter_start, jitter_max)
    return _lml_from_factor(factor, targets - hyperparameters.constant_mean)


def _lml_from_factor(factor: np.ndarray, residual: np.ndarray) -> float:
    alpha = cho_solve((factor, True), residual, check_finite=False)
    n = residual.shape[0]
    return float(
        -0.5 * residual @ alpha
        - np.sum(np.log(np.diag(factor)))
        - 0.5 * n * np.log(2.0 * np.pi)
    )


def _unpack(theta: np.ndarray, dim: int) -> GpHyperparameters:
    return GpHyperparameters(
        lengthscales=np.exp(theta[:dim]),
        signal_variance=float(np.exp(theta[dim])),
        noise_variance=float(np.exp(theta[dim + 1])),
    )


def _log_bounds(dim: int) -> List[Tuple[float, float]]:
    return (
        [tuple(np.log(LENGTHSCALE_BOUNDS))] * dim
        + [tuple(np.log(SIGNAL_VARIANCE_BOUNDS)), tuple(np.log(NOISE_VARIANCE_BOUNDS))]
    )


class GaussianProcessService:
    """Fits one GP per objective column"""

    def __init__(
        self,
        n_starts: int = 5,
        max_evaluations: int = 400,
        jitter_start: float = JITTER_START,
        jitter_max: float = JITTER_MAX,
    ):
        if n_starts < 1:
            raise ValidationError("at least one optimizer start is required")
        self.n_starts = n_starts
        self.max_evaluations = max_evaluations
        self.jitter_start = jitter_start
        self.jitter_max = jitter_max

    def fit(
        self,
        inputs: Sequence[Sequence[float]],
        targets: Sequence[float],
        seed: int = 0,
        hyperparameters: Optional[GpHyperparameters] = None,
    ) -> GpModel:
        """Fit on unit-cube inputs and standardized targets

        With `hyperparameters` given the search is skipped and only the constant
        mean is left as supplied.
        """
        x = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(targets, dtype=float)
        if x.shape[0] < 2:
            raise ValidationError("GP fitting needs at least two observations")
        if x.shape[0] != y.shape[0]:
            raise ValidationError("inputs and targets differ in length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValidationError("GP training data must be finite")

        start = time.perf_counter()
        if hyperparameters is None:
            hyperparameters = self._search(x, y, seed)
        else:
            hyperparameters.validate(dim=x.shape[1])

        factor, jitter = _factorize(x, hyperparameters, self.jitter_start, self.jitter_max)
        residual = y - hyperparameters.constant_mean
        alpha = cho_solve((factor, True), residual, check_finite=False)
        lml = _lml_from_factor(factor, residual)

        logger.debug(
            "GP fitted",
            n=int(x.shape[0]),
            dim=int(x.shape[1]),
            lml=lml,
            jitter=jitter,
            noise_variance=hyperparameters.noise_variance,
            seconds=time.perf_counter() - start,
        )
        return GpModel(
            hyperparameters=hyperparameters,
            train_inputs=x,
            train_targets=y,
            factorization=factor,
            alpha=alpha,
            jitter=jitter,
            log_marginal_likelihood=lml,
        )

    def _search(self, x: np.ndarray, y: np.ndarray, seed: int) -> GpHyperparameters:
        dim = x.shape[1]
        bounds = _log_bounds(dim)
        lower = np.array([b[0] for b in bounds])
        upper = np.array([b[1] for b in bounds])

        def objective(theta: np.ndarray) -> float:
            h = _unpack(np.clip(theta, lower, upper), dim)
            try:
                factor, _ = _factorize(x, h, self.jitter_start, self.jitter_max)
            except FittingError:
                return 1e10
            mean = _gls_mean(factor, y)
            value = -_lml_from_factor(factor, y - mean)
            return value if np.isfinite(value) else 1e10

        rng = np.random.default_rng(seed)
        first = np.concatenate([np.full(dim, np.log(0.5)), [0.0, np.log(1e-3)]])
        starts = [first] + [rng.uniform(lower, upper) for _ in range(self.n_starts - 1)]

        best_theta, best_value = None, np.inf
        for theta0 in starts:
            result = minimize(
                objective,
                theta0,
                method="Powell",
                bounds=bounds,
                options={"maxiter": 20, "maxfev": self.max_evaluations, "xtol": 1e-3, "ftol": 1e-6},
            )
            # strict improvement keeps the earliest start on ties
            if result.fun < best_value:
                best_theta, best_value = np.clip(result.x, lower, upper), float(result.fun)

        if best_theta is None or not np.isfinite(best_value) or best_value >= 1e10:
            reference_gram = matern52(x, x, np.full(dim, 0.5), 1.0)
            raise FittingError(
                "no hyperparameter setting produced a valid factorization",
                condition_number=float(np.linalg.cond(reference_gram)),
            )

        h = _unpack(best_theta, dim)
        factor, _ = _factorize(x, h, self.jitter_start, self.jitter_max)
        return replace(h, constant_mean=_gls_mean(factor, y))


def fit(
    observations: Sequence[Tuple[Sequence[float], float]],
    seed: int = 0,
    n_starts: int = 5,
) -> GpModel:
    """Fit a GP to (input, standardized target) pairs"""
    if len(observations) < 2:
        raise ValidationError("GP fitting needs at least two observations")
    inputs = [obs[0] for obs in observations]
    targets = [obs[1] for obs in observations]
    return GaussianProcessService(n_starts=n_starts).fit(inputs, targets, seed=seed)


def predict(model: GpModel, x: Sequence[float]) -> PosteriorPrediction:
    """Posterior mean and latent variance at one point"""
    mean, variance = model.posterior(np.asarray(x, dtype=float)[None, :])
    return PosteriorPrediction(mean=float(mean[0]), variance=float(variance[0]))
