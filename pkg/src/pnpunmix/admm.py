"""Iterative plug-and-play ADMM for blind unmixing with a RED prior.

Solves

    min_{M, A} 1/2 ||X - M A||_F^2 + lam * 1/2 <A, A - C(A)>
               + indicator(A on the simplex) + indicator(M >= 0)

by splitting ``A = V1`` and ``M = V2`` with scaled duals ``G1``, ``G2``.
One outer iteration runs update_A -> projection -> update_V1 -> G1 ->
update_M -> update_V2 -> G2.
"""
import csv
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._errors import ParameterError, SingularSystemError
from .data import AbundanceField, EndmemberMatrix
from .denoisers import DenoiserSpec, denoise_array
from .initialization import InitResult, fcls, initialize, simplex_qp
from .validation import check_hsi

logger = logging.getLogger(__name__)

PROJECTIONS = ("constrained", "simplex", "softmax", "none")


@dataclass(frozen=True)
class AdmmConfig:
    alpha: float = 0.1
    beta: float = 0.1
    lam: float = 0.05
    eta1: float = 1.0
    eta2: float = 1.0
    max_outer: int = 200
    inner_v1: int = 1
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    denoiser: DenoiserSpec = field(default_factory=DenoiserSpec)
    projection: str = "constrained"
    update_endmembers: bool = True

    def validate(self):
        for name in ("alpha", "beta", "lam", "eta1", "eta2", "tol_primal", "tol_dual"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ParameterError(f"{name} must be finite and nonnegative, got {v}")
        if self.max_outer < 1 or self.inner_v1 < 1:
            raise ParameterError("max_outer and inner_v1 must be >= 1")
        if self.projection not in PROJECTIONS:
            raise ParameterError(f"projection must be one of {PROJECTIONS}")
        return self

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        if isinstance(d.get("denoiser"), dict):
            d["denoiser"] = DenoiserSpec.from_dict(d["denoiser"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown solver fields {sorted(unknown)}")
        return cls(**d).validate()

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass
class AdmmState:
    M: np.ndarray
    A: np.ndarray
    V1: np.ndarray
    G1: np.ndarray
    V2: np.ndarray
    G2: np.ndarray
    objective: list = field(default_factory=list)
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_iter(self):
        return len(self.objective)


def _spd_solve(lhs, rhs, what):
    try:
        return linalg.solve(lhs, rhs, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        raise SingularSystemError(f"{what}: system matrix is singular") from None


def update_A(X, M, V1, G1, alpha):
    """Closed-form minimizer of ``1/2||X - MA||^2 + alpha/2 ||A - V1 + G1||^2``."""
    R = M.shape[1]
    lhs = M.T @ M + alpha * np.eye(R)
    return _spd_solve(lhs, M.T @ X + alpha * (V1 - G1), "update_A")


def constrained_update_A(X, M, V1, G1, alpha):
    """The A-subproblem with the simplex constraint kept: a per-pixel QP."""
    R = M.shape[1]
    return simplex_qp(M.T @ M + alpha * np.eye(R), M.T @ X + alpha * (V1 - G1))


def update_V1(A, G1, V1_prev, lam, alpha, denoiser, inner_iters=1, shape=None):
    """Fixed-point sweeps ``V1 <- (lam C(V1) + alpha (A + G1)) / (lam + alpha)``.

    ``shape`` is the image ``(height, width)``; the denoiser sees ``V1`` as
    an ``(R, H, W)`` field.
    """
    if lam + alpha <= 0:
        raise ParameterError("update_V1 needs lam + alpha > 0")
    target = alpha * (A + G1)
    V1 = V1_prev
    R = A.shape[0]
    for _ in range(inner_iters):
        if lam == 0 or (denoiser.kind == "identity" and alpha > 0):
            # C(V) = V cancels the prior, leaving the exact fixed point A + G1
            V1 = target / alpha
            break
        img = V1.reshape((R,) + tuple(shape)) if shape is not None else V1
        C = denoise_array(img, denoiser).reshape(V1.shape)
        V1 = (lam * C + target) / (lam + alpha)
    return V1


def update_M(X, A, V2, G2, beta):
    """Closed-form ``M = (X A^T + beta (V2 - G2)) (A A^T + beta I)^-1``."""
    R = A.shape[0]
    lhs = A @ A.T + beta * np.eye(R)
    rhs = X @ A.T + beta * (V2 - G2)
    return _spd_solve(lhs, rhs.T, "update_M").T


def update_V2(M, G2):
    return np.maximum(M + G2, 0.0)


def update_duals(A, V1, G1, M, V2, G2, eta1, eta2):
    return G1 + eta1 * (A - V1), G2 + eta2 * (M - V2)


def project_simplex(Z):
    """Euclidean projection of every column onto the probability simplex."""
    R, N = Z.shape
    U = -np.sort(-Z, axis=0)
    css = np.cumsum(U, axis=0) - 1.0
    ind = np.arange(1, R + 1)[:, None]
    cond = U - css / ind > 0
    rho = R - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[rho, np.arange(N)] / (rho + 1)
    return np.maximum(Z - theta, 0.0)


def softmax_columns(Z):
    Z = Z - Z.max(axis=0, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=0, keepdims=True)


def project_abundances(Z, how):
    if how == "simplex":
        return project_simplex(Z)
    if how == "softmax":
        return softmax_columns(Z)
    return Z


def red_penalty(V, denoiser, shape):
    R = V.shape[0]
    C = denoise_array(V.reshape((R,) + tuple(shape)), denoiser).reshape(V.shape)
    return 0.5 * float(np.sum(V * (V - C)))


def objective(X, M, A, V1, lam, denoiser, shape):
    val = 0.5 * float(np.sum((X - M @ A) ** 2))
    if lam > 0:
        val += lam * red_penalty(V1, denoiser, shape)
    return val


def iterate(X, state, config, shape):
    """One outer iteration; returns the updated state (inputs untouched)."""
    cfg = config
    if cfg.projection == "constrained":
        A = constrained_update_A(X, state.M, state.V1, state.G1, cfg.alpha)
    else:
        A = project_abundances(update_A(X, state.M, state.V1, state.G1, cfg.alpha),
                               cfg.projection)
    V1 = update_V1(A, state.G1, state.V1, cfg.lam, cfg.alpha, cfg.denoiser,
                   cfg.inner_v1, shape)
    G1 = state.G1 + cfg.eta1 * (A - V1)
    if cfg.update_endmembers:
        M = update_M(X, A, state.V2, state.G2, cfg.beta)
        V2 = update_V2(M, state.G2)
        G2 = state.G2 + cfg.eta2 * (M - V2)
    else:
        M, V2, G2 = state.M, state.V2, state.G2
    return replace(state, M=M, A=A, V1=V1, G1=G1, V2=V2, G2=G2)


def initial_state(init):
    M0 = np.array(init.endmembers.data)
    A0 = np.array(init.abundances.data)
    return AdmmState(M=M0, A=A0, V1=A0.copy(), G1=np.zeros_like(A0),
                     V2=M0.copy(), G2=np.zeros_like(M0))


def solve(X, config, init, shape=None, callback=None):
    """Run PnP-ADMM from an initialization.

    Parameters
    ----------
    X : ndarray of shape (n_bands, n_pixels)
    config : AdmmConfig
    init : InitResult
    shape : (height, width), optional
        Defaults to the geometry stored in ``init.abundances``.
    callback : callable, optional
        Called as ``callback(iteration, state)`` after every iteration.

    Returns
    -------
    M, A : ndarray
    state : AdmmState
    """
    config.validate()
    X = np.asarray(X, dtype=np.float64)
    B, N = X.shape
    if shape is None:
        shape = (init.abundances.height, init.abundances.width)
    if init.endmembers.bands != B or init.abundances.data.shape[1] != N:
        raise ParameterError("initialization shapes do not match X")
    if init.endmembers.count != init.abundances.count:
        raise ParameterError("initial endmember and abundance counts differ")
    R = init.endmembers.count
    scale_A, scale_M = np.sqrt(R * N), np.sqrt(B * R)

    state = initial_state(init)
    for it in range(config.max_outer):
        prev_V1, prev_V2 = state.V1, state.V2
        state = iterate(X, state, config, shape)
        r_primal = max(np.linalg.norm(state.A - state.V1) / scale_A,
                       np.linalg.norm(state.M - state.V2) / scale_M)
        r_dual = max(np.linalg.norm(state.V1 - prev_V1) / scale_A,
                     np.linalg.norm(state.V2 - prev_V2) / scale_M)
        state.objective.append(
            objective(X, state.M, state.A, state.V1, config.lam, config.denoiser, shape))
        state.primal_residuals.append(float(r_primal))
        state.dual_residuals.append(float(r_dual))
        if callback is not None:
            callback(it, state)
        if r_primal < config.tol_primal and r_dual < config.tol_dual:
            state.converged = True
            logger.debug("converged after %d iterations", it + 1)
            break
    return state.M, state.A, state


def write_diagnostics(state, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective", "primal_residual", "dual_residual"])
        for i, row in enumerate(zip(state.objective, state.primal_residuals,
                                    state.dual_residuals), start=1):
            writer.writerow([i, *(repr(v) for v in row)])


class PnPADMMUnmixer(TransformerMixin, BaseEstimator):
    """Blind unmixing with plug-and-play ADMM and a RED abundance prior.

    Inputs follow the scikit-learn layout ``(n_pixels, n_bands)`` (pixels in
    row-major order, ``image_shape`` required) or ``(height, width, n_bands)``.

    Attributes
    ----------
    endmembers_ : ndarray of shape (n_bands, n_endmembers)
    abundances_ : ndarray of shape (n_endmembers, n_pixels)
    init_ : InitResult
    state_ : AdmmState
    """

    def __init__(self, n_endmembers=4, image_shape=None, alpha=0.1, beta=0.1, lam=0.05,
                 eta1=1.0, eta2=1.0, max_outer=200, inner_v1=1, tol_primal=1e-6,
                 tol_dual=1e-6, denoiser=None, projection="constrained", random_state=0):
        self.n_endmembers = n_endmembers
        self.image_shape = image_shape
        self.alpha = alpha
        self.beta = beta
        self.lam = lam
        self.eta1 = eta1
        self.eta2 = eta2
        self.max_outer = max_outer
        self.inner_v1 = inner_v1
        self.tol_primal = tol_primal
        self.tol_dual = tol_dual
        self.denoiser = denoiser
        self.projection = projection
        self.random_state = random_state

    def _config(self, **overrides):
        den = self.denoiser
        if den is None:
            den = DenoiserSpec()
        elif isinstance(den, dict):
            den = DenoiserSpec.from_dict(den)
        cfg = AdmmConfig(alpha=self.alpha, beta=self.beta, lam=self.lam, eta1=self.eta1,
                         eta2=self.eta2, max_outer=self.max_outer, inner_v1=self.inner_v1,
                         tol_primal=self.tol_primal, tol_dual=self.tol_dual, denoiser=den,
                         projection=self.projection)
        return replace(cfg, **overrides).validate()

    def fit(self, X, y=None, init=None):
        Xmat, shape = check_hsi(X, self.image_shape)
        if init is None:
            init = initialize(Xmat, self.n_endmembers, shape, seed=self.random_state)
        M, A, state = solve(Xmat, self._config(), init, shape)
        self.init_ = init
        self.state_ = state
        self.endmembers_ = M
        self.abundances_ = A
        self.image_shape_ = shape
        self.n_iter_ = state.n_iter
        return self

    def fit_transform(self, X, y=None, init=None):
        return self.fit(X, init=init).abundances_.T

    def transform(self, X):
        """Abundances of new data with the endmembers frozen at ``endmembers_``."""
        check_is_fitted(self, "endmembers_")
        Xmat, shape = check_hsi(X, self.image_shape or self.image_shape_)
        M = self.endmembers_
        A0 = fcls(Xmat, M)
        init = InitResult(EndmemberMatrix(M), AbundanceField(A0, *shape))
        _, A, _ = solve(Xmat, self._config(update_endmembers=False), init, shape)
        return A.T

    def inverse_transform(self, A):
        check_is_fitted(self, "endmembers_")
        return np.asarray(A) @ self.endmembers_.T
