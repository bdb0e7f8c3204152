"""Endmember extraction (VCA) and fully constrained least squares (FCLS)."""
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._errors import DegenerateInputError, ParameterError
from .data import AbundanceField, EndmemberMatrix
from .validation import check_endmembers, check_hsi


@dataclass(frozen=True)
class InitResult:
    endmembers: EndmemberMatrix
    abundances: AbundanceField


def _estimate_snr(X, mean, projected):
    B, N = X.shape
    R = projected.shape[0]
    p_y = np.sum(X ** 2) / N
    p_x = np.sum(projected ** 2) / N + np.sum(mean ** 2)
    denom = p_y - p_x
    if denom <= 1e-12 * p_y:
        return np.inf
    num = p_x - R / B * p_y
    if num <= 0:
        return -np.inf
    return 10.0 * np.log10(num / denom)


def vca(X, n_endmembers, seed=0, snr_input=None):
    """Vertex component analysis.

    Parameters
    ----------
    X : ndarray of shape (n_bands, n_pixels)
    n_endmembers : int
    seed : int
        Seeds the random projection directions.
    snr_input : float, optional
        Known SNR in dB; estimated from the data when omitted.

    Returns
    -------
    endmembers : ndarray of shape (n_bands, n_endmembers)
        The purest pixels of ``X``, taken from their projection onto the
        estimated signal subspace (exact columns of ``X`` when noiseless).
    indices : ndarray of int
    """
    X = np.asarray(X, dtype=np.float64)
    B, N = X.shape
    R = int(n_endmembers)
    if not 1 <= R <= min(B, N):
        raise ParameterError(f"need 1 <= n_endmembers <= min(B, N) = {min(B, N)}")
    if not np.all(np.isfinite(X)):
        raise ParameterError("X contains non-finite values")
    rank = np.linalg.matrix_rank(X)
    if rank < R:
        raise DegenerateInputError(f"data has rank {rank} < {R} endmembers")
    rng = np.random.default_rng(seed)

    if R == 1:
        u = np.linalg.svd(X @ X.T / N)[0][:, 0]
        proj = u @ X
        if proj.sum() < 0:
            proj = -proj
        idx = int(np.argmax(proj))
        return X[:, [idx]].copy(), np.array([idx])

    mean = X.mean(axis=1, keepdims=True)
    centered = X - mean
    Ud = np.linalg.svd(centered @ centered.T / N)[0][:, :R]
    x_p = Ud.T @ centered
    snr = _estimate_snr(X, mean, x_p) if snr_input is None else snr_input
    snr_th = 15.0 + 10.0 * np.log10(R)

    if snr < snr_th:
        # projection onto the (R-1)-dim affine subspace, lifted by a constant
        Ud = Ud[:, : R - 1]
        x = x_p[: R - 1]
        projected = Ud @ x + mean
        c = np.sqrt(np.max(np.sum(x ** 2, axis=0)))
        y = np.vstack([x, np.full((1, N), c)])
    else:
        Ud = np.linalg.svd(X @ X.T / N)[0][:, :R]
        x = Ud.T @ X
        projected = Ud @ x
        u = x.mean(axis=1, keepdims=True)
        scale = u.T @ x
        scale[np.abs(scale) < 1e-300] = 1e-300
        y = x / scale

    indices = np.zeros(R, dtype=int)
    E = np.zeros((R, R))
    E[-1, 0] = 1.0
    for i in range(R):
        w = rng.standard_normal((R, 1))
        f = w - E @ np.linalg.pinv(E) @ w
        f /= np.linalg.norm(f)
        v = (f.T @ y).ravel()
        idx = int(np.argmax(np.abs(v)))
        E[:, i] = y[:, idx]
        indices[i] = idx
    return projected[:, indices], indices


def _kkt_solve(G, b, support):
    """Equality-constrained LS on ``support`` for a batch of right-hand sides."""
    k = len(support)
    S = list(support)
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = G[np.ix_(S, S)]
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.vstack([b[S], np.ones((1, b.shape[1]))])
    sol = np.linalg.pinv(K) @ rhs
    return sol[:k], sol[k]


def _fcls_enumerate(G, b, tol):
    R, N = b.shape
    out = np.zeros((R, N))
    done = np.zeros(N, dtype=bool)
    for k in range(1, R + 1):
        for support in combinations(range(R), k):
            todo = np.flatnonzero(~done)
            if todo.size == 0:
                return out, done
            z, mu = _kkt_solve(G, b[:, todo], support)
            a = np.zeros((R, todo.size))
            a[list(support)] = z
            grad = G @ a - b[:, todo]
            ok = np.all(z >= -tol, axis=0) & np.all(grad + mu >= -tol, axis=0)
            hit = todo[ok]
            out[:, hit] = np.clip(a[:, ok], 0.0, None)
            done[hit] = True
    return out, done


def _fcls_active_set(G, b, tol, max_iter=500):
    """Primal active-set method for one pixel (``b`` of shape (R,))."""
    R = b.shape[0]
    # feasible start: best single endmember
    j = int(np.argmin(0.5 * np.diag(G) - b))
    a = np.zeros(R)
    a[j] = 1.0
    passive = [j]
    for _ in range(max_iter):
        z, mu = _kkt_solve(G, b[:, None], passive)
        z, mu = z[:, 0], float(mu[0])
        if np.all(z > tol):
            a = np.zeros(R)
            a[passive] = z
            grad = G @ a - b
            viol = -(grad + mu)
            viol[passive] = -np.inf
            i = int(np.argmax(viol))
            if viol[i] <= tol:
                return a
            passive = sorted(passive + [i])
            continue
        cand = a[passive]
        mask = z <= tol
        t = np.min(cand[mask] / (cand[mask] - z[mask]))
        step = np.zeros(R)
        step[passive] = z - cand
        a = a + t * step
        passive = [p for p in passive if a[p] > tol]
        a[[p for p in range(R) if p not in passive]] = 0.0
        if not passive:
            passive = [int(np.argmax(a))]
    return np.clip(a, 0.0, None)


def simplex_qp(G, b, method="auto"):
    """Minimize ``1/2 a^T G a - b^T a`` over the probability simplex, per column of ``b``.

    ``method="enumerate"`` checks the KKT conditions of every candidate
    support in a vectorized sweep (used for up to 10 components);
    ``"active_set"`` runs a per-column primal active-set loop.
    """
    R = G.shape[0]
    tol = 1e-12 * max(np.abs(G).max(), np.abs(b).max(), 1.0)
    if method == "auto":
        method = "enumerate" if R <= 10 else "active_set"
    if method == "enumerate":
        A, done = _fcls_enumerate(G, b, tol)
        for n in np.flatnonzero(~done):
            A[:, n] = _fcls_active_set(G, b[:, n], tol)
    elif method == "active_set":
        A = np.column_stack([_fcls_active_set(G, b[:, n], tol) for n in range(b.shape[1])])
    else:
        raise ParameterError(f"unknown FCLS method {method!r}")
    A /= A.sum(axis=0, keepdims=True)
    return A


def fcls(X, M, method="auto", ridge=1e-12):
    """Fully constrained least squares abundances.

    Solves ``min ||x - M a||^2`` subject to ``a >= 0`` and ``sum(a) = 1`` for
    every column of ``X``. A relative ridge of ``ridge`` keeps the Gram
    matrix invertible when ``M`` is (nearly) rank deficient.

    Returns
    -------
    A : ndarray of shape (n_endmembers, n_pixels)
    """
    X = np.asarray(X, dtype=np.float64)
    M = M.data if isinstance(M, EndmemberMatrix) else np.asarray(M, dtype=np.float64)
    if M.shape[0] != X.shape[0]:
        raise ParameterError(f"M has {M.shape[0]} bands, X has {X.shape[0]}")
    R = M.shape[1]
    G = M.T @ M
    G = G + ridge * max(np.trace(G) / R, 1e-300) * np.eye(R)
    return simplex_qp(G, M.T @ X, method=method)


def initialize(X, n_endmembers, image_shape, seed=0):
    """VCA endmembers followed by FCLS abundances on the input as given."""
    M, _ = vca(X, n_endmembers, seed=seed)
    A = fcls(X, M)
    h, w = image_shape
    return InitResult(EndmemberMatrix(M), AbundanceField(A, h, w))


class VCA(BaseEstimator):
    """Vertex component analysis endmember extractor.

    Parameters
    ----------
    n_endmembers : int, default=4
    snr_input : float, optional
        Known SNR in dB. Estimated from the data when omitted.
    random_state : int, default=0

    Attributes
    ----------
    endmembers_ : ndarray of shape (n_bands, n_endmembers)
    components_ : ndarray of shape (n_endmembers, n_bands)
    indices_ : ndarray of shape (n_endmembers,)
    """

    def __init__(self, n_endmembers=4, snr_input=None, random_state=0):
        self.n_endmembers = n_endmembers
        self.snr_input = snr_input
        self.random_state = random_state

    def fit(self, X, y=None, image_shape=None):
        Xmat, _ = check_hsi(X, image_shape or (np.shape(X)[0], 1))
        self.endmembers_, self.indices_ = vca(
            Xmat, self.n_endmembers, seed=self.random_state, snr_input=self.snr_input)
        self.components_ = self.endmembers_.T
        return self


class FCLS(TransformerMixin, BaseEstimator):
    """Fully constrained least squares with fixed endmembers.

    ``transform`` maps ``(n_pixels, n_bands)`` spectra to
    ``(n_pixels, n_endmembers)`` abundances on the probability simplex.
    """

    def __init__(self, endmembers=None, method="auto"):
        self.endmembers = endmembers
        self.method = method

    def fit(self, X=None, y=None):
        if self.endmembers is None:
            raise ParameterError("FCLS needs endmembers")
        self.endmembers_ = check_endmembers(self.endmembers)
        return self

    def transform(self, X):
        check_is_fitted(self, "endmembers_")
        Xmat, _ = check_hsi(X, (np.shape(X)[0], 1)) if np.ndim(X) == 2 else check_hsi(X)
        check_endmembers(self.endmembers_, Xmat.shape[0])
        return fcls(Xmat, self.endmembers_, method=self.method).T

    def inverse_transform(self, A):
        check_is_fitted(self, "endmembers_")
        return np.asarray(A) @ self.endmembers_.T
