"""Input validation helpers shared by the estimators.

Estimators follow the scikit-learn convention of ``(n_pixels, n_bands)``
inputs, while the solvers work on band-major ``(n_bands, n_pixels)``
matrices. These helpers do the conversion and the sanity checks.
"""
import numbers

import numpy as np
from sklearn.utils.validation import check_array

from ._errors import ParameterError


def check_image_shape(image_shape, n_pixels):
    if image_shape is None:
        raise ParameterError(
            "image_shape is required when X is given as (n_pixels, n_bands)")
    h, w = (int(v) for v in image_shape)
    if h < 1 or w < 1:
        raise ParameterError(f"invalid image_shape {image_shape!r}")
    if h * w != n_pixels:
        raise ParameterError(
            f"image_shape {h}x{w} does not match {n_pixels} pixels")
    return h, w


def check_hsi(X, image_shape=None):
    """Validate a hyperspectral input and return it band-major.

    Parameters
    ----------
    X : HyperCube, array of shape (height, width, n_bands) or (n_pixels, n_bands)
        Pixels are flattened row-major (``n = row * width + col``).
    image_shape : tuple of int, optional
        ``(height, width)``; required for 2-D input.

    Returns
    -------
    Xmat : ndarray of shape (n_bands, n_pixels), float64
    shape : tuple (height, width)
    """
    from .data import HyperCube

    if isinstance(X, HyperCube):
        return X.matrix(), (X.height, X.width)
    X = np.asarray(X)
    if X.ndim == 3:
        h, w, b = X.shape
        X = check_array(X.reshape(h * w, b), dtype=np.float64)
        return np.ascontiguousarray(X.T), (h, w)
    X = check_array(X, dtype=np.float64)
    shape = check_image_shape(image_shape, X.shape[0])
    return np.ascontiguousarray(X.T), shape


def check_endmembers(M, n_bands=None):
    M = check_array(M, dtype=np.float64)
    if n_bands is not None and M.shape[0] != n_bands:
        raise ParameterError(
            f"endmember matrix has {M.shape[0]} bands, data has {n_bands}")
    return M


def check_scalar(x, name, min_val=None, include_min=True):
    if not isinstance(x, numbers.Real) or not np.isfinite(x):
        raise ParameterError(f"{name} must be a finite real number, got {x!r}")
    if min_val is not None:
        if (include_min and x < min_val) or (not include_min and x <= min_val):
            op = ">=" if include_min else ">"
            raise ParameterError(f"{name} must be {op} {min_val}, got {x}")
    return x
