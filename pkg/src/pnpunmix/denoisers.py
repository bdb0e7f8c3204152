"""Classical denoisers applied channel-wise to abundance fields.

Every filter uses symmetric boundary extension (``d c b a | a b c d``).
"""
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, median_filter, uniform_filter

from ._errors import ParameterError
from .data import AbundanceField

KINDS = ("identity", "gaussian", "median", "nlm", "linear_scale")


@dataclass(frozen=True)
class DenoiserSpec:
    """Which denoiser to run and its parameters.

    ``sigma`` is the Gaussian width in pixels, ``radius`` the median window
    radius, ``patch_radius``/``search_radius``/``h`` drive non-local means
    and ``c`` is the factor of the ``linear_scale`` kind (``C(v) = c v``),
    which exists for closed-form tests.
    """

    kind: str = "identity"
    sigma: float = 1.0
    radius: int = 1
    patch_radius: int = 1
    search_radius: int = 5
    h: float = 0.1
    c: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown denoiser kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "gaussian" and self.sigma <= 0:
            raise ParameterError("gaussian sigma must be positive")
        if self.kind == "median" and self.radius < 1:
            raise ParameterError("median radius must be >= 1")
        if self.kind == "nlm" and (self.patch_radius < 0 or self.search_radius < 1 or self.h <= 0):
            raise ParameterError("nlm needs patch_radius >= 0, search_radius >= 1, h > 0")

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown denoiser fields {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def nlm_channel(img, patch_radius=1, search_radius=5, h=0.1):
    """Non-local means on one 2-D image.

    Patch distance is the mean squared difference over the
    ``(2p+1)^2`` patch; weights are ``exp(-d / h^2)``.
    """
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape
    s, p = search_radius, patch_radius
    pad = s + p
    padded = np.pad(img, pad, mode="symmetric")
    num = np.zeros_like(img)
    den = np.zeros_like(img)
    ref = padded[s:s + H + 2 * p, s:s + W + 2 * p]
    size = 2 * p + 1
    for dy in range(-s, s + 1):
        for dx in range(-s, s + 1):
            moved = padded[s + dy:s + dy + H + 2 * p, s + dx:s + dx + W + 2 * p]
            dist = uniform_filter((ref - moved) ** 2, size=size, mode="reflect")[p:p + H, p:p + W]
            w = np.exp(-dist / (h * h))
            num += w * moved[p:p + H, p:p + W]
            den += w
    return num / den


def _denoise_channel(img, spec):
    if spec.kind == "gaussian":
        return gaussian_filter(img, spec.sigma, mode="reflect")
    if spec.kind == "median":
        return median_filter(img, size=2 * spec.radius + 1, mode="reflect")
    if spec.kind == "nlm":
        return nlm_channel(img, spec.patch_radius, spec.search_radius, spec.h)
    raise AssertionError(spec.kind)


def denoise_array(field, spec):
    """Denoise an ``(R, H, W)`` array channel by channel."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 3:
        raise ParameterError(f"expected an (R, H, W) array, got shape {field.shape}")
    if spec.kind == "identity":
        return field.copy()
    if spec.kind == "linear_scale":
        return spec.c * field
    return np.stack([_denoise_channel(ch, spec) for ch in field])


def denoise(field, spec):
    """Apply ``spec`` to an :class:`AbundanceField` or an ``(R, H, W)`` array."""
    if isinstance(field, AbundanceField):
        out = denoise_array(field.image(), spec)
        return AbundanceField(out.reshape(field.count, -1), field.height, field.width)
    return denoise_array(field, spec)


def residual(field, spec):
    """``field - denoise(field)``, the gradient of the RED penalty."""
    if isinstance(field, AbundanceField):
        out = field.data - denoise(field, spec).data
        return AbundanceField(out, field.height, field.width)
    field = np.asarray(field, dtype=np.float64)
    return field - denoise_array(field, spec)
