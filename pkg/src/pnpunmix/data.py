"""Core data model, synthetic scenes, noise injection and file I/O.

Pixel flattening is row-major everywhere: pixel ``n = row * width + col``.
Files store little-endian float32; everything in memory is float64.
"""
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from ._errors import FormatError, ParameterError, SizeMismatchError

_LIBRARY_FILE = "endmembers_224.csv"


@dataclass(frozen=True, eq=False)
class HyperCube:
    """A ``bands x height x width`` hyperspectral image, band-sequential."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ParameterError(f"cube data must be 3-D (B, H, W), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ParameterError("cube contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def bands(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def n_pixels(self):
        return self.height * self.width

    def matrix(self):
        """Band-major ``B x N`` view of the cube."""
        return self.data.reshape(self.bands, self.n_pixels)

    @classmethod
    def from_matrix(cls, X, height, width):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != height * width:
            raise ParameterError(
                f"matrix of shape {X.shape} cannot be viewed as {height}x{width}")
        return cls(X.reshape(X.shape[0], height, width))


@dataclass(frozen=True, eq=False)
class EndmemberMatrix:
    """``B x R`` matrix whose columns are endmember spectra."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] < 1:
            raise ParameterError(f"endmember data must be B x R, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ParameterError("endmember matrix contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def bands(self):
        return self.data.shape[0]

    @property
    def count(self):
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class AbundanceField:
    """``R x N`` abundance matrix together with its ``height x width`` geometry."""

    data: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 3:
            data = data.reshape(data.shape[0], -1)
        if data.ndim != 2 or data.shape[1] != self.height * self.width:
            raise ParameterError(
                f"abundance data {data.shape} does not match {self.height}x{self.width}")
        if not np.all(np.isfinite(data)):
            raise ParameterError("abundance field contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def count(self):
        return self.data.shape[0]

    def image(self):
        """``R x H x W`` view."""
        return self.data.reshape(self.count, self.height, self.width)

    def is_feasible(self, tol=1e-6):
        return bool(np.all(self.data >= -tol)
                    and np.allclose(self.data.sum(axis=0), 1.0, rtol=0, atol=tol))


@dataclass(frozen=True)
class SynthSpec:
    height: int = 100
    width: int = 100
    endmember_count: int = 4
    band_count: int = 224
    smoothness: float = 6.0
    sharpness: float = 3.0
    seed: int = 0

    def validate(self):
        if self.height < 8 or self.width < 8:
            raise ParameterError("synthetic scenes need height, width >= 8")
        if not 1 <= self.endmember_count <= self.band_count:
            raise ParameterError("need 1 <= endmember_count <= band_count")
        if self.smoothness <= 0 or self.sharpness <= 0:
            raise ParameterError("smoothness and sharpness must be positive")
        return self


def library_endmembers(n_bands=224):
    """The bundled four-spectrum reflectance library, resampled to ``n_bands``."""
    ref = resources.files("pnpunmix").joinpath("assets", _LIBRARY_FILE)
    with ref.open("r") as fh:
        lib = np.loadtxt(fh, delimiter=",", comments="#", ndmin=2)
    if n_bands == lib.shape[0]:
        return lib
    src = np.linspace(0.0, 1.0, lib.shape[0])
    dst = np.linspace(0.0, 1.0, n_bands)
    return np.column_stack([np.interp(dst, src, col) for col in lib.T])


def smooth_spectra(count, n_bands, rng):
    """Random smooth positive spectra built from a few Gaussian bumps."""
    t = np.linspace(0.0, 1.0, n_bands)
    out = np.empty((n_bands, count))
    for r in range(count):
        n_bumps = rng.integers(2, 6)
        centers = rng.uniform(-0.1, 1.1, n_bumps)
        widths = rng.uniform(0.05, 0.3, n_bumps)
        heights = rng.uniform(0.05, 0.5, n_bumps)
        s = 0.02 + (heights * np.exp(-0.5 * ((t[:, None] - centers) / widths) ** 2)).sum(axis=1)
        out[:, r] = s
    return out


def _channel_softmax(z):
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def generate_synthetic(spec=None):
    """Build a noiseless scene ``X = M A``.

    Abundances are the per-pixel softmax of ``R`` standardized Gaussian
    random fields (white noise blurred with width ``spec.smoothness``),
    scaled by ``spec.sharpness``. Endmembers come from the bundled library
    when ``R <= 4``; otherwise smooth random spectra are drawn.

    Returns
    -------
    cube : HyperCube
    endmembers : EndmemberMatrix
    abundances : AbundanceField
    """
    spec = (spec or SynthSpec()).validate()
    rng = np.random.default_rng(spec.seed)
    R, H, W = spec.endmember_count, spec.height, spec.width

    fields = rng.standard_normal((R, H, W))
    for r in range(R):
        f = gaussian_filter(fields[r], spec.smoothness, mode="wrap")
        fields[r] = (f - f.mean()) / (f.std() + 1e-12)
    A = _channel_softmax(spec.sharpness * fields).reshape(R, H * W)

    if R <= 4:
        M = library_endmembers(spec.band_count)[:, :R].copy()
    else:
        M = smooth_spectra(R, spec.band_count, rng)

    cube = HyperCube.from_matrix(M @ A, H, W)
    return cube, EndmemberMatrix(M), AbundanceField(A, H, W)


def noise_sigma(signal, snr_db):
    return float(np.sqrt(np.mean(np.square(signal)) / 10.0 ** (snr_db / 10.0)))


def add_noise(cube, snr_db, seed=0):
    """Add white Gaussian noise at the requested SNR (dB).

    ``snr_db = inf`` returns the cube unchanged.
    """
    if np.isposinf(snr_db):
        return cube
    if not np.isfinite(snr_db):
        raise ParameterError(f"snr_db must be finite or +inf, got {snr_db}")
    rng = np.random.default_rng(seed)
    sigma = noise_sigma(cube.data, snr_db)
    return HyperCube(cube.data + sigma * rng.standard_normal(cube.data.shape))


# -- file formats -----------------------------------------------------------

_HEADER_FIELDS = ("height", "width", "bands", "dtype", "order")


def save_cube(cube, path):
    header = {"height": cube.height, "width": cube.width, "bands": cube.bands,
              "dtype": "f32le", "order": "bsq"}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(cube.data.astype("<f4").tobytes())


def load_cube(path):
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from None
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header must be a JSON object")
    for key in _HEADER_FIELDS:
        if key not in header:
            raise FormatError(f"{path}: header field '{key}' missing")
    if header["dtype"] != "f32le":
        raise FormatError(f"{path}: header field 'dtype' must be 'f32le'")
    if header["order"] != "bsq":
        raise FormatError(f"{path}: header field 'order' must be 'bsq'")
    try:
        b, h, w = (int(header[k]) for k in ("bands", "height", "width"))
    except (TypeError, ValueError):
        raise FormatError(f"{path}: dimensions must be integers") from None
    if min(b, h, w) < 1:
        raise FormatError(f"{path}: dimensions must be positive")
    expected = 4 * b * h * w
    if len(payload) != expected:
        raise SizeMismatchError(
            f"{path}: header declares {b}x{h}x{w} ({expected} bytes), "
            f"payload has {len(payload)} bytes")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return HyperCube(data.reshape(b, h, w))


def save_endmembers(M, path, names=None):
    M = M.data if isinstance(M, EndmemberMatrix) else np.asarray(M, dtype=np.float64)
    header = "# " + ",".join(names) if names else None
    with open(path, "w") as fh:
        if header:
            fh.write(header + "\n")
        for row in M:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_endmembers(path):
    try:
        M = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return EndmemberMatrix(M)


def save_raw(array, path):
    np.ascontiguousarray(array, dtype="<f4").tofile(path)


def load_raw(path, shape):
    data = np.fromfile(path, dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise SizeMismatchError(
            f"{path}: expected {int(np.prod(shape))} floats, found {data.size}")
    return data.astype(np.float64).reshape(shape)


def to_uint8(values):
    """Map [0, 1] to [0, 255] with clamping and round-half-up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def write_pgm(image, path):
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported")
    pixels = raw[len(raw) - w * h:]
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


def export_abundance_maps(field, directory, prefix="abundance"):
    """Write one grayscale PGM and one float32 ``.raw`` per endmember.

    Returns the list of written paths.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not os.access(directory, os.W_OK):
        raise PermissionError(f"directory {directory} is not writable")
    written = []
    for r, channel in enumerate(field.image()):
        pgm = directory / f"{prefix}_{r}.pgm"
        raw = directory / f"{prefix}_{r}.raw"
        write_pgm(to_uint8(channel), pgm)
        save_raw(channel, raw)
        written += [pgm, raw]
    return written
