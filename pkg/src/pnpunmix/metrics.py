"""Unmixing quality metrics with endmember alignment."""
import csv
from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._errors import ParameterError

FIELDS = ("armse", "mrmse", "sad_mean", "msad", "psnr")


def _matrix(a, name):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ParameterError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def _pair(a, b, name):
    a, b = _matrix(a, name), _matrix(b, name)
    if a.shape != b.shape:
        raise ParameterError(f"{name}: shapes differ {a.shape} vs {b.shape}")
    return a, b


def spectral_angles(Y, Yhat):
    """Angle in degrees between matching columns of ``Y`` and ``Yhat``."""
    Y, Yhat = _pair(Y, Yhat, "spectral_angles")
    return _angles(Y, Yhat)


def _unit(Y):
    norms = np.linalg.norm(Y, axis=0)
    if np.any(norms == 0):
        raise ParameterError("spectral angle of a zero spectrum is undefined")
    return Y / norms


def _angles(Y, Yhat):
    # 2 atan2(|u - v|, |u + v|) equals arccos(u.v) but stays accurate near 0 and 180 degrees
    u, v = _unit(Y), _unit(Yhat)
    return np.degrees(2.0 * np.arctan2(np.linalg.norm(u - v, axis=0),
                                       np.linalg.norm(u + v, axis=0)))


def sad(Y, Yhat):
    """Mean spectral angle (degrees) over the columns of two spectra matrices."""
    return float(np.mean(spectral_angles(Y, Yhat)))


def msad(M, Mhat):
    """Mean spectral angle (degrees) between matched endmembers."""
    return sad(M, Mhat)


def armse(A, Ahat):
    """RMS abundance error over all ``R x N`` entries."""
    A, Ahat = _pair(A, Ahat, "armse")
    return float(np.sqrt(np.mean((A - Ahat) ** 2)))


def mrmse(M, Mhat):
    """RMS endmember error over all ``B x R`` entries."""
    M, Mhat = _pair(M, Mhat, "mrmse")
    return float(np.sqrt(np.mean((M - Mhat) ** 2)))


def psnr(X, Xhat):
    """``10 log10(max(Xhat)^2 / MSE)`` in dB, with the MSE over all entries.

    Returns ``inf`` when the reconstruction is exact.
    """
    X, Xhat = _pair(X, Xhat, "psnr")
    peak = np.max(Xhat)
    if not np.any(Xhat):
        raise ParameterError("psnr needs a nonzero reconstruction")
    err = np.mean((X - Xhat) ** 2)
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / err))


def sad_cost(est_M, true_M):
    """``cost[i, j]`` = angle (degrees) between true endmember ``i`` and estimate ``j``."""
    est_M, true_M = _matrix(est_M, "est_M"), _matrix(true_M, "true_M")
    if est_M.shape != true_M.shape:
        raise ParameterError(f"endmember shapes differ {est_M.shape} vs {true_M.shape}")
    t, e = _unit(true_M), _unit(est_M)
    diff = np.linalg.norm(t[:, :, None] - e[:, None, :], axis=0)
    summ = np.linalg.norm(t[:, :, None] + e[:, None, :], axis=0)
    return np.degrees(2.0 * np.arctan2(diff, summ))


def align(est_M, true_M, method="hungarian"):
    """Permutation ``p`` such that ``est_M[:, p]`` best matches ``true_M``.

    Minimizes the total spectral angle. ``method="exhaustive"`` searches all
    ``R!`` orderings (first optimum in lexicographic order) and is limited to
    ``R <= 8``.
    """
    cost = sad_cost(est_M, true_M)
    R = cost.shape[0]
    if method == "hungarian":
        rows, cols = linear_sum_assignment(cost)
        return cols[np.argsort(rows)]
    if method == "exhaustive":
        if R > 8:
            raise ParameterError("exhaustive alignment is limited to R <= 8")
        idx = np.arange(R)
        best = min(permutations(range(R)), key=lambda p: cost[idx, list(p)].sum())
        return np.array(best)
    raise ParameterError(f"unknown alignment method {method!r}")


@dataclass(frozen=True)
class EvalReport:
    armse: float
    mrmse: float
    sad_mean: float
    msad: float
    psnr: float
    permutation: tuple
    label: str = ""

    def row(self):
        perm = " ".join(str(int(p)) for p in self.permutation)
        return {"label": self.label, **{f: repr(float(getattr(self, f))) for f in FIELDS},
                "permutation": perm}


def evaluate(est_M, est_A, true_M, true_A, X=None, label=""):
    """Align the estimate to the truth and compute every metric.

    ``X`` is the reference image for the reconstruction metrics; it defaults
    to ``true_M @ true_A``.
    """
    est_M, true_M = _matrix(est_M, "est_M"), _matrix(true_M, "true_M")
    est_A, true_A = _matrix(est_A, "est_A"), _matrix(true_A, "true_A")
    if est_M.shape[1] != true_M.shape[1]:
        raise ParameterError(f"endmember counts differ: {est_M.shape[1]} vs {true_M.shape[1]}")
    perm = align(est_M, true_M)
    M, A = est_M[:, perm], est_A[perm]
    X = true_M @ true_A if X is None else _matrix(X, "X")
    Xhat = M @ A
    return EvalReport(armse=armse(true_A, A), mrmse=mrmse(true_M, M), sad_mean=sad(X, Xhat),
                      msad=msad(true_M, M), psnr=psnr(X, Xhat),
                      permutation=tuple(int(p) for p in perm), label=label)


def write_reports(reports, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["label", *FIELDS, "permutation"])
        writer.writeheader()
        for r in reports:
            writer.writerow(r.row())


def read_reports(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            perm = tuple(int(p) for p in row["permutation"].split())
            out.append(EvalReport(**{f: float(row[f]) for f in FIELDS},
                                  permutation=perm, label=row.get("label", "")))
    return out


def table(reports, metrics=FIELDS):
    """Grid of ``metric x label`` values, the layout of a per-SNR comparison table.

    Returns the header row followed by one row per metric.
    """
    labels = [r.label for r in reports]
    rows = [["metric", *labels]]
    for m in metrics:
        rows.append([m, *(f"{getattr(r, m):.4f}" for r in reports)])
    return rows
