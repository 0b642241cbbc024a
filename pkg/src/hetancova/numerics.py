"""Linear algebra primitives and Student-t / normal distribution functions.

The t-distribution is evaluated for non-integer degrees of freedom through
the regularized incomplete beta function (see :mod:`hetancova._kernels`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from . import _kernels
from .exceptions import InvalidInputError

__all__ = [
    "DEFAULT_TOL",
    "Tolerance",
    "hat_diagonals",
    "matrix_rank",
    "norm_cdf",
    "norm_quantile",
    "orth_complement_projector",
    "pseudo_inverse",
    "range_basis",
    "t_cdf",
    "t_pdf",
    "t_quantile",
    "t_sf",
    "t_two_sided_p",
]

_EPS = np.finfo(float).eps
_STD_NORMAL = NormalDist()


@dataclass(frozen=True)
class Tolerance:
    """Numerical tolerances.

    ``rank_tol`` is the singular-value cutoff relative to the largest
    singular value. ``None`` means ``max(rows, cols) * machine epsilon``.
    ``prob_tol`` bounds the error of quantile inversion on the probability
    scale.
    """

    rank_tol: float | None = None
    prob_tol: float = 1e-10

    def __post_init__(self):
        if self.rank_tol is not None and not self.rank_tol > 0:
            raise InvalidInputError("rank_tol must be strictly positive")
        if not self.prob_tol > 0:
            raise InvalidInputError("prob_tol must be strictly positive")

    def cutoff(self, shape: tuple[int, ...], sigma_max: float) -> float:
        rel = self.rank_tol if self.rank_tol is not None else max(shape) * _EPS
        return rel * sigma_max


DEFAULT_TOL = Tolerance()


def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise InvalidInputError(f"expected a matrix, got an array with {A.ndim} dims")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix contains non-finite entries")
    return A


def _svd(A: np.ndarray):
    if A.size == 0:
        m, n = A.shape
        return np.zeros((m, 0)), np.zeros(0), np.zeros((0, n))
    return np.linalg.svd(A, full_matrices=False)


def pseudo_inverse(A, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Moore-Penrose inverse computed from the thin SVD.

    Singular values at or below ``tol.cutoff`` are treated as zero.
    """
    A = _as_matrix(A)
    U, s, Vt = _svd(A)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(A.T.shape)
    keep = s > tol.cutoff(A.shape, s[0])
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def matrix_rank(A, tol: Tolerance = DEFAULT_TOL) -> int:
    A = _as_matrix(A)
    s = np.linalg.svd(A, compute_uv=False) if A.size else np.zeros(0)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol.cutoff(A.shape, s[0])))


def range_basis(X, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis of the column space of X, from the thin SVD."""
    X = _as_matrix(X)
    U, s, _ = _svd(X)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((X.shape[0], 0))
    return U[:, s > tol.cutoff(X.shape, s[0])]


def orth_complement_projector(X, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Projector onto the orthogonal complement of the column space of X.

    Built as ``I - U U'`` from an orthonormal basis U of the range, which is
    the same matrix as ``I - X (X'X)^- X'`` for any generalized inverse.
    """
    X = _as_matrix(X)
    U = range_basis(X, tol)
    Q = np.eye(X.shape[0]) - U @ U.T
    return (Q + Q.T) / 2.0


def hat_diagonals(Xt, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Leverages h_ii, the diagonal of the projector onto range(Xt)."""
    Xt = _as_matrix(Xt)
    U = range_basis(Xt, tol)
    return np.clip(np.einsum("ij,ij->i", U, U), 0.0, 1.0)


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------


def _check_df(df) -> np.ndarray:
    df = np.asarray(df, dtype=float)
    if np.any(~(df > 0)):
        raise InvalidInputError("degrees of freedom must be positive")
    return df


def _scalar_or_array(out: np.ndarray):
    return float(out) if out.ndim == 0 else out


def t_two_sided_p(t, df):
    """P(|T| >= |t|) for T ~ t_df; ``df`` may be fractional or ``inf``."""
    df = _check_df(df)
    t = np.abs(np.asarray(t, dtype=float))
    t, df = np.broadcast_arrays(t, df)
    out = np.empty(t.shape)
    normal = np.isinf(df)
    if normal.any():
        out[normal] = [math.erfc(v / math.sqrt(2.0)) for v in t[normal]]
    fin = ~normal
    if fin.any():
        tt, dd = t[fin], df[fin]
        t2 = tt * tt
        with np.errstate(invalid="ignore"):
            x = np.where(np.isinf(t2), 0.0, dd / (dd + t2))
            y = np.where(np.isinf(t2), 1.0, t2 / (dd + t2))
        out[fin] = _kernels.betainc(dd / 2.0, 0.5, x, y)
    return _scalar_or_array(np.clip(out, 0.0, 1.0))


def t_sf(x, df):
    """Upper tail P(T > x)."""
    x = np.asarray(x, dtype=float)
    half = 0.5 * np.asarray(t_two_sided_p(x, df))
    return _scalar_or_array(np.where(x >= 0, half, 1.0 - half))


def t_cdf(x, df):
    """P(T <= x) for the central t distribution with ``df`` degrees of freedom."""
    return t_sf(-np.asarray(x, dtype=float), df)


def t_pdf(x, df):
    df = _check_df(df)
    x = np.asarray(x, dtype=float)
    if np.all(np.isinf(df)):
        return _scalar_or_array(np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi))
    lg = np.vectorize(math.lgamma)
    logc = lg((df + 1) / 2) - lg(df / 2) - 0.5 * np.log(df * math.pi)
    return _scalar_or_array(np.exp(logc - (df + 1) / 2 * np.log1p(x * x / df)))


def norm_cdf(x: float) -> float:
    # erfc keeps full relative accuracy in the lower tail
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def norm_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise InvalidInputError("p must lie strictly between 0 and 1")
    return _STD_NORMAL.inv_cdf(p)


def t_quantile(p: float, df: float, tol: Tolerance = DEFAULT_TOL) -> float:
    """Inverse of :func:`t_cdf` by safeguarded Newton steps inside a bracket."""
    if not 0.0 < p < 1.0:
        raise InvalidInputError("p must lie strictly between 0 and 1")
    if not df > 0:
        raise InvalidInputError("degrees of freedom must be positive")
    if math.isinf(df):
        return norm_quantile(p)
    if p == 0.5:
        return 0.0
    # solve in the upper tail and mirror
    q = min(p, 1.0 - p)
    sign = 1.0 if p > 0.5 else -1.0

    def tail(x):
        return float(t_sf(x, df)) - q

    lo, hi = 0.0, max(1.0, -norm_quantile(q))
    while tail(hi) > 0:
        lo, hi = hi, 2.0 * hi
    x = 0.5 * (lo + hi)
    for _ in range(200):
        f = tail(x)
        if abs(f) <= tol.prob_tol * q:
            break
        if f > 0:
            lo = x
        else:
            hi = x
        step = f / float(t_pdf(x, df))
        cand = x + step
        x = cand if lo < cand < hi else 0.5 * (lo + hi)
        if hi - lo <= 4 * _EPS * max(1.0, hi):
            break
    return sign * x
