"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Three kernels carry nearly all of the runtime in the simulation studies and
the bootstrap:

``betainc``
    Regularized incomplete beta I_x(a, b) by continued fraction, evaluated
    elementwise. The Student-t distribution functions sit on top of it.
``ancova_batch``
    Closed-form heteroscedastic ANCOVA quantities for a stack of R datasets
    that share the group layout but carry their own covariates.
``wild_statistics``
    Studentized statistics of B sign-flipped residual resamples.

The numba versions are used when numba imports and ``HETANCOVA_DISABLE_NUMBA``
is unset (or ``0``). Both paths return the same numbers to rounding; the test
suite checks that, and ``benchmarks/bench_kernels.py`` times them.
"""

from __future__ import annotations

import contextlib
import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

__all__ = [
    "HAVE_NUMBA",
    "ancova_batch",
    "backend",
    "betainc",
    "use_backend",
    "wild_statistics",
]

HAVE_NUMBA = numba is not None
_FPMIN = 1e-300
_EPS = 1e-15
_MAXIT = 20000


def _env_backend() -> str:
    flag = os.environ.get("HETANCOVA_DISABLE_NUMBA", "").strip().lower()
    if not HAVE_NUMBA or flag not in ("", "0", "false", "no"):
        return "numpy"
    return "numba"


_backend = _env_backend()


def backend() -> str:
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return _backend


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily switch the kernel backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    previous = _backend
    _backend = name
    try:
        yield
    finally:
        _backend = previous


def _jit(fn):
    if HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def _jit_fast(fn):
    # reassociation lets the short inner reductions vectorize
    if HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True, fastmath=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# regularized incomplete beta
# ---------------------------------------------------------------------------


@_jit
def _betacf_scalar(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAXIT + 1):
        m2 = 2.0 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h


@_jit
def _betainc_scalar(a, b, x, y):
    # y = 1 - x is passed separately so tails keep full relative precision
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    lx = math.log1p(-y) if y < 0.5 else math.log(x)
    ly = math.log1p(-x) if x < 0.5 else math.log(y)
    lbeta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    front = math.exp(a * lx + b * ly - lbeta)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf_scalar(a, b, x) / a
    return 1.0 - front * _betacf_scalar(b, a, y) / b


@_jit
def _nb_betainc(a, b, x, y):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = _betainc_scalar(a[i], b[i], x[i], y[i])
    return out


_lgamma = np.frompyfunc(math.lgamma, 1, 1)


def _np_betacf(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _MAXIT + 1):
        m2 = 2.0 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _FPMIN, _FPMIN, c)
        d = 1.0 / d
        h = np.where(active, h * d * c, h)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _FPMIN, _FPMIN, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) >= _EPS
        if not active.any():
            break
    return h


def _np_betainc(a, b, x, y):
    out = np.empty_like(x)
    lo = x <= 0.0
    hi = ~lo & (y <= 0.0)
    mid = ~(lo | hi)
    out[lo] = 0.0
    out[hi] = 1.0
    if mid.any():
        a, b, x, y = a[mid], b[mid], x[mid], y[mid]
        with np.errstate(divide="ignore"):
            lx = np.where(y < 0.5, np.log1p(-y), np.log(x))
            ly = np.where(x < 0.5, np.log1p(-x), np.log(y))
        lbeta = (_lgamma(a) + _lgamma(b) - _lgamma(a + b)).astype(float)
        front = np.exp(a * lx + b * ly - lbeta)
        direct = x < (a + 1.0) / (a + b + 2.0)
        res = np.empty_like(x)
        if direct.any():
            res[direct] = front[direct] * _np_betacf(a[direct], b[direct], x[direct]) / a[direct]
        flip = ~direct
        if flip.any():
            res[flip] = 1.0 - front[flip] * _np_betacf(b[flip], a[flip], y[flip]) / b[flip]
        out[mid] = res
    return out


def betainc(a, b, x, y=None):
    """Regularized incomplete beta function I_x(a, b), elementwise.

    ``y`` may carry ``1 - x`` computed without cancellation; it defaults to
    ``1 - x``.
    """
    x = np.asarray(x, dtype=float)
    shape = x.shape
    y = 1.0 - x if y is None else np.asarray(y, dtype=float)
    a, b, x, y = (np.ascontiguousarray(np.broadcast_to(v, shape), dtype=float).ravel()
                  for v in (a, b, x, y))
    if _backend == "numba":
        out = _nb_betainc(a, b, x, y)
    else:
        out = _np_betainc(a, b, x, y)
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# batched ANCOVA fits
# ---------------------------------------------------------------------------

# Column order of the ancova_batch output for the treatment contrast.
BATCH_FIELDS = ("delta", "var_b", "kappa", "s1", "s2", "df1", "df2", "var_c", "df_c")


@_jit
def _nb_qr(A, rel_tol):
    # Gram-Schmidt with one re-orthogonalization pass. Returns Qt (k x n) with
    # orthonormal rows, upper-triangular R, and False if A is rank deficient.
    n, k = A.shape
    Qt = np.ascontiguousarray(A.T).copy()
    R = np.zeros((k, k))
    scale = 0.0
    for j in range(k):
        for i in range(n):
            scale = max(scale, abs(A[i, j]))
    full = True
    for j in range(k):
        for _ in range(2):
            for i in range(j):
                r = 0.0
                for t in range(n):
                    r += Qt[i, t] * Qt[j, t]
                R[i, j] += r
                for t in range(n):
                    Qt[j, t] -= r * Qt[i, t]
        nrm = 0.0
        for t in range(n):
            nrm += Qt[j, t] * Qt[j, t]
        nrm = math.sqrt(nrm)
        R[j, j] = nrm
        if nrm <= rel_tol * scale * math.sqrt(n):
            full = False
        elif nrm > 0.0:
            for t in range(n):
                Qt[j, t] /= nrm
    return Qt, R, full


@_jit
def _nb_residual(Qt, y):
    k, n = Qt.shape
    r = y.copy()
    for i in range(k):
        c = 0.0
        for t in range(n):
            c += Qt[i, t] * y[t]
        for t in range(n):
            r[t] -= c * Qt[i, t]
    return r


@_jit
def _nb_row_of_inverse(Qt, R, c):
    # row c' R^{-1} Q' of the least-squares generating matrix
    k, n = Qt.shape
    z = np.zeros(k)
    for i in range(k):
        acc = c[i]
        for j in range(i):
            acc -= R[j, i] * z[j]
        z[i] = acc / R[i, i]
    g = np.zeros(n)
    for i in range(k):
        for t in range(n):
            g[t] += z[i] * Qt[i, t]
    return g


@_jit
def _nb_rank(A, rel_tol):
    sv = np.linalg.svd(A)[1]
    if sv.shape[0] == 0 or sv[0] == 0.0:
        return 0
    return int((sv > rel_tol * sv[0]).sum())


@_jit
def _nb_group_variance(B, yi, rank_tol):
    ni = B.shape[0]
    Qt, R, full = _nb_qr(B, rank_tol * ni)
    if full:
        r = _nb_residual(Qt, yi)
        dfi = ni - B.shape[1]
    else:
        r = yi - B @ (np.linalg.pinv(B) @ yi)
        dfi = ni - _nb_rank(B, rank_tol * ni)
    return (r @ r) / dfi, dfi


@_jit
def _nb_ancova_batch(Y, M, n1, rank_tol):
    R_, N = Y.shape
    L = M.shape[2]
    k = 2 + L
    out = np.empty((R_, 9))
    p_hat = np.empty((R_, L))
    var_p = np.empty((R_, L))
    lam = np.empty((R_, L))
    var_cp = np.empty((R_, L))
    Xt = np.zeros((N, k))
    for j in range(n1):
        Xt[j, 0] = 1.0
    for j in range(n1, N):
        Xt[j, 1] = 1.0
    G = np.empty((k, N))
    unit = np.zeros(k)
    for r in range(R_):
        for j in range(N):
            for c in range(L):
                Xt[j, 2 + c] = M[r, j, c]
        y = Y[r].copy()
        Qt, Rm, full = _nb_qr(Xt, rank_tol * N)
        if full:
            for i in range(k):
                unit[:] = 0.0
                unit[i] = 1.0
                G[i] = _nb_row_of_inverse(Qt, Rm, unit)
            e = _nb_residual(Qt, y)
            df_c = N - k
        else:
            G[:, :] = np.linalg.pinv(Xt)
            e = y - Xt @ (G @ y)
            df_c = N - _nb_rank(Xt, rank_tol * N)
        beta = G @ y
        s_c = (e @ e) / df_c
        contrast = G[0] - G[1]
        w = contrast * contrast
        n1s = w[:n1].sum()
        n2s = w[n1:].sum()
        s = np.empty(2)
        df = np.empty(2)
        for g in range(2):
            lo = 0 if g == 0 else n1
            hi = n1 if g == 0 else N
            ni = hi - lo
            B = np.ones((ni, 1 + L))
            for j in range(ni):
                for c in range(L):
                    B[j, 1 + c] = M[r, lo + j, c]
            s[g], df[g] = _nb_group_variance(B, y[lo:hi].copy(), rank_tol)
        v = s[0] * n1s + s[1] * n2s
        out[r, 0] = beta[0] - beta[1]
        out[r, 1] = v
        out[r, 2] = v * v / (s[0] ** 2 * n1s ** 2 / df[0] + s[1] ** 2 * n2s ** 2 / df[1])
        out[r, 3] = s[0]
        out[r, 4] = s[1]
        out[r, 5] = df[0]
        out[r, 6] = df[1]
        out[r, 7] = s_c * (n1s + n2s)
        out[r, 8] = df_c
        for c in range(L):
            a2 = G[2 + c] * G[2 + c]
            t1 = a2[:n1].sum()
            t2 = a2[n1:].sum()
            vp = s[0] * t1 + s[1] * t2
            p_hat[r, c] = beta[2 + c]
            var_p[r, c] = vp
            lam[r, c] = vp * vp / (s[0] ** 2 * t1 ** 2 / df[0] + s[1] ** 2 * t2 ** 2 / df[1])
            var_cp[r, c] = s_c * (t1 + t2)
    return out, p_hat, var_p, lam, var_cp


def _np_group_fit(Yg, Mg, rank_tol):
    R, ni, L = Mg.shape
    B = np.concatenate([np.ones((R, ni, 1)), Mg], axis=2)
    coef = np.linalg.pinv(B) @ Yg[:, :, None]
    resid = Yg - (B @ coef)[:, :, 0]
    sv = np.linalg.svd(B, compute_uv=False)
    df = ni - (sv > rank_tol * ni * sv[:, :1]).sum(axis=1)
    return np.einsum("rj,rj->r", resid, resid) / df, df.astype(float)


def _np_ancova_batch(Y, M, n1, rank_tol):
    R, N = Y.shape
    L = M.shape[2]
    X = np.zeros((N, 2))
    X[:n1, 0] = 1.0
    X[n1:, 1] = 1.0
    Xt = np.concatenate([np.broadcast_to(X, (R, N, 2)), M], axis=2)
    G = np.linalg.pinv(Xt)
    beta = (G @ Y[:, :, None])[:, :, 0]
    e = Y - (Xt @ beta[:, :, None])[:, :, 0]
    sv = np.linalg.svd(Xt, compute_uv=False)
    df_c = N - (sv > rank_tol * N * sv[:, :1]).sum(axis=1)
    s_c = np.einsum("rj,rj->r", e, e) / df_c
    w = (G[:, 0] - G[:, 1]) ** 2
    n1s = w[:, :n1].sum(axis=1)
    n2s = w[:, n1:].sum(axis=1)
    s1, df1 = _np_group_fit(Y[:, :n1], M[:, :n1], rank_tol)
    s2, df2 = _np_group_fit(Y[:, n1:], M[:, n1:], rank_tol)
    v = s1 * n1s + s2 * n2s
    out = np.column_stack([
        beta[:, 0] - beta[:, 1],
        v,
        v * v / (s1 ** 2 * n1s ** 2 / df1 + s2 ** 2 * n2s ** 2 / df2),
        s1, s2, df1, df2,
        s_c * (n1s + n2s),
        df_c.astype(float),
    ])
    a2 = G[:, 2:] ** 2
    t1 = a2[:, :, :n1].sum(axis=2)
    t2 = a2[:, :, n1:].sum(axis=2)
    vp = s1[:, None] * t1 + s2[:, None] * t2
    lam = vp * vp / ((s1 ** 2 / df1)[:, None] * t1 ** 2 + (s2 ** 2 / df2)[:, None] * t2 ** 2)
    return out, beta[:, 2:], vp, lam, s_c[:, None] * (t1 + t2)


def ancova_batch(Y, M, n1: int, rank_tol: float = np.finfo(float).eps) -> dict:
    """Fit R two-group ANCOVA datasets at once.

    ``Y`` is (R, N) with group-1 rows first, ``M`` is (R, N, L). Variances
    are on the scale of the estimator itself (SE squared), i.e. the
    weighted-sum variance divided by N. Keys: the entries of
    ``BATCH_FIELDS`` plus ``p_hat``, ``var_p``, ``lam`` and ``var_cp``, the
    last four shaped (R, L).
    """
    Y = np.ascontiguousarray(Y, dtype=float)
    M = np.ascontiguousarray(M, dtype=float)
    if M.ndim != 3 or M.shape[:2] != Y.shape:
        raise ValueError("M must be shaped (R, N, L) matching Y (R, N)")
    if _backend == "numba":
        out, p_hat, var_p, lam, var_cp = _nb_ancova_batch(Y, M, int(n1), float(rank_tol))
    else:
        out, p_hat, var_p, lam, var_cp = _np_ancova_batch(Y, M, int(n1), float(rank_tol))
    res = {name: out[:, i] for i, name in enumerate(BATCH_FIELDS)}
    res.update(p_hat=p_hat, var_p=var_p, lam=lam, var_cp=var_cp)
    return res


# ---------------------------------------------------------------------------
# wild bootstrap resample statistics
# ---------------------------------------------------------------------------


@_jit_fast
def _nb_wild_statistics(g, U, e, signs):
    B, N = signs.shape
    k = U.shape[1]
    out = np.empty(B)
    u = np.empty(N)
    proj = np.empty(k)
    g2 = g * g
    for b in range(B):
        num = 0.0
        proj[:] = 0.0
        for j in range(N):
            uj = signs[b, j] * e[j]
            u[j] = uj
            num += g[j] * uj
            for c in range(k):
                proj[c] += U[j, c] * uj
        var = 0.0
        for j in range(N):
            ej = u[j]
            for c in range(k):
                ej -= U[j, c] * proj[c]
            var += g2[j] * ej * ej
        out[b] = num / math.sqrt(var) if var > 0.0 else 0.0
    return out


def _np_wild_statistics(g, U, e, signs):
    u = signs * e
    num = u @ g
    estar = u - (u @ U) @ U.T
    var = (estar * estar) @ (g * g)
    safe = np.where(var > 0.0, var, 1.0)
    return np.where(var > 0.0, num / np.sqrt(safe), 0.0)


def wild_statistics(g, U, e, signs) -> np.ndarray:
    """Studentized resample statistics for sign-flipped residuals.

    ``U`` is an orthonormal basis (N x r) of the design's column space. For
    each row w of ``signs`` the resample response is ``u = w * e``; the
    estimate is ``g @ u`` and its HC0 variance is
    ``sum(g**2 * (u - U U' u)**2)``. A resample with zero variance yields a
    statistic of 0.
    """
    g = np.ascontiguousarray(g, dtype=float)
    U = np.ascontiguousarray(U, dtype=float)
    e = np.ascontiguousarray(e, dtype=float)
    signs = np.ascontiguousarray(signs, dtype=float)
    if _backend == "numba":
        return _nb_wild_statistics(g, U, e, signs)
    return _np_wild_statistics(g, U, e, signs)
