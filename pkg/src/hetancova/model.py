"""Two-group ANCOVA model: data container, design and OLS fit.

The model is ``y = X b + M p + error`` where X holds one indicator column per
group and M holds L fixed covariates. Both estimators are linear in y,
``b_hat = D y`` and ``p_hat = A y``; the rows of D and A determine the
weights that turn the two group variances into the variance of each
estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInputError, StructuralError
from .numerics import (
    DEFAULT_TOL,
    Tolerance,
    matrix_rank,
    orth_complement_projector,
    pseudo_inverse,
)

__all__ = [
    "AncovaData",
    "FittedModel",
    "build_design",
    "fit",
    "generating_matrices",
    "weights_n_star",
    "weights_n_tilde",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AncovaData:
    """Response, group labels (1 or 2) and covariate matrix.

    Rows must be sorted so that every group-1 row precedes every group-2 row;
    use :meth:`from_arrays` to canonicalize arbitrary input. ``order`` maps
    each canonical row back to its position in the original input.
    """

    y: np.ndarray
    group: np.ndarray
    M: np.ndarray
    labels: tuple = (1, 2)
    covariate_names: tuple = ()
    order: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        group = np.asarray(self.group).ravel()
        M = np.asarray(self.M, dtype=float)
        if M.ndim == 1:
            M = M[:, None] if M.size else np.zeros((y.size, 0))
        if M.ndim != 2 or M.shape[0] != y.size:
            raise InvalidInputError(f"M must have {y.size} rows, got shape {M.shape}")
        if group.size != y.size:
            raise InvalidInputError("y and group must have the same length")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(M))):
            raise InvalidInputError("y and M must be finite")
        if not np.all(np.isin(group, (1, 2))):
            raise StructuralError("group labels must be 1 or 2")
        group = group.astype(int)
        n1 = int(np.count_nonzero(group == 1))
        if np.any(group[:n1] != 1):
            raise StructuralError("group-1 rows must precede group-2 rows")
        n2 = y.size - n1
        if n1 < 2 or n2 < 2:
            raise StructuralError(f"each group needs at least 2 rows (got {n1} and {n2})")
        names = tuple(self.covariate_names) or tuple(f"x{i + 1}" for i in range(M.shape[1]))
        if len(names) != M.shape[1]:
            raise InvalidInputError("covariate_names must match the columns of M")
        order = np.arange(y.size) if self.order is None else np.asarray(self.order, dtype=int)
        object.__setattr__(self, "y", _freeze(y.copy()))
        object.__setattr__(self, "group", _freeze(group.copy()))
        object.__setattr__(self, "M", _freeze(M.copy()))
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "order", _freeze(order.copy()))

    @classmethod
    def from_arrays(cls, y, groups, M=None, *, control=None, covariate_names=()):
        """Build a dataset from rows in any order.

        ``groups`` may hold any two distinct labels. The first label seen (or
        ``control`` when given) becomes group 1. Rows are stably sorted by
        group.
        """
        y = np.asarray(y, dtype=float).ravel()
        groups = [g.item() if isinstance(g, np.generic) else g for g in np.asarray(groups).ravel()]
        if len(groups) != y.size:
            raise InvalidInputError("y and groups must have the same length")
        seen = list(dict.fromkeys(groups))
        if len(seen) != 2:
            raise StructuralError(f"expected exactly two groups, found {len(seen)}")
        if control is not None:
            matches = [s for s in seen if s == control or str(s) == str(control)]
            if not matches:
                raise StructuralError(f"control label {control!r} not present")
            first = matches[0]
            seen = [first] + [s for s in seen if s is not first]
        code = np.array([1 if g == seen[0] else 2 for g in groups])
        order = np.argsort(code, kind="stable")
        if M is None:
            M = np.zeros((y.size, 0))
        M = np.asarray(M, dtype=float)
        if M.ndim == 1:
            M = M[:, None]
        return cls(
            y=y[order],
            group=code[order],
            M=M[order],
            labels=tuple(seen),
            covariate_names=tuple(covariate_names),
            order=order,
        )

    @property
    def N(self) -> int:
        return self.y.size

    @property
    def n1(self) -> int:
        return int(np.count_nonzero(self.group == 1))

    @property
    def n2(self) -> int:
        return self.N - self.n1

    @property
    def L(self) -> int:
        return self.M.shape[1]

    def group_slice(self, i: int) -> slice:
        if i not in (1, 2):
            raise InvalidInputError("group index must be 1 or 2")
        return slice(0, self.n1) if i == 1 else slice(self.n1, self.N)

    def with_response(self, y) -> AncovaData:
        """Same design and grouping with a new (canonically ordered) response."""
        return AncovaData(y, self.group, self.M, self.labels, self.covariate_names, self.order)


def build_design(data: AncovaData) -> tuple[np.ndarray, np.ndarray]:
    """Return the group indicator matrix X (N x 2) and the covariates M."""
    if np.any(np.diff(data.group) < 0):
        raise StructuralError("group vector is not sorted into two blocks")
    X = np.zeros((data.N, 2))
    X[: data.n1, 0] = 1.0
    X[data.n1 :, 1] = 1.0
    return X, np.array(data.M)


def generating_matrices(X, M, tol: Tolerance = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Matrices D (2 x N) and A (L x N) with ``b_hat = D y`` and ``p_hat = A y``.

    A generalized (Moore-Penrose) inverse replaces ``(M'QM)^{-1}`` so the
    construction also works for collinear covariates.
    """
    X = np.asarray(X, dtype=float)
    M = np.asarray(M, dtype=float).reshape(X.shape[0], -1)
    X_pinv = pseudo_inverse(X, tol)
    if M.shape[1] == 0:
        return X_pinv, np.zeros((0, X.shape[0]))
    Q = orth_complement_projector(X, tol)
    MQ = M.T @ Q
    A = pseudo_inverse(MQ @ M, tol) @ MQ
    D = X_pinv - X_pinv @ M @ A
    return D, A


def weights_n_star(D, n1: int) -> tuple[float, float]:
    """Group weights of the treatment-contrast variance.

    ``Var(b1_hat - b2_hat) = sigma1^2 * n1* + sigma2^2 * n2*``.
    """
    D = np.asarray(D, dtype=float)
    if D.shape[0] != 2 or not 0 < n1 < D.shape[1]:
        raise InvalidInputError("D must be 2 x N and 0 < n1 < N")
    c2 = (D[0] - D[1]) ** 2
    return float(c2[:n1].sum()), float(c2[n1:].sum())


def weights_n_tilde(A, n1: int, l: int) -> tuple[float, float]:
    """Group weights of ``Var(p_hat_l)`` for the 1-based covariate index ``l``."""
    A = np.asarray(A, dtype=float)
    if not 1 <= l <= A.shape[0]:
        raise InvalidInputError(f"covariate index {l} out of range 1..{A.shape[0]}")
    a2 = A[l - 1] ** 2
    return float(a2[:n1].sum()), float(a2[n1:].sum())


@dataclass(frozen=True)
class FittedModel:
    data: AncovaData
    b_hat: np.ndarray
    p_hat: np.ndarray
    residuals: np.ndarray
    D: np.ndarray
    A: np.ndarray
    n_star: tuple[float, float]
    n_tilde: np.ndarray
    identifiable: bool

    @property
    def delta_hat(self) -> float:
        return float(self.b_hat[0] - self.b_hat[1])

    @property
    def Xt(self) -> np.ndarray:
        """Full design ``(X : M)``, columns ordered b1, b2, p1..pL."""
        X, M = build_design(self.data)
        return np.hstack([X, M])

    @property
    def G(self) -> np.ndarray:
        """Stacked generating matrix mapping y to (b_hat, p_hat)."""
        return np.vstack([self.D, self.A])


def fit(data: AncovaData, tol: Tolerance = DEFAULT_TOL) -> FittedModel:
    """Ordinary least squares fit of the two-group ANCOVA model.

    With L = 0 the estimates are the group means. When the covariates are
    collinear p_hat is one least-squares solution and ``identifiable`` is
    False; the treatment contrast remains estimable.
    """
    X, M = build_design(data)
    D, A = generating_matrices(X, M, tol)
    y = data.y
    b_hat = D @ y
    p_hat = A @ y
    resid = y - X @ b_hat - M @ p_hat
    n1 = data.n1
    n_tilde = np.array([weights_n_tilde(A, n1, l) for l in range(1, data.L + 1)]).reshape(-1, 2)
    identifiable = data.L == 0 or matrix_rank(np.hstack([X, M]), tol) == data.L + 2
    return FittedModel(
        data=data,
        b_hat=_freeze(b_hat),
        p_hat=_freeze(p_hat),
        residuals=_freeze(resid),
        D=_freeze(D),
        A=_freeze(A),
        n_star=weights_n_star(D, n1),
        n_tilde=_freeze(n_tilde),
        identifiable=bool(identifiable),
    )
