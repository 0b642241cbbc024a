"""Wild bootstrap test with Rademacher multipliers and HC0 studentization.

The design is held fixed. Each resample multiplies the full-model OLS
residuals by independent random signs, refits through the fixed generating
matrix and studentizes with the HC0 variance of the resample. The p-value is
the share of resample statistics at least as extreme as the observed one.

Signs are drawn in fixed-size chunks, and each chunk has its own
``SeedSequence`` child keyed by the chunk index. The output therefore depends
only on the seed, never on how chunks are spread over threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .inference import TestResult, _check_alpha, _studentize
from .model import AncovaData, FittedModel, fit
from .numerics import DEFAULT_TOL, Tolerance, pseudo_inverse, range_basis

__all__ = [
    "CHUNK",
    "BootstrapConfig",
    "bootstrap_p_value",
    "rademacher_vector",
    "resample_signs",
    "wild_bootstrap_core",
    "wild_bootstrap_test",
]

CHUNK = 1024


@dataclass(frozen=True)
class BootstrapConfig:
    """Resampling settings.

    ``hypothesis`` is ``"treatment_delta"`` or ``"covariate"``; for the
    latter ``covariate`` picks the slope (1-based). ``seed`` is an int or a
    tuple of ints used as ``SeedSequence`` entropy.
    """

    n_resamples: int = 10_000
    seed: int | tuple[int, ...] = 0
    hypothesis: str = "treatment_delta"
    covariate: int = 1
    workers: int | None = None

    def __post_init__(self):
        if self.n_resamples < 100:
            raise ValueError("n_resamples must be at least 100")
        if self.hypothesis not in ("treatment_delta", "covariate"):
            raise ValueError(f"unknown hypothesis {self.hypothesis!r}")


def rademacher_vector(n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent signs, each -1 or +1 with probability 1/2."""
    if n < 1:
        raise ValueError("n must be positive")
    return rng.integers(0, 2, size=n, dtype=np.int8) * 2.0 - 1.0


def _chunk_rng(seed, chunk: int) -> np.random.Generator:
    entropy = list(seed) if isinstance(seed, (tuple, list)) else seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy, spawn_key=(chunk,))))


def resample_signs(seed, chunk: int, rows: int, n: int) -> np.ndarray:
    """The (rows x n) sign matrix of one chunk."""
    return rademacher_vector(rows * n, _chunk_rng(seed, chunk)).reshape(rows, n)


def _workers(cfg: BootstrapConfig) -> int:
    if cfg.workers is not None:
        return max(1, int(cfg.workers))
    return max(1, int(os.environ.get("HETANCOVA_THREADS", "1")))


def _resample_statistics(g, U, e, cfg: BootstrapConfig) -> np.ndarray:
    B, N = cfg.n_resamples, e.size
    n_chunks = -(-B // CHUNK)

    def run(k):
        rows = min(CHUNK, B - k * CHUNK)
        return _kernels.wild_statistics(g, U, e, resample_signs(cfg.seed, k, rows, N))

    workers = _workers(cfg)
    if workers == 1 or n_chunks == 1:
        parts = [run(k) for k in range(n_chunks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(n_chunks)))
    return np.concatenate(parts)


def wild_bootstrap_core(Xt, y, contrast, cfg: BootstrapConfig, *, null_value: float = 0.0,
                        tol: Tolerance = DEFAULT_TOL):
    """Observed estimate, HC0 standard error, statistic and resample statistics.

    ``contrast`` is either ``"delta"`` or a 0-based column index into ``Xt``.
    """
    Xt = np.asarray(Xt, dtype=float)
    y = np.asarray(y, dtype=float)
    G = pseudo_inverse(Xt, tol)
    g = G[0] - G[1] if contrast == "delta" else G[int(contrast)]
    U = range_basis(Xt, tol)
    e = y - U @ (U.T @ y)
    estimate = float(g @ y)
    se = math.sqrt(float((g * g) @ (e * e)))
    stat = _studentize(estimate, se, null_value)
    return estimate, se, stat, _resample_statistics(g, U, e, cfg)


TIE_TOL = 1e-9


def bootstrap_p_value(stat: float, t_star: np.ndarray, tie_tol: float = TIE_TOL) -> float:
    """``(1 + #{|T*| >= |T|}) / (B + 1)``.

    Resample statistics within ``tie_tol`` of ``|T|`` count as ties. This
    keeps statistics that are equal in exact arithmetic (for example both 0)
    from being split by rounding noise.
    """
    hits = np.count_nonzero(np.abs(t_star) >= abs(stat) - tie_tol)
    return (1 + int(hits)) / (t_star.size + 1)


def wild_bootstrap_test(data: AncovaData, cfg: BootstrapConfig = BootstrapConfig(),
                        alpha: float = 0.05, tol: Tolerance = DEFAULT_TOL, *,
                        null_value: float = 0.0, fitted: FittedModel | None = None,
                        return_distribution: bool = False):
    """Wild bootstrap test of ``b1 - b2`` (or of one slope).

    The p-value is ``(1 + #{|T*| >= |T|}) / (B + 1)``. The interval is
    ``estimate -/+ c * SE`` where c is the bootstrap critical value of
    ``|T*|``, so rejection and exclusion of the null value agree.
    """
    _check_alpha(alpha)
    fm = fit(data, tol) if fitted is None else fitted
    if cfg.hypothesis == "treatment_delta":
        contrast, parameter = "delta", "delta"
    else:
        if not 1 <= cfg.covariate <= data.L:
            raise IndexError(f"covariate index {cfg.covariate} out of range 1..{data.L}")
        contrast, parameter = 1 + cfg.covariate, f"p{cfg.covariate}"
    estimate, se, stat, t_star = wild_bootstrap_core(fm.Xt, data.y, contrast, cfg,
                                                     null_value=null_value, tol=tol)
    B = t_star.size
    k = max(int(math.floor(alpha * (B + 1))) - 1, 0)
    crit = float(np.sort(np.abs(t_star))[::-1][min(k, B - 1)])
    result = TestResult(
        effect=estimate,
        se=se,
        statistic=float(stat),
        df=None,
        p_value=bootstrap_p_value(stat, t_star),
        ci_lower=estimate - crit * se,
        ci_upper=estimate + crit * se,
        alpha=float(alpha),
        method="wild_bootstrap",
        critical=crit,
        null_value=float(null_value),
        parameter=parameter,
    )
    if return_distribution:
        return result, t_star
    return result
