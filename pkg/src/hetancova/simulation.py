"""Monte-Carlo studies: size, power, estimator bias/MSE and timing.

Replications are grouped into chunks of ``CHUNK`` datasets. Every chunk draws
from its own ``SeedSequence`` child, keyed by (cell key, chunk index), and
chunk results are combined by summation in chunk order. A study's output is
therefore fixed by its seed, whatever the thread count
(``HETANCOVA_THREADS``).

Covariates are drawn from independent normals with means ``covariate_means``
and common standard deviation ``covariate_sd`` (default 1). They are redrawn
for every replication unless ``fixed_design`` is set.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import timeit
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .bootstrap import BootstrapConfig, bootstrap_p_value, wild_bootstrap_core
from .model import AncovaData
from .numerics import hat_diagonals, orth_complement_projector, pseudo_inverse, t_two_sided_p

__all__ = [
    "CHUNK",
    "DISTRIBUTIONS",
    "METHOD_ALIASES",
    "PAPER_SETTINGS",
    "ErrorDistribution",
    "SimSetting",
    "StudyResult",
    "estimator_bias_study",
    "generate_batch",
    "generate_dataset",
    "paper_setting",
    "power_study",
    "timing_benchmark",
    "type1_study",
]

CHUNK = 500

# (n1, n2, sigma1^2, sigma2^2, description)
PAPER_SETTINGS = {
    1: (10, 10, 1.0, 1.0, "balanced, equal variances"),
    2: (10, 20, 1.0, 1.0, "unbalanced, equal variances"),
    3: (10, 10, 1.0, 3.0, "balanced, unequal variances"),
    4: (10, 20, 1.0, 3.0, "unbalanced, larger group has larger variance"),
    5: (20, 10, 1.0, 3.0, "unbalanced, larger group has smaller variance"),
}

METHOD_ALIASES = {
    "tkappa": "welch_satterthwaite_cov",
    "t_kappa": "welch_satterthwaite_cov",
    "welch": "welch_satterthwaite_cov",
    "welch_satterthwaite_cov": "welch_satterthwaite_cov",
    "classical": "classical_ancova",
    "classical_ancova": "classical_ancova",
    "normal": "normal_approx",
    "normal_approx": "normal_approx",
    "wild": "wild_bootstrap",
    "bootstrap": "wild_bootstrap",
    "wild_bootstrap": "wild_bootstrap",
}
CLOSED_FORM = ("welch_satterthwaite_cov", "classical_ancova", "normal_approx")


@dataclass(frozen=True)
class ErrorDistribution:
    """Error law standardized to mean 0 and variance 1.

    normal: N(0, 1). uniform: (U - 1/2) * sqrt(12). chisq7: (Z - 7) / sqrt(14)
    with Z ~ chi-square(7).
    """

    family: str = "normal"

    def __post_init__(self):
        if self.family not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.family!r}")

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.family == "normal":
            return rng.standard_normal(size)
        if self.family == "uniform":
            return (rng.random(size) - 0.5) * math.sqrt(12.0)
        return (rng.chisquare(7, size) - 7.0) / math.sqrt(14.0)

    @property
    def skewness(self) -> float:
        return {"normal": 0.0, "uniform": 0.0, "chisq7": math.sqrt(8.0 / 7.0)}[self.family]

    @property
    def kurtosis(self) -> float:
        return {"normal": 3.0, "uniform": 1.8, "chisq7": 3.0 + 12.0 / 7.0}[self.family]

    def central_moments(self, sigma2: float) -> tuple[float, float]:
        """(mu3, mu4) of the error scaled to variance ``sigma2``."""
        return self.skewness * sigma2**1.5, self.kurtosis * sigma2**2


DISTRIBUTIONS = ("normal", "uniform", "chisq7")


@dataclass(frozen=True)
class SimSetting:
    n1: int = 10
    n2: int = 10
    m: int = 0
    sigma1_sq: float = 1.0
    sigma2_sq: float = 1.0
    dist: str = "normal"
    b: tuple[float, float] = (10.0, 10.0)
    p: tuple[float, ...] = (1.0, 0.6, 0.7)
    covariate_means: tuple[float, ...] = (9.0, 7.0, 5.0)
    covariate_sd: float = 1.0
    nsim: int = 10_000
    alpha: float = 0.05
    seed: int = 0
    fixed_design: bool = False
    n_boot: int = 2000
    label: str = ""

    def __post_init__(self):
        if len(self.p) != len(self.covariate_means):
            raise ValueError("p and covariate_means must have the same length")
        if min(self.n1, self.n2) + self.m < 2:
            raise ValueError("each group needs at least 2 observations")
        if self.sigma1_sq < 0 or self.sigma2_sq < 0 or self.covariate_sd <= 0:
            raise ValueError("variances must be nonnegative and covariate_sd positive")
        ErrorDistribution(self.dist)

    @property
    def sizes(self) -> tuple[int, int]:
        return self.n1 + self.m, self.n2 + self.m

    @property
    def L(self) -> int:
        return len(self.p)


def paper_setting(k: int, dist: str = "normal", m: int = 0, *, hypothesis: str = "delta",
                  **overrides) -> SimSetting:
    """One of the five standard configurations.

    ``hypothesis="p1"`` sets the first slope to 0 so that its null holds.
    """
    if k not in PAPER_SETTINGS:
        raise ValueError(f"setting must be one of {sorted(PAPER_SETTINGS)}")
    n1, n2, s1, s2, _ = PAPER_SETTINGS[k]
    kw = dict(n1=n1, n2=n2, m=m, sigma1_sq=s1, sigma2_sq=s2, dist=dist, label=f"setting{k}")
    if hypothesis == "p1":
        kw["p"] = (0.0, 0.6, 0.7)
    kw.update(overrides)
    return SimSetting(**kw)


def _rng(seed, key: tuple[int, ...], chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key) + (int(chunk),))
    return np.random.Generator(np.random.PCG64(ss))


def _design_covariates(setting: SimSetting, rng: np.random.Generator, R: int) -> np.ndarray:
    N = sum(setting.sizes)
    means = np.asarray(setting.covariate_means, dtype=float)
    return means + setting.covariate_sd * rng.standard_normal((R, N, setting.L))


def _fixed_covariates(setting: SimSetting, key: tuple[int, ...]) -> np.ndarray:
    # reserved chunk index for the one-off design draw
    return _design_covariates(setting, _rng(setting.seed, key, 2**31 - 1), 1)[0]


def generate_batch(setting: SimSetting, rng: np.random.Generator, R: int,
                   M_fixed: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """R datasets as arrays: responses (R, N) and covariates (R, N, L)."""
    n1, n2 = setting.sizes
    N = n1 + n2
    if M_fixed is None:
        M = _design_covariates(setting, rng, R)
    else:
        M = np.broadcast_to(M_fixed, (R, N, setting.L))
    scale = np.repeat([math.sqrt(setting.sigma1_sq), math.sqrt(setting.sigma2_sq)], [n1, n2])
    err = ErrorDistribution(setting.dist).draw(rng, (R, N)) * scale
    mean = np.repeat(np.asarray(setting.b, dtype=float), [n1, n2]) + M @ np.asarray(setting.p)
    return mean + err, np.ascontiguousarray(M)


def generate_dataset(setting: SimSetting, rng: np.random.Generator,
                     M_fixed: np.ndarray | None = None) -> AncovaData:
    Y, M = generate_batch(setting, rng, 1, M_fixed)
    n1, n2 = setting.sizes
    return AncovaData(Y[0], np.repeat([1, 2], [n1, n2]), M[0])


# ---------------------------------------------------------------------------
# results container
# ---------------------------------------------------------------------------


@dataclass
class StudyResult:
    kind: str
    rows: list[dict]
    metadata: dict = field(default_factory=dict)

    def columns(self) -> list[str]:
        cols: list[str] = []
        for row in self.rows:
            cols.extend(k for k in row if k not in cols)
        return cols

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.columns(), lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_json(self, path=None) -> str:
        text = json.dumps({"kind": self.kind, "metadata": self.metadata, "rows": self.rows},
                          indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    def filter(self, **criteria) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in criteria.items())]

    def rate(self, **criteria) -> float:
        rows = self.filter(**criteria)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {criteria}")
        return rows[0]["rate"]


# ---------------------------------------------------------------------------
# rejection counting
# ---------------------------------------------------------------------------


def _threads() -> int:
    return max(1, int(os.environ.get("HETANCOVA_THREADS", "1")))


def _map_chunks(fn, n_chunks: int):
    workers = _threads()
    if workers == 1 or n_chunks == 1:
        return [fn(k) for k in range(n_chunks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_chunks)))


def _closed_form_rejections(Y, M, n1, methods, hypothesis, alpha, null_value):
    res = _kernels.ancova_batch(Y, M, n1)
    if hypothesis == "delta":
        est, var, df, var_c = res["delta"], res["var_b"], res["kappa"], res["var_c"]
    else:
        col = int(hypothesis[1:]) - 1
        est, var, df, var_c = res["p_hat"][:, col], res["var_p"][:, col], res["lam"][:, col], \
            res["var_cp"][:, col]
    out = {}
    for method in methods:
        if method == "welch_satterthwaite_cov":
            t, d = (est - null_value) / np.sqrt(var), df
        elif method == "normal_approx":
            t, d = (est - null_value) / np.sqrt(var), np.inf
        elif method == "classical_ancova":
            t, d = (est - null_value) / np.sqrt(var_c), res["df_c"]
        else:
            continue
        out[method] = int(np.count_nonzero(t_two_sided_p(t, d) <= alpha))
    return out


def _bootstrap_rejections(Y, M, n1, hypothesis, alpha, null_value, n_boot, seed_key):
    R, N = Y.shape
    X = np.zeros((N, 2))
    X[:n1, 0] = 1.0
    X[n1:, 1] = 1.0
    contrast = "delta" if hypothesis == "delta" else 1 + int(hypothesis[1:])
    count = 0
    for r in range(R):
        cfg = BootstrapConfig(n_resamples=n_boot, seed=seed_key + (r,), workers=1)
        Xt = np.hstack([X, M[r]])
        _, _, stat, t_star = wild_bootstrap_core(Xt, Y[r], contrast, cfg, null_value=null_value)
        count += bootstrap_p_value(stat, t_star) <= alpha
    return int(count)


def _rejection_counts(setting: SimSetting, methods, hypothesis: str, key: tuple[int, ...],
                      null_value: float = 0.0) -> dict[str, int]:
    n1 = setting.sizes[0]
    M_fixed = _fixed_covariates(setting, key) if setting.fixed_design else None
    n_chunks = -(-setting.nsim // CHUNK)

    def run(k):
        rows = min(CHUNK, setting.nsim - k * CHUNK)
        Y, M = generate_batch(setting, _rng(setting.seed, key, k), rows, M_fixed)
        counts = _closed_form_rejections(Y, M, n1, methods, hypothesis, setting.alpha, null_value)
        if "wild_bootstrap" in methods:
            boot_key = (int(setting.seed),) + tuple(key) + (k,)
            counts["wild_bootstrap"] = _bootstrap_rejections(
                Y, M, n1, hypothesis, setting.alpha, null_value, setting.n_boot, boot_key)
        return counts

    totals = dict.fromkeys(methods, 0)
    for part in _map_chunks(run, n_chunks):
        for m, c in part.items():
            totals[m] += c
    return totals


def _normalize_methods(methods) -> list[str]:
    out = []
    for m in methods:
        name = METHOD_ALIASES.get(m)
        if name is None:
            raise ValueError(f"unknown method {m!r}")
        if name not in out:
            out.append(name)
    return out


def _flag(rate: float, alpha: float, nsim: int) -> str:
    half = 2.576 * math.sqrt(alpha * (1 - alpha) / nsim)
    if rate > alpha + half:
        return "liberal"
    if rate < alpha - half:
        return "conservative"
    return "ok"


def _rate_row(setting: SimSetting, method: str, count: int, **extra) -> dict:
    rate = count / setting.nsim
    n1, n2 = setting.sizes
    row = {
        "setting": setting.label,
        "n1": n1,
        "n2": n2,
        "m": setting.m,
        "sigma1_sq": float(setting.sigma1_sq),
        "sigma2_sq": float(setting.sigma2_sq),
        "distribution": setting.dist,
    }
    row.update(extra)
    row.update(
        method=method,
        nsim=setting.nsim,
        rejections=count,
        rate=rate,
        mc_se=math.sqrt(rate * (1 - rate) / setting.nsim),
    )
    return row


def _setting_key(setting: SimSetting) -> tuple[int, ...]:
    digits = "".join(ch for ch in setting.label if ch.isdigit())
    return (int(digits) if digits else 0, setting.m, DISTRIBUTIONS.index(setting.dist))


def type1_study(settings, methods=("tkappa", "classical"), hypothesis: str = "delta") -> StudyResult:
    """Empirical size per (setting, m, distribution, method).

    ``hypothesis`` is ``"delta"`` for the treatment contrast or ``"p1"``,
    ``"p2"``, ... for a slope; the settings must make that null true.
    """
    methods = _normalize_methods(methods)
    rows = []
    for s in settings:
        if s.nsim < 1000:
            raise ValueError("type-1 studies need nsim >= 1000")
        if hypothesis == "delta" and s.b[0] != s.b[1]:
            raise ValueError("the treatment null requires b1 == b2")
        if hypothesis != "delta" and s.p[int(hypothesis[1:]) - 1] != 0:
            raise ValueError(f"the {hypothesis} null requires that slope to be 0")
        counts = _rejection_counts(s, methods, hypothesis, _setting_key(s))
        for m in methods:
            row = _rate_row(s, m, counts[m], hypothesis=hypothesis)
            row["flag"] = _flag(row["rate"], s.alpha, s.nsim)
            rows.append(row)
    meta = {
        "study": "type1",
        "hypothesis": hypothesis,
        "methods": methods,
        "settings": [asdict(s) for s in settings],
        "chunk": CHUNK,
    }
    return StudyResult("type1", rows, meta)


def power_study(base: SimSetting, deltas=(0.0, 0.5, 1.0, 1.5, 2.0),
                methods=("tkappa", "wild", "classical")) -> StudyResult:
    """Rejection rates of ``b1 = b2`` when ``b = (b1, b1 + delta)``."""
    methods = _normalize_methods(methods)
    if any(d < 0 for d in deltas):
        raise ValueError("deltas must be nonnegative")
    rows = []
    for i, d in enumerate(deltas):
        s = replace(base, b=(base.b[0], base.b[0] + float(d)))
        # every delta reuses the same error draws, which pairs the comparisons
        counts = _rejection_counts(s, methods, "delta", _setting_key(base))
        for m in methods:
            rows.append(_rate_row(s, m, counts[m], delta=float(d)))
    meta = {"study": "power", "methods": methods, "base": asdict(base),
            "deltas": [float(d) for d in deltas], "chunk": CHUNK}
    return StudyResult("power", rows, meta)


# ---------------------------------------------------------------------------
# estimator bias / MSE
# ---------------------------------------------------------------------------

ESTIMATORS = ("sigma_b", "HC0", "HC1", "HC2", "HC3", "sigma1", "sigma2")


def _bias_cell(setting: SimSetting, key: tuple[int, ...]) -> list[dict]:
    n1, n2 = setting.sizes
    N = n1 + n2
    M = _fixed_covariates(setting, key)
    X = np.zeros((N, 2))
    X[:n1, 0] = 1.0
    X[n1:, 1] = 1.0
    Xt = np.hstack([X, M])
    G = pseudo_inverse(Xt)
    g = G[0] - G[1]
    resid_maker = np.eye(N) - Xt @ G
    h = hat_diagonals(Xt)
    L = setting.L
    n_star = ((g * g)[:n1].sum(), (g * g)[n1:].sum())
    truth_b = N * (setting.sigma1_sq * n_star[0] + setting.sigma2_sq * n_star[1])
    Qs, dfs = [], []
    for sl in (slice(0, n1), slice(n1, N)):
        B = np.hstack([np.ones((sl.stop - sl.start, 1)), M[sl]])
        Q = orth_complement_projector(B)
        Qs.append(Q)
        dfs.append(round(float(np.trace(Q))))
    truth = {"sigma_b": truth_b, "sigma1": setting.sigma1_sq, "sigma2": setting.sigma2_sq}
    for name in ("HC0", "HC1", "HC2", "HC3"):
        truth[name] = truth_b

    sums = dict.fromkeys(ESTIMATORS, 0.0)
    sq_err = dict.fromkeys(ESTIMATORS, 0.0)
    sq_est = dict.fromkeys(ESTIMATORS, 0.0)
    g2 = g * g
    for k in range(-(-setting.nsim // CHUNK)):
        rows = min(CHUNK, setting.nsim - k * CHUNK)
        Y, _ = generate_batch(setting, _rng(setting.seed, key, k), rows, M)
        s1 = np.einsum("rj,rj->r", Y[:, :n1] @ Qs[0], Y[:, :n1]) / dfs[0]
        s2 = np.einsum("rj,rj->r", Y[:, n1:] @ Qs[1], Y[:, n1:]) / dfs[1]
        e2 = (Y @ resid_maker.T) ** 2
        est = {
            "sigma_b": N * (s1 * n_star[0] + s2 * n_star[1]),
            "HC0": N * (e2 @ g2),
            "HC2": N * (e2 @ (g2 / (1 - h))),
            "HC3": N * (e2 @ (g2 / (1 - h) ** 2)),
            "sigma1": s1,
            "sigma2": s2,
        }
        est["HC1"] = est["HC0"] * N / (N - L - 1)
        for name in ESTIMATORS:
            v = est[name]
            sums[name] += float(v.sum())
            sq_est[name] += float((v * v).sum())
            sq_err[name] += float(((v - truth[name]) ** 2).sum())

    out = []
    for name in ESTIMATORS:
        mean = sums[name] / setting.nsim
        var = max(sq_est[name] / setting.nsim - mean * mean, 0.0)
        bias = mean - truth[name]
        out.append({
            "n1": n1,
            "n2": n2,
            "sigma1_sq": float(setting.sigma1_sq),
            "sigma2_sq": float(setting.sigma2_sq),
            "estimator": name,
            "truth": float(truth[name]),
            "mean": mean,
            "bias": bias,
            "rel_bias": bias / truth[name],
            "mse": sq_err[name] / setting.nsim,
            "mc_se": math.sqrt(var / setting.nsim),
            "nsim": setting.nsim,
        })
    return out


def estimator_bias_study(sizes=(7, 15, 40), variances=((1.0, 1.0), (1.0, 3.0)),
                         nsim: int = 10_000, seed: int = 0, dist: str = "normal",
                         **setting_kw) -> StudyResult:
    """Bias and MSE of the variance estimators of the treatment contrast.

    The grid is every (n1, n2) pair from ``sizes`` crossed with ``variances``.
    Each cell uses one fixed covariate draw, so the true variance is known
    exactly.
    """
    rows = []
    for i, n1 in enumerate(sizes):
        for j, n2 in enumerate(sizes):
            for v, (s1, s2) in enumerate(variances):
                s = SimSetting(n1=n1, n2=n2, sigma1_sq=s1, sigma2_sq=s2, dist=dist, nsim=nsim,
                               seed=seed, fixed_design=True, **setting_kw)
                rows.extend(_bias_cell(s, (100 + i, j, v)))
    meta = {"study": "bias", "sizes": list(sizes), "variances": [list(v) for v in variances],
            "nsim": nsim, "seed": seed, "dist": dist, "chunk": CHUNK}
    return StudyResult("bias", rows, meta)


# ---------------------------------------------------------------------------
# timing
# ---------------------------------------------------------------------------


def timing_benchmark(n_tests=(1, 10, 100), n_boot: int = 10_000, n1: int = 10, n2: int = 10,
                     seed: int = 0, repeats: int = 1) -> StudyResult:
    """Wall-clock time of running ``n`` independent tests with each method.

    The closed-form test is evaluated for all datasets in one batched call;
    the bootstrap runs ``n_boot`` resamples per dataset. Each run is timed
    with :meth:`timeit.Timer.autorange`, and the fastest of ``repeats`` runs
    is reported; the ``*_spread`` columns give
    ``(slowest - fastest) / fastest`` over those runs.
    """
    setting = SimSetting(n1=n1, n2=n2, seed=seed, nsim=1000)
    # warm up compiled kernels so the first row is not charged for compilation
    Yw, Mw = generate_batch(setting, _rng(seed, (999,), 0), 2)
    _closed_form_rejections(Yw, Mw, n1, ["welch_satterthwaite_cov"], "delta", 0.05, 0.0)
    _bootstrap_rejections(Yw[:1], Mw[:1], n1, "delta", 0.05, 0.0, 100, (seed, 999))
    rows = []
    for n in n_tests:
        if n < 1:
            raise ValueError("number of tests must be positive")
        Y, M = generate_batch(setting, _rng(seed, (998, n), 0), int(n))
        timer_t = timeit.Timer(lambda: _closed_form_rejections(
            Y, M, n1, ["welch_satterthwaite_cov"], "delta", 0.05, 0.0))
        timer_w = timeit.Timer(lambda: _bootstrap_rejections(
            Y, M, n1, "delta", 0.05, 0.0, n_boot, (seed, 998, n)))
        times_t, times_w = [], []
        for _ in range(repeats):
            for timer, times in ((timer_t, times_t), (timer_w, times_w)):
                number, total = timer.autorange()
                times.append(total / number)
        best_t, best_w = min(times_t), min(times_w)
        rows.append({"n_tests": int(n), "tkappa_seconds": best_t, "wild_seconds": best_w,
                     "ratio": best_w / best_t,
                     "tkappa_spread": (max(times_t) - best_t) / best_t,
                     "wild_spread": (max(times_w) - best_w) / best_w})
    meta = {"study": "timing", "n_boot": n_boot, "n1": n1, "n2": n2, "seed": seed,
            "backend": _kernels.backend()}
    return StudyResult("timing", rows, meta)
