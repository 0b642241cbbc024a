"""Command-line interface: ``analyze``, ``simulate`` and ``bench``.

Exit codes: 0 success, 2 invalid input or configuration (including CSV parse
errors, reported with their line number), 3 a group without residual
degrees of freedom, 4 an observation with leverage 1.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import BootstrapConfig, wild_bootstrap_test
from .datasets import ColumnSpec, read_dataset
from .exceptions import DegenerateGroupError, InvalidInputError, LeverageError, StructuralError
from .inference import (
    TestResult,
    classical_ancova_test,
    classical_covariate_test,
    covariate_test,
    normal_approx_test,
    welch_cov_test,
)
from .model import AncovaData, fit
from .simulation import (
    DISTRIBUTIONS,
    PAPER_SETTINGS,
    SimSetting,
    StudyResult,
    estimator_bias_study,
    paper_setting,
    power_study,
    timing_benchmark,
    type1_study,
)
from .variance import HcFlavor, estimate_variances, hcse_covariance, sigma_b_hc

__all__ = ["analyze", "format_report", "main"]

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE, EXIT_LEVERAGE = 0, 2, 3, 4

METHOD_LABELS = {
    "welch_satterthwaite_cov": "Welch-Satterthwaite (T_kappa)",
    "normal_approx": "Normal approximation",
    "classical_ancova": "Classical ANCOVA",
    "wild_bootstrap": "Wild bootstrap",
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def _label(v):
    return v.item() if isinstance(v, np.generic) else v


def analyze(data: AncovaData, alpha: float = 0.05, bootstrap: int | None = None,
            seed: int | None = None) -> dict:
    """All methods side by side, as a JSON-ready dict with full precision."""
    fm = fit(data)
    v = estimate_variances(fm)
    tests = [
        welch_cov_test(data, alpha, fitted=fm),
        normal_approx_test(data, alpha, fitted=fm),
        classical_ancova_test(data, alpha, fitted=fm),
    ]
    if bootstrap is not None:
        cfg = BootstrapConfig(n_resamples=bootstrap, seed=seed)
        tests.append(wild_bootstrap_test(data, cfg, alpha, fitted=fm))
    cov_tests = []
    for l in range(1, data.L + 1):
        cov_tests.append(covariate_test(data, l, alpha, fitted=fm))
        cov_tests.append(classical_covariate_test(data, l, alpha, fitted=fm))
    hc = {}
    for flavor in HcFlavor:
        cov = hcse_covariance(fm.Xt, fm.residuals, flavor)
        hc[flavor.value] = math.sqrt(sigma_b_hc(cov, data.N) / data.N)

    groups = []
    for i, (s, df) in enumerate(((v.sigma1_sq, v.df1), (v.sigma2_sq, v.df2)), start=1):
        groups.append({
            "group": i,
            "label": _label(data.labels[i - 1]),
            "n": data.n1 if i == 1 else data.n2,
            "b_hat": float(fm.b_hat[i - 1]),
            "sigma_sq": float(s),
            "df": int(df),
            "n_star": float(fm.n_star[i - 1]),
            "mean_y": float(data.y[data.group_slice(i)].mean()),
            "covariate_means": [float(c) for c in data.M[data.group_slice(i)].mean(axis=0)],
        })
    return {
        "alpha": float(alpha),
        "N": data.N,
        "covariates": list(data.covariate_names),
        "groups": groups,
        "slopes": {name: float(p) for name, p in zip(data.covariate_names, fm.p_hat)},
        "sigma_b_sq": float(v.sigma_b_sq),
        "identifiable": bool(fm.identifiable),
        "tests": [t.to_dict() for t in tests],
        "covariate_tests": [t.to_dict() for t in cov_tests],
        "hc_se": hc,
        "bootstrap": None if bootstrap is None else {"n_resamples": bootstrap, "seed": seed},
    }


def _equation(report: dict, g: dict, response: str) -> str:
    terms = [f"{g['b_hat']:.3f}"]
    for name, p in report["slopes"].items():
        sign = "-" if p < 0 else "+"
        terms.append(f"{sign} {abs(p):.3f}*{name}")
    line = f"group {g['group']} ({g['label']}): {response} = " + " ".join(terms)
    if report["slopes"]:
        at = ", ".join(f"{name} = {m:.3f}" for name, m in zip(report["slopes"],
                                                               g["covariate_means"]))
        line += f"; at the group means ({at}) this gives {g['mean_y']:.3f}"
    return line


def _fmt_df(df) -> str:
    if df is None:
        return "-"
    if df == "asymptotic":
        return "inf"
    return f"{df:.0f}" if float(df).is_integer() else f"{df:.2f}"


def _fmt_p(p: float) -> str:
    return f"{p:.4f}" if p >= 1e-4 else f"{p:.1e}"


def _table(header: list[str], rows: list[list[str]], left: int = 1) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]

    def line(cells):
        return "  ".join(c.ljust(w) if j < left else c.rjust(w)
                         for j, (c, w) in enumerate(zip(cells, widths)))

    out = [line(header), line(["-" * w for w in widths])]
    out.extend(line(r) for r in rows)
    return "\n".join(out)


def _test_rows(tests: list[dict], with_param: bool = False) -> list[list[str]]:
    rows = []
    for t in tests:
        row = [METHOD_LABELS.get(t["method"], t["method"])]
        if with_param:
            row.insert(0, t["parameter"])
        row += [f"{t['effect']:.3f}", f"{t['se']:.2f}", f"{t['statistic']:.2f}",
                _fmt_df(t["df"]), _fmt_p(t["p_value"]),
                f"[{t['ci_lower']:.3f}, {t['ci_upper']:.3f}]"]
        rows.append(row)
    return rows


def format_report(report: dict, response: str = "y", source: str = "") -> str:
    conf = f"{100 * (1 - report['alpha']):g}% CI"
    parts = []
    if source:
        parts.append(f"Dataset: {source} (N = {report['N']}, covariates: "
                      f"{', '.join(report['covariates']) or 'none'})")
    parts.append("Group-specific estimates")
    parts.append(_table(
        ["group", "label", "n", "b_hat", "sigma^2", "df"],
        [[str(g["group"]), str(g["label"]), str(g["n"]), f"{g['b_hat']:.3f}",
          f"{g['sigma_sq']:.3f}", str(g["df"])] for g in report["groups"]]))
    parts.append("")
    parts.append("Treatment effect b1 - b2")
    parts.append(_table(["method", "effect", "SE", "statistic", "df", "p-value", conf],
                        _test_rows(report["tests"])))
    if report["covariate_tests"]:
        parts.append("")
        parts.append("Covariate slopes")
        parts.append(_table(["slope", "method", "estimate", "SE", "statistic", "df", "p-value",
                             conf], _test_rows(report["covariate_tests"], with_param=True), left=2))
    parts.append("")
    parts.append("Sandwich standard errors of b1 - b2: " + ", ".join(
        f"{k} {v:.2f}" for k, v in report["hc_se"].items()))
    parts.append("")
    parts.append("Fitted group models")
    parts.extend("  " + _equation(report, g, response) for g in report["groups"])
    if not report["identifiable"]:
        parts.append("")
        parts.append("note: the design is rank deficient; estimates use the minimum-norm solution")
    return "\n".join(parts) + "\n"


def _tests_csv(report: dict) -> str:
    keys = [f.name for f in fields(TestResult)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for t in report["tests"] + report["covariate_tests"]:
        w.writerow([repr(t[k]) if isinstance(t[k], float) else t[k] for k in keys])
    return buf.getvalue()


def _write(path: str, text: str) -> None:
    p = Path(path)
    if p.parent != Path(""):
        p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8")


def cmd_analyze(args) -> int:
    if args.bootstrap is not None and args.seed is None:
        raise UsageError("--bootstrap requires --seed so the result is reproducible")
    spec = None
    if args.group or args.response or args.id:
        spec = ColumnSpec(group=args.group or "group", response=args.response or "y", id=args.id)
    data = read_dataset(args.file, spec, control=args.control)
    report = analyze(data, args.alpha, args.bootstrap, args.seed)
    report["source"] = Path(args.file).name
    response = args.response or _response_name(args.file, spec)
    sys.stdout.write(format_report(report, response, Path(args.file).name))
    if args.json:
        _write(args.json, json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.csv:
        _write(args.csv, _tests_csv(report))
    return EXIT_OK


def _response_name(path, spec) -> str:
    from .datasets import KNOWN_LAYOUTS, resolve_path

    if spec is not None:
        return spec.response
    with open(resolve_path(path), encoding="utf-8-sig", newline="") as fh:
        header = tuple(h.strip().lower() for h in next(csv.reader(fh), []))
    return KNOWN_LAYOUTS[header].response if header in KNOWN_LAYOUTS else "y"


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _load_config(path: str) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return cfg


_SETTING_FIELDS = {f.name for f in fields(SimSetting)}


def _setting_overrides(cfg: dict, args) -> dict:
    over = {k: v for k, v in cfg.items() if k in _SETTING_FIELDS}
    for k in ("b", "p", "covariate_means"):
        if k in over:
            over[k] = tuple(float(x) for x in over[k])
    if args.nsim is not None:
        over["nsim"] = args.nsim
    if args.seed is not None:
        over["seed"] = args.seed
    if args.n_boot is not None:
        over["n_boot"] = args.n_boot
    if args.covariate_sd is not None:
        over["covariate_sd"] = args.covariate_sd
    if args.fixed_design:
        over["fixed_design"] = True
    if args.alpha is not None:
        over["alpha"] = args.alpha
    return over


def _summary(result: StudyResult) -> str:
    if result.kind == "bias":
        rows = [[str(r["n1"]), str(r["n2"]), f"{r['sigma1_sq']:g}/{r['sigma2_sq']:g}",
                 r["estimator"], f"{r['truth']:.4f}", f"{r['mean']:.4f}",
                 f"{r['rel_bias']:+.3f}", f"{r['mse']:.4f}"] for r in result.rows]
        return _table(["n1", "n2", "variances", "estimator", "truth", "mean", "rel.bias", "MSE"],
                      rows) + "\n"
    lines = []
    rows = []
    for r in result.rows:
        row = [r["setting"], str(r["m"]), r["distribution"], r["method"]]
        if result.kind == "power":
            row.insert(0, f"{r['delta']:g}")
        row += [f"{r['rate']:.4f}", f"{r['mc_se']:.4f}"]
        if result.kind == "type1":
            row.append(r["flag"])
        rows.append(row)
    header = ["setting", "m", "distribution", "method", "rate", "mc_se"]
    if result.kind == "power":
        header.insert(0, "delta")
    if result.kind == "type1":
        header.append("flag")
    lines.append(_table(header, rows, left=len(header) - (3 if result.kind == "type1" else 2)))
    if result.kind == "type1":
        for r in result.rows:
            if r["flag"] == "liberal":
                lines.append(f"LIBERAL: {r['method']} in {r['setting']} ({r['distribution']}, "
                             f"m={r['m']}) rejects at {r['rate']:.4f} > alpha={r.get('alpha', 0.05)}")
            elif r["flag"] == "conservative":
                lines.append(f"conservative: {r['method']} in {r['setting']} ({r['distribution']}, "
                             f"m={r['m']}) rejects at {r['rate']:.4f}")
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config) if args.config else {}
    study = args.study or cfg.get("study", "type1")
    if study not in ("type1", "type1p", "power", "bias"):
        raise UsageError(f"unknown study {study!r}")
    settings_k = args.setting or cfg.get("settings") or ([cfg["setting"]] if "setting" in cfg
                                                         else [1])
    dists = args.dist or cfg.get("dists") or ([cfg["dist"]] if "dist" in cfg else ["normal"])
    ms = args.m or cfg.get("m_values") or ([cfg["m"]] if "m" in cfg else [0])
    for k in settings_k:
        if k not in PAPER_SETTINGS:
            raise UsageError(f"--setting must be in {sorted(PAPER_SETTINGS)}, got {k}")
    for d in dists:
        if d not in DISTRIBUTIONS:
            raise UsageError(f"--dist must be one of {DISTRIBUTIONS}, got {d!r}")
    over = _setting_overrides({k: v for k, v in cfg.items()
                               if k not in ("dist", "m", "setting")}, args)
    methods = args.method or cfg.get("methods")

    if study == "bias":
        kw = {k: over[k] for k in ("covariate_sd",) if k in over}
        result = estimator_bias_study(
            sizes=tuple(args.sizes or cfg.get("sizes", (7, 15, 40))),
            nsim=over.get("nsim", 10_000), seed=over.get("seed", 0), dist=dists[0], **kw)
    elif study == "power":
        base = paper_setting(settings_k[0], dists[0], ms[0], **over)
        deltas = args.deltas or cfg.get("deltas", (0.0, 0.5, 1.0, 1.5, 2.0))
        result = power_study(base, deltas, methods or ("tkappa", "wild", "classical"))
    else:
        hyp = "p1" if study == "type1p" else "delta"
        if over.get("nsim", 10_000) < 1000:
            raise UsageError("type-1 studies need --nsim >= 1000")
        settings = [paper_setting(k, d, m, hypothesis=hyp, **over)
                    for k in settings_k for d in dists for m in ms]
        result = type1_study(settings, methods or ("tkappa", "classical"), hypothesis=hyp)
    result.metadata["seed"] = over.get("seed", 0)
    result.metadata["version"] = __version__

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.to_csv(out / f"{study}.csv")
    result.to_json(out / f"{study}.json")
    summary = _summary(result)
    (out / f"{study}_summary.txt").write_text(summary, encoding="utf-8")
    sys.stdout.write(summary)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _tests_arg(text: str) -> list[int]:
    vals = _int_list(text)
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("--tests needs positive integers")
    if len(vals) == 1 and "," not in text:
        return list(range(1, vals[0] + 1))
    return vals


def cmd_bench(args) -> int:
    result = timing_benchmark(args.tests, n_boot=args.n_boot, seed=args.seed,
                              repeats=args.repeats)
    rows = [[str(r["n_tests"]), f"{r['tkappa_seconds']:.6f}", f"{r['wild_seconds']:.4f}",
             f"{r['ratio']:.0f}"] for r in result.rows]
    text = _table(["tests", "T_kappa [s]", "wild [s]", "wild/T_kappa"], rows) + "\n"
    if args.repeats > 1:
        worst = max(max(r["tkappa_spread"], r["wild_spread"]) for r in result.rows)
        verdict = "stable" if worst < 0.5 else "unstable"
        text += f"timing spread over {args.repeats} warm repeats: at most {100 * worst:.0f}% " \
                f"({verdict})\n"
    sys.stdout.write(text)
    if args.out:
        result.to_csv(args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetancova",
        description="Two-group ANCOVA under heteroscedasticity. The thread count for "
                    "simulations and bootstrap is read from HETANCOVA_THREADS.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="analyze a CSV dataset with all methods")
    a.add_argument("file", help="CSV file; 'bodyweight.csv' falls back to the bundled data")
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--bootstrap", type=int, metavar="B", help="add a wild bootstrap row")
    a.add_argument("--seed", type=int, help="seed for the bootstrap")
    a.add_argument("--json", metavar="PATH", help="write the full-precision report as JSON")
    a.add_argument("--csv", metavar="PATH", help="write the test rows as CSV")
    a.add_argument("--group", help="group column (default: group)")
    a.add_argument("--response", help="response column (default: y)")
    a.add_argument("--id", help="identifier column to ignore")
    a.add_argument("--control", help="label of group 1 (default: first label in the file)")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run a Monte-Carlo study")
    s.add_argument("--config", help="JSON file with study and setting fields")
    s.add_argument("--study", choices=("type1", "power", "type1p", "bias"))
    s.add_argument("--setting", type=_int_list, help="setting number(s) 1..5, comma separated")
    s.add_argument("--dist", type=_str_list, help="normal, uniform, chisq7 (comma separated)")
    s.add_argument("--m", type=_int_list, help="sample-size increment(s), comma separated")
    s.add_argument("--nsim", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--method", action="append",
                   help="tkappa, classical, normal or wild (repeatable)")
    s.add_argument("--n-boot", type=int, dest="n_boot", help="bootstrap resamples per replication")
    s.add_argument("--deltas", type=_float_list, help="power study effect sizes")
    s.add_argument("--sizes", type=_int_list, help="bias study group sizes")
    s.add_argument("--covariate-sd", type=float, dest="covariate_sd")
    s.add_argument("--fixed-design", action="store_true",
                   help="draw covariates once instead of per replication")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="time T_kappa against the wild bootstrap")
    b.add_argument("--tests", type=_tests_arg, default=[1, 10, 100],
                   help="comma-separated test counts, or K for 1..K")
    b.add_argument("--n-boot", type=int, default=10_000, dest="n_boot")
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="timing CSV")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DegenerateGroupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except LeverageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LEVERAGE
    except (UsageError, InvalidInputError, StructuralError, FileNotFoundError, ValueError,
            IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
