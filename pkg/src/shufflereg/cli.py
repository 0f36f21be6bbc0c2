"""Command-line front end: simulate, fit, test, bench, loss-table.

CSV files are comma-separated with a header row, UTF-8, ``.`` decimal
separator; numbers are written with the shortest round-trip decimal
representation so reruns are byte-identical. Exit codes: 0 success,
2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from itertools import product
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import build_uniform_q, lahiri_larsen_fit, ols_fit, oracle_fit, rescaled_ls
from .data import Dataset, RngSeed, SparsePermutation, Theta, sample_beta_sphere, simulate
from .em import EMConfig, default_init, em_known_norms, em_plugin, em_simultaneous
from .exceptions import DataError, NumericalError, ShuffleRegError
from .gof import mismatch_test
from .harness import GridSpec, run_grid
from .inference import sandwich
from .mixture import loss_table

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class _UsageError(Exception):
    """Flag combination errors detected after argparse (exit code 2)."""

FIT_VARIANTS = ("ols", "oracle", "rescaled", "lahiri_larsen", "em_known", "em_plugin", "em_simul")


def _fmt(v: float) -> str:
    """Shortest round-trip decimal representation."""
    return repr(float(v))


def _write_rows(path: Optional[str], header: Sequence[str], rows: List[Sequence]) -> None:
    def dump(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) if isinstance(c, float) else str(c) for c in row])

    if path is None:
        dump(sys.stdout)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            dump(fh)


def _emit_json(obj: dict, path: Optional[str]) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _read_csv(path: str) -> Tuple[List[str], np.ndarray]:
    """Read a numeric CSV with header; parse failures name row and column."""
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row")
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}"
                )
            parsed = []
            for col, cell in zip(header, row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {col!r}: not a number: {cell!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=float)


def _dataset_from_csv(
    path: str, response: str, predictors: Optional[str]
) -> Tuple[Dataset, List[str]]:
    header, arr = _read_csv(path)
    if response not in header:
        raise DataError(f"{path}: response column {response!r} not in header {header}")
    if predictors is None:
        pred_names = [c for c in header if c != response]
    else:
        pred_names = [c.strip() for c in predictors.split(",") if c.strip()]
        missing = [c for c in pred_names if c not in header]
        if missing:
            raise DataError(f"{path}: predictor columns not in header: {missing}")
        if response in pred_names:
            raise DataError("response column must be disjoint from predictors")
    if not pred_names:
        raise DataError("need at least one predictor column")
    X = arr[:, [header.index(c) for c in pred_names]]
    y = arr[:, header.index(response)]
    try:
        data = Dataset(X, y)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    return data, pred_names


def _parse_floats(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip() != "")
    except ValueError as exc:
        raise DataError(f"could not parse float list {text!r}") from exc


def _cmd_simulate(args) -> int:
    if args.k is None and args.alpha is None:
        raise _UsageError("one of --k or --alpha is required")
    k = args.k if args.k is not None else int(round(args.alpha * args.n))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gen = RngSeed(args.seed, args.stream).generator()
    beta = sample_beta_sphere(args.d, args.beta_norm, gen)
    theta = Theta(beta, args.sigma**2, 0.0)
    data = simulate(args.n, args.d, theta, k, gen, bernoulli=args.bernoulli)
    perm, truth_theta = data.truth

    header = [f"x{j + 1}" for j in range(args.d)] + ["y"]
    rows = [list(data.X[i]) + [data.y[i]] for i in range(args.n)]
    _write_rows(str(out_dir / "data.csv"), header, rows)
    truth = {
        "n": args.n,
        "d": args.d,
        "beta": [float(b) for b in truth_theta.beta],
        "sigma2": truth_theta.sigma2,
        "alpha": truth_theta.alpha,
        "k": perm.k,
        "permutation": [int(i) + 1 for i in perm.map],
        "bernoulli": bool(args.bernoulli),
        "seed": args.seed,
        "stream": args.stream,
    }
    _emit_json(truth, str(out_dir / "truth.json"))
    return EXIT_OK


def _load_permutation(path: str, n: int) -> SparsePermutation:
    try:
        truth = json.loads(Path(path).read_text(encoding="utf-8"))
        one_based = truth["permutation"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot load permutation from {path}: {exc}") from exc
    m = np.asarray(one_based, dtype=np.intp) - 1
    if m.shape[0] != n:
        raise DataError(f"{path}: permutation length {m.shape[0]} does not match n={n}")
    try:
        return SparsePermutation.from_map(m)
    except ValueError as exc:
        raise DataError(f"{path}: invalid permutation: {exc}") from exc


def _cmd_fit(args) -> int:
    data, pred_names = _dataset_from_csv(args.input, args.response, args.predictors)
    cfg = EMConfig(max_iter=args.max_iter, tol=args.tol)
    variant = args.variant
    report: Dict[str, object] = {
        "variant": variant,
        "n": data.n,
        "d": data.d,
        "predictors": pred_names,
        "beta_hat": None,
        "sigma2_hat": None,
        "alpha_hat": None,
        "se": None,
        "ci": None,
        "converged": None,
        "iterations": None,
        "neg_pseudo_loglik": None,
        "warnings": [],
    }

    def need(flag_value, flag_name):
        if flag_value is None:
            raise _UsageError(f"variant {variant!r} requires {flag_name}")
        return flag_value

    fit_out = None
    if variant == "ols":
        beta = ols_fit(data)
    elif variant == "oracle":
        perm = _load_permutation(need(args.truth, "--truth"), data.n)
        with_truth = Dataset(data.X, data.y, truth=(perm, Theta(np.zeros(data.d), 1.0, 0.0)))
        beta = oracle_fit(with_truth)
    elif variant == "rescaled":
        beta = rescaled_ls(data, need(args.sigma, "--sigma") ** 2)
    elif variant == "lahiri_larsen":
        alpha = need(args.alpha, "--alpha")
        beta = lahiri_larsen_fit(data, build_uniform_q(data.n, alpha))
    elif variant == "em_known":
        sig = need(args.sigma, "--sigma")
        bnorm = need(args.beta_norm, "--beta-norm")
        init = Theta(ols_fit(data), sig**2, args.alpha0)
        fit_out = em_known_norms(data, sig**2, bnorm, init=init, cfg=cfg)
        beta = fit_out.theta_hat.beta
    elif variant in ("em_plugin", "em_simul"):
        runner = em_plugin if variant == "em_plugin" else em_simultaneous
        fit_out = runner(data, init=default_init(data, args.alpha0), cfg=cfg)
        beta = fit_out.theta_hat.beta
    else:  # pragma: no cover - argparse choices guard this
        raise DataError(f"unknown variant {variant!r}")

    report["beta_hat"] = [float(b) for b in beta]
    if fit_out is not None:
        report["alpha_hat"] = fit_out.theta_hat.alpha
        report["converged"] = fit_out.converged
        report["iterations"] = fit_out.n_iter
        report["neg_pseudo_loglik"] = fit_out.trace.objective[-1]
        if variant != "em_known":
            report["sigma2_hat"] = fit_out.theta_hat.sigma2
        if variant in ("em_plugin", "em_simul") and not args.no_se:
            try:
                sw = sandwich(
                    data, fit_out.theta_hat, args.level, marginal_var=fit_out.marginal_var
                )
                report["se"] = [float(s) for s in sw.se]
                report["ci"] = [[float(lo), float(hi)] for lo, hi in sw.ci]
                if sw.boundary_warning:
                    report["warnings"].append(
                        "estimate at parameter boundary; intervals unreliable"
                    )
            except NumericalError as exc:
                report["warnings"].append(f"standard errors unavailable: {exc}")
    _emit_json(report, args.out)
    return EXIT_OK


def _cmd_test(args) -> int:
    data, _ = _dataset_from_csv(args.input, args.response, args.predictors)
    warnings = []
    if args.sigma is not None:
        sigma = args.sigma
    elif args.estimate_sigma:
        fit_out = em_plugin(data)
        sigma = float(np.sqrt(fit_out.theta_hat.sigma2))
        warnings.append(
            "sigma estimated from the data; the stated test level holds only approximately"
        )
    levels = _parse_floats(args.levels)
    res = mismatch_test(data, sigma, B=args.B, levels=levels, rng=RngSeed(args.seed, args.stream))
    report = {
        "n": data.n,
        "d": data.d,
        "m": data.n - data.d,
        "sigma": sigma,
        "statistic_cm": res.statistic_cm,
        "statistic_ks": res.statistic_ks,
        "p_cm": res.p_cm,
        "p_ks": res.p_ks,
        "mc_reps": res.mc_reps,
        "reject_at": {_fmt(lvl): flags for lvl, flags in res.reject_at.items()},
        "warnings": warnings,
    }
    _emit_json(report, args.out)
    return EXIT_OK


def _read_config(path: str) -> Dict[str, str]:
    cfg = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}: line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _cmd_bench(args) -> int:
    cfg = _read_config(args.config) if args.config else {}

    def pick(flag, key, cast, default):
        if flag is not None:
            return flag
        if key in cfg:
            return cast(cfg[key])
        return default

    n = pick(args.n, "n", int, 200)
    d = pick(args.d, "d", int, 10)
    sigmas = pick(args.sigmas and _parse_floats(args.sigmas), "sigmas", _parse_floats,
                  (0.01, 0.1, 0.2, 0.5, 1.0))
    alphas = pick(args.alphas and _parse_floats(args.alphas), "alphas", _parse_floats,
                  (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7))
    reps = pick(args.reps, "reps", int, 100)
    estimators = pick(
        args.estimators and tuple(args.estimators.split(",")),
        "estimators",
        lambda s: tuple(v.strip() for v in s.split(",")),
        ("em_simul", "em_plugin", "oracle"),
    )
    seed = pick(args.seed, "seed", int, 0)
    stream = pick(args.stream, "stream", int, 0)
    beta_norm = pick(args.beta_norm, "beta_norm", float, 1.0)

    try:
        spec = GridSpec(
            n=n,
            d=d,
            sigma_list=sigmas,
            alpha_list=alphas,
            master_seed=RngSeed(seed, stream),
            reps=reps,
            estimators=estimators,
            beta_norm=beta_norm,
        )
    except ValueError as exc:
        raise DataError(f"invalid grid: {exc}") from exc
    results = run_grid(spec)
    header = ["sigma", "alpha", "estimator", "metric",
              "median", "bootstrap_se", "outlier_fraction", "n_failed"]
    rows = []
    for (sigma, alpha, est, metric) in sorted(results, key=lambda t: (t[0], t[1], t[2], t[3])):
        s = results[(sigma, alpha, est, metric)]
        rows.append([sigma, alpha, est, metric,
                     s.median, s.bootstrap_se, s.outlier_fraction, s.n_failed])
    _write_rows(args.out, header, rows)
    return EXIT_OK


def _cmd_loss_table(args) -> int:
    gammas = _parse_floats(args.gammas)
    bs = _parse_floats(args.bs)
    if not gammas or not bs:
        raise DataError("--gammas and --bs must be non-empty")
    z = np.linspace(0.0, args.z_max, args.points)
    pairs = list(product(gammas, bs))
    table = loss_table(z, pairs)
    rows = []
    for (gamma, b), curve in zip(pairs, table):
        for zi, vi in zip(z, curve):
            rows.append([float(zi), float(gamma), float(b), float(vi)])
    _write_rows(args.out, ["z", "gamma", "b", "loss_rescaled"], rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="shufflereg",
        description="Linear regression with partially mismatched predictor-response pairs.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a simulated dataset (data.csv + truth.json)")
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--d", type=int, required=True)
    sim.add_argument("--sigma", type=float, required=True, help="noise standard deviation")
    sim.add_argument("--k", type=int, help="number of mismatched indices")
    sim.add_argument("--alpha", type=float, help="mismatch fraction (alternative to --k)")
    sim.add_argument("--beta-norm", type=float, default=1.0)
    sim.add_argument("--bernoulli", action="store_true",
                     help="draw mismatch indicators independently instead of exactly k")
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--stream", type=int, default=0)
    sim.add_argument("--out-dir", required=True)
    sim.set_defaults(func=_cmd_simulate)

    fit = sub.add_parser("fit", help="fit one estimator to a CSV dataset")
    fit.add_argument("--input", required=True)
    fit.add_argument("--variant", required=True, choices=FIT_VARIANTS)
    fit.add_argument("--response", default="y")
    fit.add_argument("--predictors", help="comma-separated predictor columns (default: all others)")
    fit.add_argument("--sigma", type=float, help="known noise sd (rescaled, em_known)")
    fit.add_argument("--beta-norm", type=float, help="known coefficient norm (em_known)")
    fit.add_argument("--alpha", type=float, help="known mismatch fraction (lahiri_larsen)")
    fit.add_argument("--alpha0", type=float, default=0.5, help="initial mismatch fraction (EM)")
    fit.add_argument("--truth", help="truth.json with the true permutation (oracle)")
    fit.add_argument("--max-iter", type=int, default=500)
    fit.add_argument("--tol", type=float, default=1e-8)
    fit.add_argument("--level", type=float, default=0.95)
    fit.add_argument("--no-se", action="store_true", help="skip sandwich standard errors")
    fit.add_argument("--out")
    fit.set_defaults(func=_cmd_fit)

    tst = sub.add_parser("test", help="test for the presence of mismatches")
    tst.add_argument("--input", required=True)
    tst.add_argument("--response", default="y")
    tst.add_argument("--predictors")
    sigma_group = tst.add_mutually_exclusive_group(required=True)
    sigma_group.add_argument("--sigma", type=float, help="known noise standard deviation")
    sigma_group.add_argument("--estimate-sigma", action="store_true",
                             help="use the plug-in EM noise estimate (approximate level)")
    tst.add_argument("--B", type=int, default=999, help="Monte-Carlo replicates")
    tst.add_argument("--levels", default="0.05")
    tst.add_argument("--seed", type=int, required=True)
    tst.add_argument("--stream", type=int, default=0)
    tst.add_argument("--out")
    tst.set_defaults(func=_cmd_test)

    ben = sub.add_parser("bench", help="run the simulation benchmark grid")
    ben.add_argument("--config", help="key=value file (keys: n,d,sigmas,alphas,reps,estimators,seed,stream,beta_norm)")
    ben.add_argument("--n", type=int)
    ben.add_argument("--d", type=int)
    ben.add_argument("--sigmas", help="comma-separated noise sds")
    ben.add_argument("--alphas", help="comma-separated mismatch fractions")
    ben.add_argument("--reps", type=int)
    ben.add_argument("--estimators", help="comma-separated estimator ids")
    ben.add_argument("--seed", type=int)
    ben.add_argument("--stream", type=int)
    ben.add_argument("--beta-norm", type=float)
    ben.add_argument("--out")
    ben.set_defaults(func=_cmd_bench)

    lt = sub.add_parser("loss-table", help="rescaled robust-loss curves for plotting")
    lt.add_argument("--gammas", default="0.001,0.01,0.1,1")
    lt.add_argument("--bs", default="0,1,2")
    lt.add_argument("--z-max", type=float, default=6.0)
    lt.add_argument("--points", type=int, default=121)
    lt.add_argument("--out")
    lt.set_defaults(func=_cmd_loss_table)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ShuffleRegError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
