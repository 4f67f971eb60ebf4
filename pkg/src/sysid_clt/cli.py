"""Command-line entry point.

Every subcommand builds a problem instance (from ``--preset`` or a JSON
``--config``), calls one library operation with the given seed, writes an
optional CSV table to ``--out`` and prints a JSON summary to stdout.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 invariant
violation under ``--self-check``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from typing import Any, Iterable, Sequence

import numpy as np

from . import diagnostics as dg
from .bounds import AsymptoticRegime, BoundConstants, PriorBoundParams, rate_report
from .errors import (
    BurnInError,
    DimensionMismatchError,
    NotStrictlyStableError,
    SingularCovarianceError,
    SingularGramError,
)
from .estimator import error_report, ols_fit
from .gramians import compute_gramians
from .model import derive_rng, simulate_batch
from .montecarlo import ExperimentConfig, Norm, clt_covariance_check, gap_demonstration, rate_sweep
from .presets import PRESETS, build_preset

__all__ = ["run", "main", "emit_csv", "read_csv", "EXIT_OK", "EXIT_USAGE", "EXIT_NUMERICAL", "EXIT_INVARIANT"]

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_INVARIANT = 0, 1, 2, 3
IDENTITY_TOL = 1e-9
GAP_COLUMNS = {
    "frob-gap": ["d", "measured", "stderr", "gamma_f", "prior_frob", "ratio_prior", "ratio_measured"],
    "op-gap": ["d", "measured", "stderr", "gamma_op", "prior_op", "ratio_prior", "ratio_measured"],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- CSV / JSON


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def emit_csv(table: Sequence[dict], path, columns: Sequence[str] | None = None) -> None:
    """Write rows as RFC-4180 CSV (UTF-8, LF endings, shortest round-trip floats).

    ``columns`` fixes the header; it defaults to the keys of the first row.
    An empty table produces a header-only file.
    """
    if columns is None:
        columns = list(table[0].keys()) if table else []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in table:
            writer.writerow([_cell(row[c]) for c in columns])


def _parse_cell(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def read_csv(path) -> list[dict]:
    """Inverse of :func:`emit_csv` for numeric and plain-text cells."""
    with open(path, encoding="utf-8", newline="") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if hasattr(obj, "value"):
        return obj.value
    return obj


def _dump(summary: dict, out_json: str | None) -> str:
    text = json.dumps(_jsonable(summary), indent=2, sort_keys=True)
    if out_json:
        with open(out_json, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
    return text


# ---------------------------------------------------------------- arguments


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p: argparse.ArgumentParser, table: bool = False):
    p.add_argument("--preset", choices=sorted(PRESETS), help="named scenario")
    p.add_argument("--config", help="JSON experiment config (explicit a, sigma_w or a preset)")
    p.add_argument("--d", type=int, help="dimension (preset default if omitted)")
    p.add_argument("--sigma", type=float, default=1.0, help="noise scale for presets")
    p.add_argument("--family", default="gaussian", help="noise family")
    p.add_argument("--m", type=int, help="trajectories per batch")
    p.add_argument("--T", type=int, help="trajectory length")
    p.add_argument("--N", type=int, help="Monte Carlo replicates")
    p.add_argument("--seed", type=int, help="master seed (OS entropy if omitted)")
    p.add_argument("--threads", type=int, help="worker threads (falls back to $SYSID_CLT_THREADS)")
    p.add_argument("--out", help="CSV output path" if table else "JSON output path")
    if table:
        p.add_argument("--summary", help="also write the JSON summary here")
    p.add_argument("--self-check", action="store_true", help="exit 3 if an invariant fails")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sysid-clt", description="Finite-sample OLS system identification experiments.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    _common(sub.add_parser("simulate", help="simulate one batch and dump states"), table=True)
    _common(sub.add_parser("fit", help="OLS fit on one batch with error norms"))
    p = sub.add_parser("rates", help="CLT targets, theorem bounds, prior bounds, burn-ins (no RNG)")
    _common(p)
    p.add_argument("--q", type=float, default=1.0)
    _common(sub.add_parser("decompose", help="second-order error decomposition on one batch"))
    p = sub.add_parser("identities", help="pathwise algebraic identity residuals on one batch")
    _common(p)
    p.add_argument("--v-count", type=int, default=20)
    p = sub.add_parser("isometry", help="isometry-error moments over an (m, T) grid")
    _common(p, table=True)
    p.add_argument("--m-grid", type=_int_list)
    p.add_argument("--T-grid", type=_int_list)
    p.add_argument("--r", type=float, default=2.0)
    p = sub.add_parser("smallball", help="trajectory small-ball probabilities")
    _common(p, table=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--eps", type=_float_list, default=[0.01, 0.05, 0.1, 0.2, 0.5])
    p = sub.add_parser("chevet", help="Gaussian sandwich operator norm against its envelope")
    _common(p, table=True)
    p.add_argument("--dims", type=_int_list, default=[4, 8, 16, 32])
    p = sub.add_parser("clt-check", help="empirical covariance of the scaled error against its limit")
    _common(p, table=True)
    p.add_argument("--regime", choices=[r.value for r in AsymptoticRegime], default=AsymptoticRegime.JOINT.value)
    p = sub.add_parser("sweep", help="risk along an m or T grid with the log-log slope")
    _common(p, table=True)
    p.add_argument("--axis", choices=["m", "T"], default="T")
    p.add_argument("--values", type=_int_list, help="grid along --axis (config m_grid/T_grid if omitted)")
    p.add_argument("--norm", choices=[n.value for n in Norm if n is not Norm.SCHATTEN_SQ],
                   help="risk norm (config norms[0], else frob)")
    p = sub.add_parser("gap", help="dimension-gap table for frob-gap or op-gap")
    _common(p, table=True)
    p.add_argument("--dims", type=_int_list, default=[8, 16, 32])
    p = sub.add_parser("burkholder", help="sides of the matrix Burkholder inequality")
    _common(p)
    return parser


def _seed(args, config: ExperimentConfig | None) -> int:
    if args.seed is not None:
        return args.seed
    if config is not None and config.seed is not None:
        return int(config.seed)
    return int(np.random.SeedSequence().entropy)


def _setup(args):
    config = ExperimentConfig.from_json(args.config) if args.config else None
    if config is not None and args.preset is None:
        instance = config.instance()
        m_def, t_def, n_def = config.m_grid[0], config.T_grid[0], config.N
    else:
        if args.preset is None:
            raise UsageError("give --preset or --config")
        instance = build_preset(args.preset, args.d, args.sigma, args.family)
        p = PRESETS[args.preset]
        m_def, t_def, n_def = p.default_m, p.default_T, 200
    m = args.m if args.m is not None else m_def
    T = args.T if args.T is not None else t_def
    N = args.N if args.N is not None else n_def
    if m < 1 or T < 1 or N < 1:
        raise UsageError("m, T and N must be positive")
    return config, instance, m, T, N, _seed(args, config)


# ---------------------------------------------------------------- subcommands


def _cmd_simulate(args, instance, m, T, N, seed, config):
    batch = simulate_batch(instance, m, T, seed)
    d = instance.d
    rows = []
    for i in range(m):
        for t in range(T + 1):
            row = {"trajectory": i + 1, "t": t + 1}
            row.update({f"x{k}": batch.states[i, t, k] for k in range(d)})
            rows.append(row)
    residual = batch.recursion_residual(instance.a)
    ok = residual <= IDENTITY_TOL
    cols = ["trajectory", "t"] + [f"x{k}" for k in range(d)]
    return rows, cols, {"recursion_residual": residual}, ok


def _cmd_fit(args, instance, m, T, N, seed, config):
    batch = simulate_batch(instance, m, T, seed)
    gram = compute_gramians(instance, T)
    rep = error_report(ols_fit(batch), instance, gram)
    summary = {
        "a_hat": rep.a_hat, "frob_sq": rep.frob_sq, "op_sq": rep.op_sq,
        "schatten": rep.schatten, "weighted_sq": rep.weighted_sq,
    }
    return None, None, summary, rep.fact_chain_ok()


def _constants(config):
    if config is None or not config.constants:
        return BoundConstants(), None
    c = dict(config.constants)
    prior_keys = {"k_psi2", "k_vec", "delta", "j_a"}
    prior = {k: c.pop(k) for k in list(c) if k in prior_keys}
    return BoundConstants(**c), (PriorBoundParams(**prior) if prior else None)


def _cmd_rates(args, instance, m, T, N, seed, config):
    gram = compute_gramians(instance, T)
    consts, prior = _constants(config)
    rep = rate_report(instance, gram, m, T, q=args.q, prior=prior, constants=consts)
    return None, None, rep.to_dict(), True


def _cmd_decompose(args, instance, m, T, N, seed, config):
    batch = simulate_batch(instance, m, T, seed)
    gram = compute_gramians(instance, T)
    rep = dg.decompose(batch, instance, gram)
    basic = {str(q): rep.basic_inequality_holds(q) for q in (0.1, 1.0, 10.0)}
    split = {str(p): rep.t2_split_holds(p) for p in rep.t2_sample}
    summary = {
        "t1": rep.t1_sample, "t2": rep.t2_sample, "total": rep.total_sample,
        "iso_error": rep.iso_error, "decomposition_residual": rep.decomposition_residual,
        "basic_inequality": basic, "t2_split": split,
    }
    ok = rep.decomposition_residual <= IDENTITY_TOL and all(basic.values()) and all(split.values())
    return None, None, summary, ok


def _cmd_identities(args, instance, m, T, N, seed, config):
    batch = simulate_batch(instance, m, T, seed)
    gram = compute_gramians(instance, T)
    qv = dg.quadratic_variation_identities(batch, instance, gram)
    rep = dg.decompose(batch, instance, gram)
    l_t = dg.block_toeplitz_matrix(instance, gram.gamma_T, T)
    vrng = derive_rng(seed, 1, 0)
    quad = []
    for _ in range(args.v_count):
        v = vrng.standard_normal(instance.d)
        v /= np.linalg.norm(v)
        quad.append(dg.block_toeplitz_quadratic_form(batch, instance, gram, v, l_t=l_t)["residual"])
    summary = dict(qv)
    summary["decomposition_residual"] = rep.decomposition_residual
    summary["quadform_residuals"] = quad
    summary["quadform_max_residual"] = max(quad) if quad else 0.0
    residuals = [qv["residual_col"], qv["residual_row"], qv["martingale_sum_residual"],
                 rep.decomposition_residual, *quad]
    return None, None, summary, max(residuals) <= IDENTITY_TOL


def _cmd_isometry(args, instance, m, T, N, seed, config):
    m_grid = args.m_grid or [m]
    t_grid = args.T_grid or [T]
    rows = dg.isometry_probe(instance, m_grid, t_grid, r=args.r, N=N, seed=seed)
    return rows, None, {"points": len(rows)}, True


def _cmd_smallball(args, instance, m, T, N, seed, config):
    rows = dg.small_ball_probe(instance, args.k, args.eps, N=max(N, 1000), seed=seed)
    return rows, None, {"k": args.k}, all(r["probability"] <= 1.0 for r in rows)


def _cmd_chevet(args, instance, m, T, N, seed, config):
    rng = derive_rng(seed, 2, 0)
    rows = []
    for g, d in enumerate(args.dims):
        a = rng.standard_normal((d, d))
        b = rng.standard_normal((d, d))
        res = dg.chevet_oracle(a, b, N=N, seed=seed + g)
        res["d"] = d
        # square Gaussian pairs sit only a few percent above the lower envelope: allow 3 stderr
        slack = 3.0 * res["stderr"]
        res["within"] = res["lower_env"] - slack <= res["mc_mean"] <= res["upper_env"] + slack
        rows.append(res)
    cols = ["d", "mc_mean", "stderr", "lower_env", "upper_env", "within"]
    return rows, cols, {"violations": sum(not r["within"] for r in rows)}, all(r["within"] for r in rows)


def _cmd_clt(args, instance, m, T, N, seed, config):
    res = clt_covariance_check(instance, args.regime, m, T, N=N, seed=seed, threads=args.threads)
    cov = res["scaled_cov"]
    rows = [{"row": i, **{f"c{j}": cov[i, j] for j in range(cov.shape[1])}} for i in range(cov.shape[0])]
    summary = {"rel_dist": res["rel_dist"], "failures": res["failures"], "regime": args.regime}
    return rows, None, summary, True


def _cmd_sweep(args, instance, m, T, N, seed, config):
    fixed = T if args.axis == "m" else m
    values = args.values
    if values is None and config is not None:
        values = config.m_grid if args.axis == "m" else config.T_grid
    if not values:
        raise UsageError("sweep needs --values or a config grid")
    norm = args.norm or (config.norms[0] if config is not None and config.norms else "frob")
    rows, slope = rate_sweep(instance, args.axis, values, fixed, norm=norm, N=N, seed=seed,
                             threads=args.threads)
    ok = all(r["measured"] >= 0 and r["stderr"] >= 0 for r in rows)
    return rows, None, {"slope": slope, "axis": args.axis, "failures": sum(r["failures"] for r in rows)}, ok


def _cmd_gap(args, instance, m, T, N, seed, config):
    preset = args.preset
    if preset not in GAP_COLUMNS:
        raise UsageError("gap needs --preset frob-gap or --preset op-gap")
    rows = gap_demonstration(preset, args.dims, T, m=m, N=N, seed=seed, threads=args.threads)
    ok = all(r["measured"] >= 0 and r["stderr"] >= 0 for r in rows)
    return rows, GAP_COLUMNS[preset], {"failures": sum(r["failures"] for r in rows)}, ok


def _cmd_burkholder(args, instance, m, T, N, seed, config):
    gram = compute_gramians(instance, T)
    res = dg.burkholder_probe(instance, gram, m, T, N=N, seed=seed)
    return None, None, res, True


COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "rates": _cmd_rates,
    "decompose": _cmd_decompose,
    "identities": _cmd_identities,
    "isometry": _cmd_isometry,
    "smallball": _cmd_smallball,
    "chevet": _cmd_chevet,
    "clt-check": _cmd_clt,
    "sweep": _cmd_sweep,
    "gap": _cmd_gap,
    "burkholder": _cmd_burkholder,
}


def run(argv: Iterable[str] | None = None, stdout=None, stderr=None) -> int:
    """Execute one subcommand and return its exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
        if args.command == "gap" and args.preset is None:
            raise UsageError("gap needs --preset frob-gap or --preset op-gap")
        if args.command == "gap":
            # instance is built per d inside the sweep; only validate the preset here
            config, m, T, N = None, args.m or 1, args.T or PRESETS[args.preset].default_T, args.N or 200
            seed, instance = _seed(args, None), None
        elif args.command == "chevet":
            # Gaussian sandwich probe: no dynamical system involved
            config, instance, m, T, N = None, None, 1, 1, args.N or 2000
            seed = _seed(args, None)
        else:
            config, instance, m, T, N, seed = _setup(args)
        rows, cols, summary, ok = COMMANDS[args.command](args, instance, m, T, N, seed, config)
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (UsageError, KeyError, DimensionMismatchError, NotStrictlyStableError, BurnInError,
            json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_USAGE
    except (SingularGramError, SingularCovarianceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_USAGE

    summary = dict(summary)
    summary.update(command=args.command, seed=seed, m=m, T=T, N=N)
    if instance is not None:
        summary["d"] = instance.d
    if args.preset:
        summary["preset"] = args.preset
    out_json = None
    if args.out is None and config is not None and config.output:
        args.out = config.output
    if rows is not None:
        if args.out:
            emit_csv(rows, args.out, cols)
            summary["csv"] = args.out
        else:
            summary["table"] = [{c: r[c] for c in (cols or r.keys())} for r in rows]
        out_json = args.summary
    else:
        out_json = args.out
    summary["self_check"] = bool(ok) if args.self_check else None
    print(_dump(summary, out_json), file=stdout)
    if args.self_check and not ok:
        print("invariant violation", file=stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def main() -> None:
    sys.exit(run())
