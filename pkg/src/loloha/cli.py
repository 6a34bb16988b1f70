"""Command-line front end.

Every subcommand writes plot-ready CSV. Options can also come from a JSON
config file (``--config``) whose keys are the long option names with
dashes replaced by underscores; options given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .analysis import (
    VarianceInput,
    canonical_protocol,
    channel_params,
    check_optimal_g,
    dbit_approx_variance,
    exact_variance,
    resolve_g,
)
from .errors import ParameterError, ParseError
from .harness.data import gen_syn, write_sequences
from .harness.experiment import (
    ExperimentConfig,
    PermutedSpec,
    SynSpec,
    data_rng,
    load_dataset,
    run_experiment,
)
from .longitudinal import PrivacyBudget

METRICS_COLUMNS = ["point", "protocol", "eps_inf", "alpha", "g", "mse_avg", "mse_std",
                   "eps_avg", "attack_rate", "comparable", "status", "note"]
VARIANCE_COLUMNS = ["protocol", "eps_inf", "alpha", "n", "g", "variance"]
OPTIMAL_G_COLUMNS = ["eps_inf", "alpha", "g_formula", "g_brute", "g_continuous", "status"]
ATTACK_COLUMNS = ["eps_inf", "d", "b", "attack_rate"]

# defaults applied after the config file and the command line are merged
DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "runs": 1,
    "syn": False,
    "n": 10000,
    "k": 100,
    "tau": 10,
    "p_ch": 0.25,
    "protocol": ["biloloha", "ololoha", "losue", "rappor"],
    "eps_inf": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0],
    "alpha": [0.5],
    "eps_1": None,
    "g": None,
    "b": None,
    "d": [1],
    "f": 0.0,
    "g_max": 500,
    "data": None,
    "permuted": None,
    "include_unchanged": False,
}

SCHEMAS = f"""
output files:
  gen-data   sequence CSV: user_id,t,value (one row per user and step)
  run        OUT/metrics.csv: {','.join(METRICS_COLUMNS)}
             OUT/metrics.json: one document per grid point (config echo,
               seed, g, mse_avg, eps_avg, attack_rate and per-run arrays)
             OUT/estimates/point-NNN.csv: run,t,value,f_true,f_hat
  variance   {','.join(VARIANCE_COLUMNS)}
  optimal-g  {','.join(OPTIMAL_G_COLUMNS)}
  attack     {','.join(ATTACK_COLUMNS)}

grids: list values separated by spaces or commas; START:STOP:STEP expands to
an inclusive arithmetic range (e.g. 0.5:5:0.5).
"""


def parse_grid(tokens, kind=float) -> list:
    """Expand grid tokens such as ``['0.5:2:0.5', '3']`` into a value list."""
    if tokens is None:
        return None
    if isinstance(tokens, (int, float)):
        tokens = [tokens]
    if isinstance(tokens, str):
        tokens = [tokens]
    out = []
    for token in tokens:
        if not isinstance(token, str):
            out.append(kind(token))
            continue
        for part in token.split(","):
            part = part.strip()
            if not part:
                continue
            if ":" in part:
                try:
                    start, stop, step = (float(x) for x in part.split(":"))
                except ValueError:
                    raise ParameterError(f"bad range {part!r}; expected START:STOP:STEP") from None
                if step <= 0:
                    raise ParameterError(f"range step must be positive in {part!r}")
                count = int(math.floor((stop - start) / step + 1e-9)) + 1
                out.extend(kind(round(start + i * step, 10)) for i in range(count))
            else:
                try:
                    out.append(kind(part))
                except ValueError:
                    raise ParameterError(f"bad grid value {part!r}") from None
    return out


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def _pool_map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


# --- argument parsing -------------------------------------------------------


def _add_common(p, runs=True):
    p.add_argument("--config", help="JSON file of option values; command-line flags win")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--workers", type=int, help="worker processes (default 1); never changes results")
    if runs:
        p.add_argument("--runs", type=int, help="repetitions averaged per grid point (default 1)")


def _add_budget(p):
    p.add_argument("--eps-inf", nargs="*", help="longitudinal budget grid (default 0.5:5:0.5)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--alpha", nargs="*", help="eps_1 / eps_inf grid in (0, 1) (default 0.5)")
    group.add_argument("--eps-1", nargs="*", help="first-report budget grid, used instead of --alpha")


def _add_data(p):
    p.add_argument("--data", help="long-format sequence file (user_id,t,value)")
    p.add_argument("--permuted", help="CSV with a 'value' column, shuffled independently per step")
    p.add_argument("--syn", action="store_true", default=None,
                   help="generate Syn data inline (the default when no file is given)")
    p.add_argument("--n", type=int, help="users for --syn (default 10000)")
    p.add_argument("--k", type=int, help="domain size for --syn (default 100)")
    p.add_argument("--tau", type=int, help="time steps for --syn/--permuted (default 10)")
    p.add_argument("--p-ch", type=float, help="per-step change probability for --syn (default 0.25)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loloha",
        description="Longitudinal LDP frequency estimation experiments.",
        epilog=SCHEMAS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic sequence file", epilog=SCHEMAS,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_common(p, runs=False)
    _add_data(p)
    p.add_argument("--out", help="output sequence file")

    p = sub.add_parser("run", help="simulate protocols over a (protocol x eps_inf x alpha) grid",
                       epilog=SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_common(p)
    _add_budget(p)
    _add_data(p)
    p.add_argument("--protocol", nargs="*",
                   help="protocols: biloloha ololoha loloha rappor lsue losue lgrr dbitflippm")
    p.add_argument("--g", type=int, help="hash range for plain loloha")
    p.add_argument("--b", type=int, help="buckets for dbitflippm (default k)")
    p.add_argument("--d", nargs="*", help="sampled buckets for dbitflippm (default 1)")
    p.add_argument("--include-unchanged", action="store_true", default=None,
                   help="count users without bucket changes as attacked")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("variance", help="approximate or exact variance over a grid",
                       epilog=SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_common(p, runs=False)
    _add_budget(p)
    p.add_argument("--protocol", nargs="*", help="protocols (default biloloha ololoha losue rappor)")
    p.add_argument("--n", type=int, help="number of users (default 10000)")
    p.add_argument("--k", type=int, help="domain size (default 100)")
    p.add_argument("--g", type=int, help="hash range for plain loloha")
    p.add_argument("--b", type=int, help="buckets for dbitflippm (default k)")
    p.add_argument("--d", nargs="*", help="sampled buckets for dbitflippm (default 1)")
    p.add_argument("--f", type=float, help="true frequency for the exact variance (default 0)")
    p.add_argument("--out", help="output CSV")

    p = sub.add_parser("optimal-g", help="closed-form versus brute-force optimal g",
                       epilog=SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_common(p, runs=False)
    p.add_argument("--eps-inf", nargs="*", help="default 0.5:5:0.5")
    p.add_argument("--alpha", nargs="*", help="default 0.1:0.6:0.1")
    p.add_argument("--g-max", type=int, help="brute-force search limit (default 500)")
    p.add_argument("--out", help="output CSV")

    p = sub.add_parser("attack", help="dBitFlipPM change-detection attack over (eps_inf x d)",
                       epilog=SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_common(p)
    p.add_argument("--eps-inf", nargs="*", help="default 0.5:5:0.5")
    _add_data(p)
    p.add_argument("--b", type=int, help="buckets (default k)")
    p.add_argument("--d", nargs="*", help="sampled buckets grid (default 1)")
    p.add_argument("--include-unchanged", action="store_true", default=None,
                   help="count users without bucket changes as attacked")
    p.add_argument("--out", help="output CSV")
    return parser


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags (in that order)."""
    opts = dict(DEFAULTS)
    if args.command == "optimal-g":
        opts["eps_inf"] = "0.5:5:0.5"
        opts["alpha"] = "0.1:0.6:0.1"
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ParameterError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc.msg}", line=exc.lineno) from None
        if not isinstance(loaded, dict):
            raise ParameterError("config file must hold a JSON object")
        known = set(vars(args))
        for key, value in loaded.items():
            key = key.replace("-", "_")
            if key not in known or key in ("command", "config"):
                raise ParameterError(f"unknown config key {key!r} for {args.command}")
            opts[key] = value
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config"):
            opts[key] = value
    if getattr(args, "alpha", None) is not None:
        opts["eps_1"] = None
    elif getattr(args, "eps_1", None) is not None:
        opts["alpha"] = None
    for key in ("eps_inf", "alpha", "eps_1"):
        opts[key] = parse_grid(opts.get(key))
    opts["d"] = parse_grid(opts.get("d"), int)
    if isinstance(opts.get("protocol"), str):
        opts["protocol"] = [opts["protocol"]]
    if opts.get("protocol") is not None:
        opts["protocol"] = [name for token in opts["protocol"] for name in token.split(",") if name]
    if opts["workers"] < 1:
        raise ParameterError("--workers must be at least 1")
    if opts.get("runs", 1) < 1:
        raise ParameterError("--runs must be at least 1")
    return opts


def _budget_points(opts):
    """(eps_inf, alpha) pairs in grid order; alpha may come from --eps-1."""
    points = []
    for eps_inf in opts["eps_inf"]:
        if opts.get("eps_1") is not None:
            points.extend((eps_inf, eps_1 / eps_inf) for eps_1 in opts["eps_1"])
        else:
            points.extend((eps_inf, alpha) for alpha in opts["alpha"])
    return points


def _data_source(opts):
    if opts.get("data") and opts.get("permuted"):
        raise ParameterError("give --data or --permuted, not both")
    if opts.get("data"):
        if not os.path.isfile(opts["data"]):
            raise ParameterError(f"data file {opts['data']} does not exist")
        return opts["data"]
    if opts.get("permuted"):
        if not os.path.isfile(opts["permuted"]):
            raise ParameterError(f"base file {opts['permuted']} does not exist")
        return PermutedSpec(opts["permuted"], int(opts["tau"]))
    if not 0 <= opts["p_ch"] <= 1:
        raise ParameterError(f"--p-ch must lie in [0, 1], got {opts['p_ch']}")
    return SynSpec(int(opts["n"]), int(opts["k"]), int(opts["tau"]), float(opts["p_ch"]))


def _check_out_file(path):
    if not path:
        raise ParameterError("--out is required")
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
        raise ParameterError(f"cannot write to {path}: directory missing or not writable")
    if os.path.isdir(path):
        raise ParameterError(f"{path} is a directory")


def _check_out_dir(path):
    if not path:
        raise ParameterError("--out is required")
    if os.path.exists(path) and not os.path.isdir(path):
        raise ParameterError(f"{path} exists and is not a directory")
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(path) and not (os.path.isdir(parent) and os.access(parent, os.W_OK)):
        raise ParameterError(f"cannot create output directory {path}")


# --- subcommands -------------------------------------------------------------


def cmd_gen_data(opts) -> int:
    _check_out_file(opts.get("out"))
    source = _data_source(opts)
    if not isinstance(source, SynSpec):
        seqs = load_dataset(source, opts["seed"])
    else:
        seqs = gen_syn(source.n, source.k, source.tau, source.p_ch, data_rng(opts["seed"]))
    write_sequences(seqs, opts["out"])
    print(f"wrote {opts['out']}: n={seqs.n} k={seqs.k} tau={seqs.tau} "
          f"change_rate={seqs.change_fraction():.4f}")
    return 0


def _run_point(point, opts, seqs, out_dir):
    index, protocol, eps_inf, alpha, d = point
    row = {"point": index, "protocol": protocol, "eps_inf": eps_inf, "alpha": alpha}
    try:
        config = ExperimentConfig(
            protocol, eps_inf, alpha, runs=opts["runs"], seed=opts["seed"], g=opts.get("g"),
            b=opts.get("b"), d=d, data=seqs,
            attack_exclude_unchanged=not opts.get("include_unchanged"),
        )
        result = run_experiment(config, workers=opts["workers"])
    except ParameterError as exc:
        row.update(status="infeasible", note=str(exc))
        return row, None
    m = result.metrics
    row.update(g=result.g, mse_avg=m.mse_avg, mse_std=float(np.std(m.mse_runs)),
               eps_avg=m.eps_avg, attack_rate=m.attack_rate, comparable=m.comparable,
               status="ok", note="" if d is None else f"d={d}")
    result.write_estimates(os.path.join(out_dir, "estimates", f"point-{index:03d}.csv"))
    doc = result.metrics_document()
    doc["config"]["data"] = _describe_data(opts)
    return row, doc


def _describe_data(opts):
    if opts.get("data"):
        return {"kind": "file", "path": opts["data"]}
    if opts.get("permuted"):
        return {"kind": "PermutedSpec", "path": opts["permuted"], "tau": opts["tau"]}
    return {"kind": "SynSpec", "n": opts["n"], "k": opts["k"], "tau": opts["tau"], "p_ch": opts["p_ch"]}


def cmd_run(opts) -> int:
    out_dir = opts.get("out")
    _check_out_dir(out_dir)
    protocols = [canonical_protocol(name) for name in opts["protocol"]]
    seqs = load_dataset(_data_source(opts), opts["seed"])
    os.makedirs(os.path.join(out_dir, "estimates"), exist_ok=True)

    points = []
    for protocol in protocols:
        for eps_inf, alpha in _budget_points(opts):
            ds = opts["d"] if protocol == "dbitflippm" else [None]
            for d in ds:
                points.append((len(points) + 1, protocol, eps_inf, alpha, d))

    rows, docs = [], []
    for point in points:
        row, doc = _run_point(point, opts, seqs, out_dir)
        rows.append(row)
        docs.append(doc if doc is not None else {"point": row["point"], "protocol": row["protocol"],
                                                 "eps_inf": row["eps_inf"], "alpha": row["alpha"],
                                                 "status": row["status"], "note": row["note"]})
        if row["status"] != "ok":
            print(f"point {row['point']} ({row['protocol']}, eps_inf={row['eps_inf']}, "
                  f"alpha={row['alpha']}): {row['status']}: {row['note']}", file=sys.stderr)
        elif row["protocol"] == "ololoha":
            print(f"point {row['point']}: ololoha eps_inf={row['eps_inf']} alpha={row['alpha']} uses g={row['g']}")
    _write_csv(os.path.join(out_dir, "metrics.csv"), METRICS_COLUMNS,
               [[row.get(col) for col in METRICS_COLUMNS] for row in rows])
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        json.dump(docs, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(rows)} metric rows to {out_dir}")
    return 0


def _variance_row(task):
    protocol, eps_inf, alpha, opts = task
    k, n = opts["k"], opts["n"]
    if protocol == "dbitflippm":
        b = opts.get("b") or k
        return [[protocol, eps_inf, alpha, n, None, dbit_approx_variance(b, d, n, eps_inf)]
                for d in opts["d"]]
    budget = PrivacyBudget.from_alpha(eps_inf, alpha)
    g = resolve_g(protocol, budget, opts.get("g")) if "loloha" in protocol else None
    prm = channel_params(protocol, budget, k=k, g=g)
    var = exact_variance(VarianceInput(prm.p1, prm.q1, prm.p2, prm.q2, n, opts["f"]))
    return [[protocol, eps_inf, alpha, n, g, var]]


def _safe_variance_row(task):
    try:
        return _variance_row(task), None
    except (ParameterError, ValueError, OverflowError, ZeroDivisionError) as exc:
        protocol, eps_inf, alpha, _ = task
        return [], f"skipped {protocol} eps_inf={eps_inf} alpha={alpha}: {exc}"


def cmd_variance(opts) -> int:
    _check_out_file(opts.get("out"))
    protocols = [canonical_protocol(name) for name in opts["protocol"]]
    tasks = [(protocol, eps_inf, alpha, opts)
             for protocol in protocols for eps_inf, alpha in _budget_points(opts)]
    rows = []
    for produced, note in _pool_map(_safe_variance_row, tasks, opts["workers"]):
        rows.extend(produced)
        if note:
            print(note, file=sys.stderr)
    _write_csv(opts["out"], VARIANCE_COLUMNS, rows)
    print(f"wrote {len(rows)} variance rows to {opts['out']}")
    return 0


def _optimal_g_row(task):
    eps_inf, alpha, g_max = task
    try:
        chk = check_optimal_g(eps_inf, alpha, g_max)
    except ParameterError as exc:
        return [eps_inf, alpha, None, None, None, f"infeasible: {exc}"]
    return [eps_inf, alpha, chk.g_formula, chk.g_brute, chk.g_continuous, chk.status]


def cmd_optimal_g(opts) -> int:
    _check_out_file(opts.get("out"))
    tasks = [(eps_inf, alpha, opts["g_max"]) for eps_inf in opts["eps_inf"] for alpha in opts["alpha"]]
    rows = _pool_map(_optimal_g_row, tasks, opts["workers"])
    _write_csv(opts["out"], OPTIMAL_G_COLUMNS, rows)
    flagged = sum(1 for row in rows if row[-1] != "match")
    print(f"wrote {len(rows)} rows to {opts['out']} ({flagged} flagged)")
    return 0


def cmd_attack(opts) -> int:
    _check_out_file(opts.get("out"))
    seqs = load_dataset(_data_source(opts), opts["seed"])
    b = opts.get("b") or seqs.k
    rows = []
    for eps_inf in opts["eps_inf"]:
        for d in opts["d"]:
            try:
                config = ExperimentConfig(
                    "dbitflippm", eps_inf, 0.5, runs=opts["runs"], seed=opts["seed"], b=b, d=d,
                    data=seqs, attack_exclude_unchanged=not opts.get("include_unchanged"),
                )
                result = run_experiment(config, workers=opts["workers"])
            except ParameterError as exc:
                print(f"skipped eps_inf={eps_inf} d={d}: {exc}", file=sys.stderr)
                rows.append([eps_inf, d, b, None])
                continue
            rows.append([eps_inf, d, b, result.metrics.attack_rate])
    _write_csv(opts["out"], ATTACK_COLUMNS, rows)
    print(f"wrote {len(rows)} attack rows to {opts['out']}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "run": cmd_run,
    "variance": cmd_variance,
    "optimal-g": cmd_optimal_g,
    "attack": cmd_attack,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args)
        if args.command == "gen-data" and not 0 <= opts["p_ch"] <= 1:
            parser.error(f"--p-ch must lie in [0, 1], got {opts['p_ch']}")
        return COMMANDS[args.command](opts)
    except (ParameterError, ParseError) as exc:
        print(f"loloha {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"loloha {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
