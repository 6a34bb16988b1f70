"""Acceptance checks, one per criterion, each printing a single PASS/FAIL line.

Run with pytest, or directly with ``python tests/test_acceptance.py``.
"""

import math
import os
import subprocess
import sys
import tempfile

import numpy as np
import pytest

from loloha.analysis import (
    check_optimal_g,
    losue_closed_form_variance,
    optimal_g,
    protocol_approx_variance,
    utility_bound,
)
from loloha.core import (
    CountVector,
    estimate_pure,
    grr_channel,
    grr_params,
    hash_sample,
    ue_params,
)
from loloha.harness import ExperimentConfig, SynSpec, UserSequences, gen_syn, run_experiment
from loloha.harness.experiment import data_rng
from loloha.longitudinal import LolohaClient, PrivacyBudget, max_likelihood_ratio
from loloha.server import (
    dbit_estimate_counts,
    estimate_longitudinal,
    expected_counts,
    lgrr_params,
    loloha_params,
    losue_params,
    lsue_params,
)

# Grid points whose continuous optimum lies within 0.03 of a half
# integer, where rounding and the integer argmin legitimately differ by one
ROUNDING_BOUNDARY = {(2.0, 0.4), (3.0, 0.2), (3.0, 0.4), (4.5, 0.1)}

GRID_EPS = [0.5 * i for i in range(1, 11)]
GRID_ALPHA = [round(0.1 * i, 1) for i in range(1, 7)]


def _report(number, title, passed, detail):
    line = f"criterion {number} [{title}]: {'PASS' if passed else 'FAIL'} - {detail}"
    return passed, line


# --- 1 -----------------------------------------------------------------------

def criterion_1():
    failures = []
    for k in range(2, 7):
        eps = 0.5 + 0.25 * k
        ratio = max_likelihood_ratio(grr_channel(grr_params(eps, k)))
        if abs(ratio - math.exp(eps)) > 1e-9 * math.exp(eps):
            failures.append(f"GRR k={k}: {ratio:.12g} vs {math.exp(eps):.12g}")
    budget = PrivacyBudget(2.0, 0.8)
    rng = np.random.default_rng(1)
    for g in range(2, 6):
        h = hash_sample(60, g, rng)
        while len(set(h(np.arange(1, 61)).tolist())) < 2:
            h = hash_sample(60, g, rng)
        client = LolohaClient(h, budget)
        prr = max_likelihood_ratio(client.prr_distribution())
        if abs(prr - math.exp(budget.eps_inf)) > 1e-9 * math.exp(budget.eps_inf):
            failures.append(f"PRR g={g}: {prr:.12g} vs e^eps_inf={math.exp(budget.eps_inf):.12g}")
        full = max_likelihood_ratio(client.report_distribution())
        if abs(full - math.exp(budget.eps_1)) > 1e-9 * math.exp(budget.eps_1):
            failures.append(f"PRR+IRR g={g}: {full:.12g} vs e^eps_1={math.exp(budget.eps_1):.12g}")
    detail = "all ratios equal e^eps within 1e-9" if not failures else "; ".join(failures)
    return _report(1, "exact LDP ratios", not failures, detail)


# --- 2 -----------------------------------------------------------------------

def criterion_2():
    problems, boundary = [], set()
    for eps in GRID_EPS:
        for alpha in GRID_ALPHA:
            chk = check_optimal_g(eps, alpha, g_max=500)
            if chk.status == "rounding-boundary":
                boundary.add((eps, alpha))
            elif chk.status != "match":
                problems.append(f"({eps}, {alpha}): formula {chk.g_formula} vs brute {chk.g_brute}")
            if eps <= 1 and alpha <= 0.3 and chk.g_formula != 2:
                problems.append(f"({eps}, {alpha}): g={chk.g_formula}, expected 2")
    undocumented = boundary - ROUNDING_BOUNDARY
    if undocumented:
        problems.append(f"undocumented ties {sorted(undocumented)}")
    detail = (f"60 points, {60 - len(boundary)} exact matches, documented ties {sorted(boundary)}"
              if not problems else "; ".join(problems))
    return _report(2, "optimal-g oracle match", not problems, detail)


# --- 3 -----------------------------------------------------------------------

def _uniform_sequences(n, k):
    return UserSequences(np.repeat(np.arange(1, k + 1), n // k)[:, None], k)


def criterion_3():
    n, k, eps_inf, alpha, runs = 10_000, 50, 2.0, 0.5, 20
    data = _uniform_sequences(n, k)
    notes, ok = [], True
    for protocol in ("biloloha", "ololoha", "rappor", "l-osue"):
        res = run_experiment(ExperimentConfig(protocol, eps_inf, alpha, runs=runs, seed=2024), data=data)
        v_star = protocol_approx_variance(protocol, eps_inf, alpha, n, k=k)
        se = np.std(res.metrics.mse_runs, ddof=1) / math.sqrt(runs)
        z = (res.metrics.mse_avg - v_star) / se
        ok &= abs(z) <= 3
        notes.append(f"{protocol} mse={res.metrics.mse_avg:.3e} V*={v_star:.3e} z={z:+.2f}")
    closed = losue_closed_form_variance(alpha * eps_inf, n)
    v_losue = protocol_approx_variance("l-osue", eps_inf, alpha, n, k=k)
    rel = abs(v_losue - closed) / closed
    ok &= rel <= 1e-9
    notes.append(f"L-OSUE closed-form rel diff {rel:.1e}")
    return _report(3, "variance calibration", ok, "; ".join(notes))


# --- 4 -----------------------------------------------------------------------

def criterion_4():
    n, eps_inf, alpha = 10_000, 5.0, 0.6
    v = {p: protocol_approx_variance(p, eps_inf, alpha, n, k=100)
         for p in ("ololoha", "biloloha", "l-osue", "rappor")}
    checks = {
        "V(OLOLOHA) <= 1.05 V(L-OSUE)": v["ololoha"] <= 1.05 * v["l-osue"],
        "V(BiLOLOHA) > V(OLOLOHA)": v["biloloha"] > v["ololoha"],
        "V(RAPPOR) > V(L-OSUE)": v["rappor"] > v["l-osue"],
    }
    failed = [name for name, good in checks.items() if not good]
    detail = (f"g={optimal_g(eps_inf, alpha)} V(OLOLOHA)={v['ololoha']:.4e} V(L-OSUE)={v['l-osue']:.4e} "
              f"ratio={v['ololoha'] / v['l-osue']:.4f} V(BiLOLOHA)={v['biloloha']:.4e} "
              f"V(RAPPOR)={v['rappor']:.4e}")
    if failed:
        detail += "; failed: " + ", ".join(failed)
    return _report(4, "variance ordering at low privacy", not failed, detail)


# --- 5 and 6 ------------------------------------------------------------------

SYN = dict(n=2000, k=120, tau=60, p_ch=0.25)


def _syn_data(seed=5):
    return gen_syn(SYN["n"], SYN["k"], SYN["tau"], SYN["p_ch"], data_rng(seed))


def criterion_5():
    data = _syn_data()
    bi = run_experiment(ExperimentConfig("biloloha", 1.0, 0.5, seed=5), data=data).metrics.eps_avg
    rappor = run_experiment(ExperimentConfig("rappor", 1.0, 0.5, seed=5), data=data).metrics.eps_avg
    distinct = float(data.distinct_per_user().mean())
    ok = bi <= 2.0 and abs(rappor - 1.0 * distinct) <= 1e-12 and rappor / bi >= 5
    detail = (f"eps_avg BiLOLOHA={bi:.4f} RAPPOR={rappor:.4f} "
              f"eps_inf*mean distinct={distinct:.4f} ratio={rappor / bi:.2f}")
    return _report(5, "privacy-loss contrast", ok, detail)


def criterion_6():
    data = _syn_data()
    k = SYN["k"]
    ok, notes = True, []
    for eps in (0.5, 2.0, 5.0):
        for d in (k, 1):
            m = run_experiment(ExperimentConfig("dbitflippm", eps, 0.5, b=k, d=d, seed=6), data=data).metrics
            good = m.attack_rate >= 0.99 if d == k else m.attack_rate <= 0.01
            good &= m.false_positives == 0
            ok &= good
            notes.append(f"eps={eps} d={d}: rate={m.attack_rate:.4f} fp={m.false_positives}")
    return _report(6, "attack contrast", ok, "; ".join(notes))


# --- 7 -----------------------------------------------------------------------

def criterion_7():
    worst = 0.0
    rng = np.random.default_rng(7)
    for eps_inf in (0.5, 1.0, 2.5, 5.0):
        for alpha in (0.1, 0.5, 0.9):
            budget = PrivacyBudget.from_alpha(eps_inf, alpha)
            for k in (2, 5, 40):
                f = rng.dirichlet(np.ones(k))
                params = [lsue_params(k, budget), losue_params(k, budget), lgrr_params(k, budget)]
                params += [loloha_params(g, budget) for g in (2, 3, optimal_g(eps_inf, alpha))]
                for prm in params:
                    est = estimate_longitudinal(CountVector(expected_counts(f, 1000, prm), 1000), prm)
                    worst = max(worst, float(np.max(np.abs(est - f))))
                for one in (grr_params(eps_inf, k), ue_params(eps_inf, k, "symmetric"), ue_params(eps_inf, k, "optimal")):
                    counts = 1000 * (f * one.p + (1 - f) * one.q)
                    worst = max(worst, float(np.max(np.abs(estimate_pure(CountVector(counts, 1000), one.p, one.q) - f))))
                for d in sorted({1, k}):
                    prm = ue_params(eps_inf, k)
                    counts = 1000 * d / k * (f * prm.p + (1 - f) * prm.q)
                    est = dbit_estimate_counts(counts[None, :], 1000, k, d, eps_inf).values[0]
                    worst = max(worst, float(np.max(np.abs(est - f))))
    sum_gap = 0.0
    for _ in range(500):
        k = int(rng.integers(2, 60))
        counts = rng.multinomial(int(rng.integers(1, 5000)), np.ones(k) / k)
        prm = grr_params(float(rng.uniform(0.05, 8)), k)
        est = estimate_pure(CountVector(counts, int(counts.sum())), prm.p, prm.q)
        sum_gap = max(sum_gap, abs(est.sum() - 1))
    ok = worst <= 1e-9 and sum_gap <= 1e-9
    return _report(7, "unbiasedness identities", ok,
                   f"max plug-in error {worst:.1e}; max |sum GRR estimate - 1| {sum_gap:.1e}")


# --- 8 -----------------------------------------------------------------------

def criterion_8():
    n, k, g, eps_inf, alpha, beta, runs = 10_000, 20, 2, 1.0, 0.5, 0.1, 200
    cfg = ExperimentConfig("loloha", eps_inf, alpha, g=g, runs=runs, seed=8, data=SynSpec(n, k, 1, 0.0))
    res = run_experiment(cfg)
    prm = loloha_params(g, cfg.budget)
    bound = utility_bound(n, k, beta, prm.p1, prm.q1, prm.p2, prm.q2)
    exceed = sum(float(np.max(np.abs(est.values - res.truth))) > bound for est in res.estimates)
    limit = beta * runs + 3 * math.sqrt(runs * beta * (1 - beta))
    return _report(8, "estimation error bound coverage", exceed <= limit,
                   f"bound={bound:.4f}, {exceed}/{runs} runs exceed it (limit {limit:.1f})")


# --- 9 -----------------------------------------------------------------------

CLI_CASES = {
    "gen-data": (["--syn", "--n", "300", "--k", "12", "--tau", "5", "--p-ch", "0.3"], "file"),
    "run": (["--protocol", "biloloha", "ololoha", "losue", "rappor", "lgrr", "dbitflippm",
             "--eps-inf", "1", "4", "--alpha", "0.5", "--n", "600", "--k", "10", "--tau", "3",
             "--runs", "2", "--d", "1", "3"], "dir"),
    "variance": (["--protocol", "biloloha", "ololoha", "losue", "rappor", "dbitflippm",
                  "--eps-inf", "0.5:5:0.5", "--alpha", "0.4", "0.6"], "file"),
    "optimal-g": ([], "file"),
    "attack": (["--eps-inf", "0.5", "5", "--d", "1", "12", "--n", "400", "--k", "12", "--tau", "8"], "file"),
}


def _snapshot(path):
    if os.path.isfile(path):
        with open(path, "rb") as fh:
            return {"": fh.read()}
    out = {}
    for root, _, files in os.walk(path):
        for name in files:
            full = os.path.join(root, name)
            with open(full, "rb") as fh:
                out[os.path.relpath(full, path)] = fh.read()
    return out


def criterion_9():
    differing = []
    with tempfile.TemporaryDirectory() as tmp:
        for command, (args, _) in CLI_CASES.items():
            snaps = []
            for workers in (1, 3):
                out = os.path.join(tmp, f"{command}-{workers}")
                cmd = [sys.executable, "-m", "loloha.cli", command, *args,
                       "--seed", "17", "--workers", str(workers), "--out", out]
                proc = subprocess.run(cmd, capture_output=True, text=True)
                if proc.returncode != 0:
                    differing.append(f"{command} exit {proc.returncode}: {proc.stderr.strip()}")
                    break
                snaps.append(_snapshot(out))
            if len(snaps) == 2 and snaps[0] != snaps[1]:
                differing.append(f"{command} output differs")
    detail = "all five subcommands byte-identical for --workers 1 and 3" if not differing else "; ".join(differing)
    return _report(9, "determinism", not differing, detail)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 10)])
def test_acceptance(criterion, capsys):
    passed, line = criterion()
    with capsys.disabled():
        print("\n" + line)
    assert passed, line


if __name__ == "__main__":
    results = [criterion() for criterion in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(passed for passed, _ in results) else 1)
