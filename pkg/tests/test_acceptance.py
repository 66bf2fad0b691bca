"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every tolerance is pinned here; the statistical criteria run at the stated
replicate counts under the frozen master seed.  Runtime ceilings are asserted
where the criterion states one.
"""

import math
import os
import time
from functools import partial

import numpy as np
import pytest
import yaml

from spinemc.cli import main as cli_main
from spinemc.core import ROOT, spine_probability
from spinemc.estimators import (
    ConstantOne,
    _z_value,
    _zeta_tilde_value,
    estimate_direct,
    estimate_max_positions,
    estimate_spine,
    many_to_two_closed_form,
    ones,
    run_replicates,
    survival_report,
    tail_lower_bound,
    tail_upper_bound,
)
from spinemc.laws import BranchRate, OffspringLaw
from spinemc.motion import BrownianMotion, DiscreteChain
from spinemc.reports import EstimateReport
from spinemc.sim_ct import BranchingModel, gibbs_tuple_weights, simulate_p
from spinemc.sim_dt import (
    DiscreteModel,
    gibbs_tuple_weights_dt,
    skeleton_weight_dt,
    simulate_p_dt,
)
from spinemc.verify import run_verify_discrete, split_time_ks, split_time_samples
from tests.test_sim_dt import make_skeleton

SEED = 20260810
WORKERS = 2
E = math.e
PAIR_TARGET = 2.0 * E**2 - E  # 12.059830369402254

PLAIN = BranchingModel(BrownianMotion(), BranchRate.const(1.0), OffspringLaw.binary())
TILTED = BranchingModel(
    BrownianMotion(tilt_drift=1.0), BranchRate.const(1.0), OffspringLaw.binary()
)


@pytest.fixture()
def announce(capsys):
    """Print one PASS/FAIL line per criterion on the live terminal."""

    def _announce(number: int, name: str, passed: bool, detail: str) -> None:
        line = f"ACCEPTANCE {number} {name}: {'PASS' if passed else 'FAIL'} ({detail})"
        with capsys.disabled():
            print(line, flush=True)
        assert passed, line

    return _announce


def test_criterion_1_many_to_one(announce):
    tic = time.perf_counter()
    direct = estimate_direct(PLAIN, ones(1), 1.0, 100_000, SEED, workers=WORKERS)
    spine = estimate_spine(PLAIN, ones(1), 1.0, 100_000, SEED, workers=WORKERS)
    elapsed = time.perf_counter() - tic
    ok = (
        direct.covers(E, 0.99)
        and abs(spine.estimate - E) <= 1e-12
        and spine.std_error <= 1e-12
        and elapsed < 60.0
    )
    announce(
        1, "many-to-one",
        ok,
        f"direct {direct.estimate:.5f} ci99 [{direct.ci99[0]:.5f}, {direct.ci99[1]:.5f}] "
        f"covers e; skeleton {spine.estimate!r} == e to 1e-12 with zero variance; "
        f"{elapsed:.1f}s < 60s",
    )


def test_criterion_2_many_to_two(announce):
    tic = time.perf_counter()
    closed = many_to_two_closed_form(ConstantOne(), ConstantOne(), 1.0)
    direct = estimate_direct(PLAIN, ones(2), 1.0, 100_000, SEED, workers=WORKERS)
    spine = estimate_spine(PLAIN, ones(2), 1.0, 100_000, SEED, workers=WORKERS)
    elapsed = time.perf_counter() - tic
    ok = (
        direct.covers(PAIR_TARGET, 0.99)
        and spine.covers(PAIR_TARGET, 0.99)
        and abs(closed - PAIR_TARGET) <= 1e-8 * PAIR_TARGET
        and elapsed < 300.0
    )
    announce(
        2, "many-to-two",
        ok,
        f"target {PAIR_TARGET:.6f}; direct {direct.estimate:.4f}, skeleton {spine.estimate:.4f}, "
        f"closed form off by {abs(closed - PAIR_TARGET) / PAIR_TARGET:.1e} rel; {elapsed:.1f}s < 300s",
    )


def test_criterion_3_discrete_oracle_identity(announce):
    tic = time.perf_counter()
    result = run_verify_discrete()
    elapsed = time.perf_counter() - tic

    mutated = run_verify_discrete(per_edge_m=True)
    mutated_k2_failures = [
        c for c in mutated.cases if c.k >= 2 and not c.skipped and not c.within
    ]
    # the flagship mutation case: deterministic binary, k=2, n=2, where the
    # per-edge convention weights split skeletons 64 against the true 16
    model = DiscreteModel(DiscreteChain(((1.0,),)), OffspringLaw.binary(), 2, 2)
    split_skel = make_skeleton(
        [(ROOT, 0, (0, 1), 0), ((1,), 1, (0,), 0), ((2,), 1, (1,), 0),
         ((1, 1), 2, (0,), 0), ((2, 1), 2, (1,), 0)],
        n=2, k=2,
    )
    w_good = skeleton_weight_dt(split_skel, model)
    w_bad = skeleton_weight_dt(split_skel, model, per_edge_m=True)

    ok = (
        result.passed
        and result.evaluated >= 120
        and elapsed < 120.0
        and len(mutated_k2_failures) >= 1
        and w_good == pytest.approx(16.0, rel=1e-12)
        and w_bad == pytest.approx(64.0, rel=1e-12)
    )
    worst = max((c.abs_diff / (1 + abs(c.lhs)) for c in result.cases if not c.skipped))
    announce(
        3, "discrete-oracle-identity",
        ok,
        f"{result.evaluated} cases, worst rel gap {worst:.2e} <= 1e-10; "
        f"mutation fails {len(mutated_k2_failures)} k>=2 cases, split weight 64 vs 16; "
        f"{elapsed:.1f}s < 120s",
    )


def test_criterion_4_unit_mean_weights(announce):
    failures = []
    details = []
    for tag, model in (("a", PLAIN), ("b", TILTED)):
        for k in (1, 2):
            for t in (0.25, 0.5, 1.0):
                zt_task = partial(_zeta_tilde_value, model, t, k, 10**6)
                zt = EstimateReport.from_values(
                    "zt", run_replicates(zt_task, 10_000, SEED, WORKERS), SEED
                )
                z_task = partial(_z_value, model, t, k, 10**6, 2 * 10**6)
                z = EstimateReport.from_values(
                    "z", run_replicates(z_task, 10_000, SEED, WORKERS), SEED
                )
                for pname, rep in (("mark-weight", zt), ("tree-weight", z)):
                    if not rep.covers(1.0, 0.99):
                        failures.append(
                            f"{pname}[{tag},k={k},t={t}]: {rep.estimate:.4f}+-{rep.std_error:.4f}"
                        )
    announce(
        4, "unit-mean-weights",
        not failures,
        "24/24 sample means within their 99% CIs of 1" if not failures else "; ".join(failures),
    )


def test_criterion_5_conditional_weights(announce):
    worst_sum = 0.0
    trees_used = 0
    for i in range(100):
        rng = np.random.default_rng(np.random.SeedSequence([SEED, 500 + i]))
        tree = simulate_p(TILTED, 0.6, rng, max_population=100_000)
        weights = gibbs_tuple_weights(tree, TILTED, 0.6, 2)
        assert weights, "binary branching never leaves an empty population"
        trees_used += 1
        worst_sum = max(worst_sum, abs(math.fsum(weights.values()) - 1.0))

    # trivial functional + deterministic offspring: conditional placement
    # equals the uniform-choice probabilities, tuple by tuple
    dt_model = DiscreteModel(
        DiscreteChain(((0.7, 0.3), (0.4, 0.6))), OffspringLaw.binary(), 3, 2
    )
    worst_gap = 0.0
    for i in range(100):
        rng = np.random.default_rng(np.random.SeedSequence([SEED, 900 + i]))
        tree = simulate_p_dt(dt_model, rng)
        for labels, w in gibbs_tuple_weights_dt(tree, dt_model, 2).items():
            worst_gap = max(worst_gap, abs(w - spine_probability(tree, labels, 3.0)))

    ok = trees_used == 100 and worst_sum <= 1e-10 and worst_gap <= 1e-10
    announce(
        5, "conditional-weight-normalization",
        ok,
        f"100 trees, worst |sum-1| = {worst_sum:.2e}; "
        f"worst tuple gap vs uniform placement = {worst_gap:.2e}",
    )


def test_criterion_6_split_time_law(announce):
    samples = split_time_samples(PLAIN, 10_000, SEED, workers=WORKERS)
    pvalue = split_time_ks(samples, rate=2.0)
    announce(
        6, "split-time-law",
        pvalue >= 0.01,
        f"KS p-value {pvalue:.4f} >= 0.01 against Exp(2), n={samples.size}",
    )


def test_criterion_7_bound_sandwich(announce):
    problems = []
    for t in (0.5, 1.0):
        maxima = estimate_max_positions(PLAIN, t, 100_000, SEED, workers=WORKERS)
        for x in (0.0, 1.0, 2.0):
            rep = survival_report(maxima, x, SEED)
            lower = tail_lower_bound(x, t)
            upper = min(1.0, tail_upper_bound(x, t))
            slack = 3.0 * rep.std_error
            if not (lower <= rep.estimate + slack and rep.estimate <= upper + slack):
                problems.append(
                    f"(x={x}, t={t}): {lower:.4g} <= {rep.estimate:.4g} <= {upper:.4g} violated"
                )
    announce(
        7, "bound-sandwich",
        not problems,
        "all 6 (x, t) cells bracketed with 3-SE slack" if not problems else "; ".join(problems),
    )


def test_criterion_8_determinism(tmp_path, announce):
    config = {
        "model": {
            "time": "continuous",
            "motion": {"preset": "brownian", "tilt": {"kind": "drift", "lam": 1.0}},
            "offspring": {"pmf": {2: 1.0}},
            "rate": {"constant": 1.0},
            "origin": 0.0,
        },
        "query": {"k": 2, "horizon": 1.0, "statistic": {"kind": "ones"}, "estimator": "both"},
        "run": {"replicates": 2_000, "seed": SEED, "workers": 1},
        "output": {"directory": "out", "formats": ["csv", "json"], "figures": True},
    }
    cfg_path = tmp_path / "acceptance.yaml"
    cfg_path.write_text(yaml.safe_dump(config))

    def run_all(out_dir: str, workers: str) -> dict:
        assert cli_main(["estimate", "--config", str(cfg_path), "--out", out_dir,
                         "--workers", workers]) == 0
        assert cli_main(["bounds", "--out", out_dir, "--seed", str(SEED),
                         "--replicates", "2000", "--x", "0,1", "--t", "0.5",
                         "--workers", workers]) == 0
        assert cli_main(["verify-discrete", "--out", out_dir, "--seed", str(SEED)]) == 0
        tree = {}
        for dirpath, _, files in os.walk(out_dir):
            for name in files:
                full = os.path.join(dirpath, name)
                tree[os.path.relpath(full, out_dir)] = open(full, "rb").read()
        return tree

    first = run_all(str(tmp_path / "w1"), "1")
    second = run_all(str(tmp_path / "w8"), "8")
    repeat = run_all(str(tmp_path / "w1b"), "1")
    same_workers = first == second
    same_repeat = first == repeat
    announce(
        8, "determinism",
        same_workers and same_repeat and len(first) >= 6,
        f"{len(first)} files byte-identical across worker counts 1/8 and across reruns",
    )
