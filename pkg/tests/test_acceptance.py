"""Acceptance suite: one test per criterion, each reporting a single PASS/FAIL line."""

import itertools
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from domainuq.cli import main
from domainuq.combinatorics import (
    delannoy_closed_form,
    delannoy_q,
    MultiIndex,
    multi_indices,
    p_upper_bound,
    seq_a,
    seq_a_prime,
    seq_p,
    seq_tau,
    seq_tau_closed_form,
    stirling2,
)
from domainuq.fem import (
    error_norms,
    map_mesh,
    mapped_from_vertices,
    solve_capacity_pair,
    solve_source,
    solve_source_reference,
    structured_mesh,
    CG_TOL,
)
from domainuq.harness import (
    Experiment,
    ExperimentConfig,
    FemConfig,
    QmcConfig,
    TruncationConfig,
    fit_rate,
    run_capacity,
    run_dim_truncation,
    run_source_field,
)
from domainuq.lattice import (
    LatticeRule,
    build_spod_params,
    cbc_construct,
    korobov_kernel,
    lattice_points,
    product_weight_params,
    set_weight,
    worst_case_error_sq,
)
from domainuq.random_field import BSequence, FieldSpec, b_sequence

C_PAPER = math.sqrt(1.5)
THETAS = (2.1, 2.5, 3.0)


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def e2(rule, params) -> float:
    return worst_case_error_sq(rule, params).e_squared


def test_c01_identity_suite():
    start = time.perf_counter()
    failures = []
    for nu in range(11):
        for w in range(nu + 1):
            for mu in range(nu - w + 1):
                lhs = sum(math.comb(nu, m) * stirling2(m, w) * stirling2(nu - m, mu) for m in range(w, nu + 1))
                if lhs != math.comb(w + mu, w) * stirling2(nu, w + mu):
                    failures.append(("stirling convolution", nu, w, mu))
        for m in range(nu + 1):
            lhs = sum(math.comb(nu, k) * stirling2(nu - k, m) for k in range(nu - m + 1))
            if lhs != stirling2(nu + 1, m + 1):
                failures.append(("stirling shift", nu, m))
    for k in range(11):
        for l in range(11):
            if delannoy_q(2, MultiIndex.from_list([k, l])) != delannoy_closed_form(k, l):
                failures.append(("delannoy", k, l))
    tau8 = seq_tau(8)
    for order in range(1, 9):
        for m in multi_indices(order, 3):
            lhs = sum(
                tau8[w.order()] * math.factorial(w.order()) * math.factorial(order - w.order() + 1) * m.binom(w)
                for w in m.lower_set()
                if w != m
            )
            if lhs != tau8[order] * math.factorial(order):
                failures.append(("renewal", m))
    a, ap = seq_a(20), seq_a_prime(20)
    failures += [("a'", k) for k in range(21) if ap[k] != math.factorial(k) * a[k]]
    tau = seq_tau(30)
    failures += [
        ("tau", k) for k in range(1, 31) if abs(tau[k] - seq_tau_closed_form(k)) > 1e-12 * tau[k]
    ]
    for d in (2, 3):
        for order in range(1, 7):
            bound = p_upper_bound(order, d)
            if bound != 2 * tau[order] * math.factorial(order + d - 1) // math.factorial(d - 1):
                failures.append(("P bound form", order, d))
            for m in multi_indices(order, 3):
                if seq_p(m, d) > bound:
                    failures.append(("P bound", m, d))
    elapsed = time.perf_counter() - start
    report(1, "appendix identities", not failures and elapsed < 5.0, f"{len(failures)} failures, {elapsed:.2f} s (< 5 s)")


def _brute_force_e2(rule, params):
    n, alpha = rule.n, params.alpha
    k = np.arange(n)
    terms = []
    for size in range(1, rule.s + 1):
        for u in itertools.combinations(range(rule.s), size):
            kernel = np.ones(n)
            for j in u:
                kernel = kernel * korobov_kernel(alpha, (k * rule.z[j] % n) / n)
            mean = math.fsum(kernel) / n
            for ms in itertools.product(range(1, alpha + 1), repeat=size):
                w = params.order_factor[sum(ms)] * math.prod(params.gamma_jm[j, m - 1] for j, m in zip(u, ms))
                terms.append(w * mean)
    return math.fsum(terms)


def test_c02_worst_case_error_oracle():
    start = time.perf_counter()
    params = build_spod_params(BSequence(b=(0.3, 0.2, 0.1), xi_b=0.6), alpha=2, weight_amplitude=0.05)
    rng = np.random.default_rng(2)
    worst = 0.0
    for n in (7, 19, 37):
        for s in (1, 2, 3):
            for _ in range(4):
                rule = LatticeRule(n, tuple(int(v) for v in rng.integers(1, n, s)))
                exact = _brute_force_e2(rule, params)
                worst = max(worst, abs(e2(rule, params) - exact) / exact)
        gamma1 = set_weight(params, (1,))
        analytic = gamma1 * math.pi**2 / (3 * n**2)
        worst = max(worst, abs(e2(LatticeRule(n, (1,)), params) - analytic) / analytic)
    elapsed = time.perf_counter() - start
    report(2, "SPOD worst-case error oracle", worst <= 1e-12 and elapsed < 10.0, f"max rel err {worst:.2e} (<= 1e-12), {elapsed:.2f} s (< 10 s)")


def test_c03_cbc_sanity():
    start = time.perf_counter()
    params = build_spod_params(b_sequence(FieldSpec(2.1, 1.0, 5)), alpha=2, weight_amplitude=1e-6)
    rule = cbc_construct(101, 5, params)
    best = e2(rule, params)
    rng = np.random.default_rng(101)
    randoms = [e2(LatticeRule(101, tuple(int(v) for v in rng.integers(1, 101, 5))), params) for _ in range(200)]
    beaten = sum(best > r * (1 + 1e-12) for r in randoms)
    last = [e2(LatticeRule(101, rule.z[:-1] + (z,)), params) for z in range(1, 101)]
    last_ok = best <= min(last) * (1 + 1e-12)
    elapsed = time.perf_counter() - start
    report(
        3,
        "CBC sanity",
        beaten == 0 and last_ok and elapsed < 30.0,
        f"z = {rule.z}, random vectors beating CBC {beaten}/200, last component optimal {last_ok}, {elapsed:.2f} s (< 30 s)",
    )


def test_c04_fem_manufactured():
    start = time.perf_counter()
    ms = [8, 16, 32, 64]
    l2, h1 = [], []
    for m in ms:
        mesh = structured_mesh(m)
        sol = solve_source(
            mapped_from_vertices(mesh, mesh.vertices),
            f=lambda x: 2 * math.pi**2 * np.sin(math.pi * x[..., 0]) * np.sin(math.pi * x[..., 1]),
            quadrature="midpoint",
        )
        e_l2, e_h1 = error_norms(
            sol,
            mesh,
            lambda x: np.sin(math.pi * x[..., 0]) * np.sin(math.pi * x[..., 1]),
            lambda x: math.pi
            * np.stack(
                [np.cos(math.pi * x[..., 0]) * np.sin(math.pi * x[..., 1]), np.sin(math.pi * x[..., 0]) * np.cos(math.pi * x[..., 1])],
                axis=-1,
            ),
        )
        l2.append(e_l2)
        h1.append(e_h1)
    r_l2, r_h1 = fit_rate(ms, l2), fit_rate(ms, h1)
    elapsed = time.perf_counter() - start
    report(
        4,
        "FEM manufactured solution",
        1.8 <= r_l2 <= 2.2 and 0.8 <= r_h1 <= 1.2 and elapsed < 60.0,
        f"L2 rate {r_l2:.3f} in [1.8, 2.2], H1 rate {r_h1:.3f} in [0.8, 1.2], {elapsed:.2f} s (< 60 s)",
    )


def test_c05_capacity_exactness():
    mesh = structured_mesh(8)
    _, _, cap_sq, conj_sq = solve_capacity_pair(mapped_from_vertices(mesh, mesh.vertices))
    _, _, cap_r, conj_r = solve_capacity_pair(mapped_from_vertices(mesh, mesh.vertices * [1.0, 0.5]))
    devs = [abs(cap_sq - 1), abs(conj_sq - 1), abs(cap_r - 2), abs(conj_r - 0.5), abs(cap_r * conj_r - 1)]
    report(
        5,
        "capacity exactness",
        max(devs) <= 1e-12,
        f"square ({cap_sq!r}, {conj_sq!r}), rectangle ({cap_r!r}, {conj_r!r}), max dev {max(devs):.1e} (<= 1e-12)",
    )


def _qmc_rates(runner, s):
    rates = []
    for theta in THETAS:
        config = ExperimentConfig(runner_kind[runner], FieldSpec(theta, C_PAPER, s), mesh_m=16, qmc=QmcConfig())
        rates.append(runner(config).fitted_rate)
    return rates


runner_kind = {run_source_field: Experiment.SOURCE_FIELD, run_capacity: Experiment.CAPACITY}


def test_c06_source_qmc_convergence():
    start = time.perf_counter()
    rates = _qmc_rates(run_source_field, 20)
    elapsed = time.perf_counter() - start
    ok = rates[0] >= 0.7 and rates[1] >= 0.9 and rates[2] >= 1.3 and rates[0] < rates[1] < rates[2]
    report(
        6,
        "source QMC convergence",
        ok and elapsed < 1800,
        "rates " + ", ".join(f"theta={t}: {r:.3f}" for t, r in zip(THETAS, rates))
        + f" (>= 0.7, 0.9, 1.3, increasing), {elapsed:.0f} s (< 1800 s)",
    )


def test_c07_capacity_qmc_convergence():
    start = time.perf_counter()
    rates = _qmc_rates(run_capacity, 10)
    elapsed = time.perf_counter() - start
    ok = rates[0] >= 0.4 and rates[1] >= 0.8 and rates[2] >= 1.4 and rates[0] < rates[1] < rates[2]
    report(
        7,
        "capacity QMC convergence",
        ok and elapsed < 1800,
        "rates " + ", ".join(f"theta={t}: {r:.3f}" for t, r in zip(THETAS, rates))
        + f" (>= 0.4, 0.8, 1.4, increasing), {elapsed:.0f} s (< 1800 s)",
    )


def test_c08_dimension_truncation():
    start = time.perf_counter()
    # m = 32 is the coarsest dyadic mesh that resolves the highest retained mode j = 32
    config = ExperimentConfig(
        Experiment.DIM_TRUNCATION,
        FieldSpec(2.1, C_PAPER, 64),
        mesh_m=32,
        truncation=TruncationConfig(s_list=(2, 4, 8, 16, 32), s_ref=64, n=4099),
    )
    result = run_dim_truncation(config)
    elapsed = time.perf_counter() - start
    rate = result.fitted_rate
    report(
        8,
        "dimension truncation",
        0.9 <= rate <= 1.6 and elapsed < 1200,
        f"rate {rate:.3f} in [0.9, 1.6] (theory 2 theta - 3 = 1.2), errors "
        + ", ".join(f"{e:.2e}" for e in result.errors)
        + f", {elapsed:.0f} s (< 1200 s)",
    )


def test_c09_solve_path_cross_validation():
    start = time.perf_counter()
    mesh = structured_mesh(16)
    worst = 0.0
    for s in (1, 2, 3, 4):
        spec = FieldSpec(2.1, C_PAPER, s)
        rule = cbc_construct(5, s, build_spod_params(b_sequence(FieldSpec(2.1, 1.0, s)), weight_amplitude=1e-6))
        for y in lattice_points(rule):
            mapped = solve_source(map_mesh(mesh, spec, y)).nodal_values
            ref = solve_source_reference(mesh, spec, y)
            worst = max(worst, np.linalg.norm(mapped - ref) / np.linalg.norm(mapped))
    elapsed = time.perf_counter() - start
    report(
        9,
        "solve-path cross-validation",
        worst <= 10 * CG_TOL and elapsed < 60.0,
        f"max relative nodal L2 gap {worst:.2e} (<= {10 * CG_TOL:.0e}), {elapsed:.2f} s (< 60 s)",
    )


DETERMINISM_CONFIGS = [
    {"experiment": "SOURCE_FIELD", "field": {"theta": 2.5, "c": C_PAPER, "s": 6}, "mesh_m": 8,
     "qmc": {"n_list": [31, 61, 127], "reference_n": 251}},
    {"experiment": "SOURCE_QOI", "field": {"theta": 2.5, "c": C_PAPER, "s": 6}, "mesh_m": 8,
     "qmc": {"n_list": [31, 61, 127], "reference_n": 251}},
    {"experiment": "CAPACITY", "field": {"theta": 2.5, "c": C_PAPER, "s": 6}, "mesh_m": 8,
     "qmc": {"n_list": [31, 61, 127], "reference_n": 251}},
    {"experiment": "DIM_TRUNCATION", "field": {"theta": 2.1, "c": C_PAPER, "s": 16}, "mesh_m": 8,
     "truncation": {"s_list": [2, 4, 8], "s_ref": 16, "n": 127}},
    {"experiment": "FEM_H", "field": {"theta": 2.1, "c": C_PAPER, "s": 4}, "mesh_m": 8,
     "fem": {"m_list": [4, 8, 16], "reference_m": 32, "samples": 5}},
]


def test_c10_determinism(tmp_path):
    mismatches, artifacts = [], 0
    for k, cfg in enumerate(DETERMINISM_CONFIGS):
        path = tmp_path / f"cfg{k}.json"
        path.write_text(json.dumps({"schema_version": 1, "batch_size": 4, **cfg}))
        runs = []
        for tag, threads in (("a", 1), ("b", 1), ("c", 4)):
            out = tmp_path / f"{k}{tag}"
            assert main(["run", "--config", str(path), "--out", str(out), "--threads", str(threads)]) == 0
            runs.append(out)
        for artifact in sorted(p.name for p in runs[0].iterdir()):
            artifacts += 1
            blobs = {(r / artifact).read_bytes() for r in runs}
            if len(blobs) != 1:
                mismatches.append(f"{cfg['experiment']}/{artifact}")
    report(
        10,
        "determinism",
        not mismatches and artifacts == 2 * len(DETERMINISM_CONFIGS),
        f"{artifacts} artifacts compared over two 1-thread runs and one 4-thread run, mismatches {mismatches or 'none'}",
    )
