"""Acceptance criteria, one test per criterion.

Each test stores a one-line verdict in ``conftest.ACCEPTANCE_LINES`` before
asserting, so the terminal summary lists every criterion with its outcome.
"""
import hashlib
import math
import time
from fractions import Fraction

import numpy as np
from scipy.stats import qmc

from frobnet.cli import run
from frobnet.dag_compiler import compile_dag, rate_table
from frobnet.gallery import binary_tree_d4, constant_level_l3, multi_index_s2, quadratic_2d_target, square_target
from frobnet.holder_compiler import compile_holder, nominal_error_bound, rate_exponent
from frobnet.net_algebra import (
    combine_bound,
    compose,
    compose_bound,
    concat_bound,
    concatenate,
    depth_pad,
    linear_combine,
    pad_bound,
    rescale,
)
from frobnet.net_ir import evaluate, kappa
from frobnet.primitives import build_monomial, build_product, build_square, monomial_nominal_bound
from frobnet.stats_lab import OptimizerConfig, erm_sweep, rademacher_bound, rademacher_check
from frobnet.verify import ProbePlan, check_partition_of_unity, rate_sweep, sup_error

from conftest import ACCEPTANCE_LINES, random_net

REL = 1 + 1e-12


def record(n, title, ok, detail, seconds, limit):
    ok = bool(ok) and seconds < limit
    ACCEPTANCE_LINES[n] = f"{'PASS' if ok else 'FAIL'}  {n:2d}. {title}: {detail} [{seconds:.1f}s < {limit:g}s]"
    return ok


def test_01_square_constants():
    t0 = time.perf_counter()
    x = np.linspace(0.0, 1.0, 100_000)[:, None]
    worst = 0.0
    ok = True
    for k in (1, 2, 4, 8, 16, 32, 64):
        net, cert = build_square(k)
        err = float(np.max(np.abs(evaluate(net, x)[:, 0] - x[:, 0] ** 2)))
        ok &= err <= 1 / (2 * k * k) and kappa(net) <= 3.0
        worst = max(worst, err * 2 * k * k)
    k1 = kappa(build_square(1)[0])
    ok &= abs(k1 - 3.0) <= 1e-12
    ok = record(1, "square net", ok, f"max err*2k^2 = {worst:.4f}, kappa(1) = {k1!r}", time.perf_counter() - t0, 5)
    assert ok


def test_02_product_constants():
    t0 = time.perf_counter()
    g = np.linspace(-1, 1, 301)
    x = np.array(np.meshgrid(g, g)).reshape(2, -1).T
    t = np.linspace(-1, 1, 1000)
    z = np.zeros_like(t)
    ok = True
    worst = kmax = 0.0
    for k in (5, 10, 20, 50):
        net, _ = build_product(k)
        err = sup_error(net, lambda p: p[:, 0] * p[:, 1], ProbePlan.cube("uniform_grid", x.shape[0], 2, -1, 1)).value
        zeros = np.all(evaluate(net, np.c_[t, z]) == 0) and np.all(evaluate(net, np.c_[z, t]) == 0)
        kap = kappa(net)
        ok &= err <= 3 / k ** 2 and kap <= 360 and zeros
        worst, kmax = max(worst, err * k * k / 3), max(kmax, kap)
    ok = record(2, "product net", ok, f"max err/(3/k^2) = {worst:.4f}, max kappa = {kmax:.2f}, axis zeros exact",
                time.perf_counter() - t0, 10)
    assert ok


def test_03_monomial_tree():
    t0 = time.perf_counter()
    ok = True
    parts = []
    for d, k in ((2, 20), (3, 20), (5, 10), (8, 10)):
        net, cert = build_monomial(d, k)
        x = qmc.Sobol(d, scramble=True, seed=d).random_base2(17) * 2 - 1
        err = float(np.max(np.abs(evaluate(net, x)[:, 0] - np.prod(x, axis=1))))
        ok &= err <= 6 * d / k ** 2
        ok &= net.depth == 2 * math.ceil(math.log2(d)) and net.width <= 6 * d * k
        ok &= kappa(net) <= monomial_nominal_bound(d)
        parts.append(f"d={d}: {err * k * k / (6 * d):.3f}")
    ok = record(3, "monomial tree", ok, "err/(6d/k^2) " + ", ".join(parts), time.perf_counter() - t0, 30)
    assert ok


def _probe(rng, d):
    return rng.uniform(-1.5, 1.5, size=(1000, d))


def _close(a, b):
    return np.max(np.abs(a - b), initial=0.0) <= 1e-9 * max(1.0, float(np.max(np.abs(b))))


def test_04_algebra_soundness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    fails = {}
    for op in ("rescale", "combine", "concatenate", "compose", "depth_pad"):
        bad = 0
        for _ in range(200):
            depth = int(rng.integers(0, 4))
            x = _probe(rng, 3)
            if op == "rescale":
                net = random_net(rng, 3, max(depth, 1), int(rng.integers(1, 6)), scale=2.0)
                out = rescale(net)
                good = _close(evaluate(out, x), evaluate(net, x)) and kappa(out) <= out.bound * REL
                good &= abs(out.final_norm() - kappa(net)) <= 1e-12 * kappa(net)
            elif op == "combine":
                m = int(rng.integers(1, 5))
                nets = [random_net(rng, 3, depth, int(rng.integers(1, 5))) for _ in range(m)]
                c = rng.normal(size=m)
                out = linear_combine(nets, c)
                want = sum(ci * evaluate(n, x) for ci, n in zip(c, nets))
                good = _close(evaluate(out, x), want)
                good &= kappa(out) <= combine_bound(depth, c, [kappa(n) for n in nets]) * REL
            elif op == "concatenate":
                nets = [random_net(rng, 3, depth, int(rng.integers(1, 5))) for _ in range(int(rng.integers(2, 5)))]
                out = concatenate(nets)
                good = _close(evaluate(out, x), np.hstack([evaluate(n, x) for n in nets]))
                good &= kappa(out) <= concat_bound(depth, [kappa(n) for n in nets]) * REL
            elif op == "compose":
                mid = int(rng.integers(1, 4))
                inner = random_net(rng, 3, depth, int(rng.integers(1, 5)), d_out=mid)
                outer = random_net(rng, mid, int(rng.integers(0, 4)), int(rng.integers(1, 5)))
                out = compose(outer, inner)
                good = _close(evaluate(out, x), evaluate(outer, evaluate(inner, x)))
                good &= kappa(out) <= compose_bound(depth, kappa(outer), kappa(inner)) * REL
            else:
                extra = int(rng.integers(0, 4))
                net = random_net(rng, 3, depth, int(rng.integers(1, 5)), d_out=int(rng.integers(1, 3)))
                out = depth_pad(net, depth + extra)
                good = _close(evaluate(out, x), evaluate(net, x)) and out.depth == depth + extra
                good &= kappa(out) <= pad_bound(depth, net.output_dim, kappa(net), extra) * REL
            bad += not good
        fails[op] = bad
    ok = record(4, "algebra soundness", not any(fails.values()),
                "failures per 200: " + ", ".join(f"{k}={v}" for k, v in fails.items()), time.perf_counter() - t0, 60)
    assert ok


def test_05_partition_of_unity():
    t0 = time.perf_counter()
    ok = True
    parts = []
    for N, d in ((3, 1), (5, 1), (3, 2), (4, 3)):
        res, active = check_partition_of_unity(N, d)
        fine, active_fine = check_partition_of_unity(N, d, ProbePlan.cube("low_discrepancy", 4 * 4096, d))
        ok &= max(res, fine) <= 1e-12 and max(active, active_fine) <= 2 ** d
        parts.append(f"({N},{d}) res={max(res, fine):.1e} active={max(active, active_fine)}")
    ok = record(5, "partition of unity", ok, "; ".join(parts), time.perf_counter() - t0, 10)
    assert ok


def test_06_holder_soundness():
    t0 = time.perf_counter()
    ok = True
    parts = []
    for oracle, count in ((square_target(), 20_001), (quadratic_2d_target(), 41 * 41)):
        d = oracle.dim
        plan = ProbePlan.cube("uniform_grid", count, d)
        for k in (10, 20, 40):
            res = compile_holder(oracle, k, max_weights=10 ** 8)
            err = sup_error(res.network, oracle, plan).value
            nominal = nominal_error_bound(d, oracle.r, oracle.alpha, res.chosen_N, k)
            kap = kappa(res.network)
            ok &= err <= nominal and err <= res.error_bound
            ok &= kap <= res.certificate.kappa * REL and res.certificate.satisfied
            parts.append(f"d={d} k={k} err/bound={err / nominal:.2e}")
    ok = record(6, "Holder compile", ok, "; ".join(parts), time.perf_counter() - t0, 120)
    assert ok


def test_07_rate_sweep():
    t0 = time.perf_counter()
    target = square_target()
    res = rate_sweep(target, [1e7, 1e8, 1e9, 1e10], plan=ProbePlan("uniform_grid", 20_001))
    limit = -rate_exponent(1, target.r, target.alpha) + 0.15
    ok = res.monotone and res.fitted_slope <= limit and len(res.points) == 4
    ok = record(7, "rate sweep", ok,
                f"errors {[f'{p.measured_error:.3g}' for p in res.points]}, slope {res.fitted_slope:.4f} <= {limit:.4f}",
                time.perf_counter() - t0, 300)
    assert ok


def _depth_formula(spec):
    c = max(math.ceil(math.log2(spec.d_in(v) + spec.oracles[v].r)) for v in spec.nodes)
    return 2 * spec.L * c + 2 * spec.L


def test_08_dag_soundness():
    t0 = time.perf_counter()
    ok = True
    parts = []
    for spec, K in ((binary_tree_d4(), 1e36), (constant_level_l3(), 1e45)):
        res = compile_dag(spec, K)
        plan = ProbePlan.cube("low_discrepancy", 1024, spec.input_dim, -1.0, 1.0)
        err = sup_error(res.network, spec.reference, plan).value
        bound = res.rate_certificate.total_error_bound
        D = _depth_formula(spec)
        ok &= res.network.depth == D == spec.depth
        ok &= kappa(res.network) <= K and err <= bound
        parts.append(f"{spec.name} D={D} err={err:.3g} bound={bound:.3g}")
    ok = record(8, "DAG compile", ok, "; ".join(parts), time.perf_counter() - t0, 300)
    assert ok


def test_09_closed_forms():
    t0 = time.perf_counter()
    half = Fraction(5, 2)
    checks = []
    cf = rate_table(binary_tree_d4()).closed_forms
    checks.append(cf["binary-tree"]["constant"] == 2 * max(math.ceil(math.log2(2 + 1)), 1) + 4 == 8)
    checks.append(cf["binary-tree"]["exponent"] == Fraction(1, 8))
    checks.append(cf["constant-level"]["constant"] == 2 * 2 + half == Fraction(13, 2))
    cf = rate_table(constant_level_l3()).closed_forms
    checks.append(cf["constant-level"]["constant"] == 3 * 2 + half == Fraction(17, 2))
    checks.append(cf["constant-level"]["exponent"] == Fraction(1, 17))
    cf = rate_table(multi_index_s2()).closed_forms
    checks.append(cf["multi-index"]["constant"] == 2 * math.ceil(math.log2(2 + 1)) + 5 == 9)
    checks.append(cf["multi-index"]["exponent"] == Fraction(1, 9))
    ok = record(9, "closed forms", all(checks), f"{sum(checks)}/{len(checks)} exact matches (C2=8, C3=13/2, 17/2, C1=9)",
                time.perf_counter() - t0, 10)
    assert ok


def test_10_erm_excess_risk():
    t0 = time.perf_counter()
    ns = [2 ** 6, 2 ** 8, 2 ** 10, 2 ** 12]
    rows = erm_sweep(binary_tree_d4(), ns, [0, 1, 2], OptimizerConfig(), width=32, depth=2)
    med, se = [], []
    for n in ns:
        sub = sorted((r for r in rows if r["n"] == n), key=lambda r: r["excess"])
        mid = sub[len(sub) // 2]
        med.append(mid["excess"])
        se.append(mid["stderr"])
    inversions = [i for i in range(len(ns) - 1) if med[i + 1] > med[i]]
    ok = len(inversions) <= 1 and all(
        med[i + 1] - med[i] <= 2 * math.hypot(se[i], se[i + 1]) for i in inversions)
    ok = record(10, "ERM excess risk", ok, f"medians {[f'{m:.3g}' for m in med]}, inversions {len(inversions)}",
                time.perf_counter() - t0, 1200)
    assert ok


def test_11_rademacher():
    t0 = time.perf_counter()
    ok = True
    parts = []
    for D, K, n in ((2, 5, 128), (4, 10, 256), (6, 20, 512)):
        res = rademacher_check(16, D, K, n, seed=0, draws=5)
        ok &= res.bound == rademacher_bound(D, K, n) and res.ok and len(res.per_draw) == 5
        parts.append(f"({D},{K},{n}) {res.estimate:.3g} <= {res.bound:.3g}")
    ok = record(11, "Rademacher", ok, "; ".join(parts), time.perf_counter() - t0, 300)
    assert ok


def _tree_digest(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "timings.csv"}


def test_12_determinism(tmp_path, monkeypatch):
    t0 = time.perf_counter()
    commands = [
        ["compile-holder", "-t", "holder-2d-alpha2", "--k", "6", "--seed", "3"],
        ["compile-dag", "-t", "binarytree-d4", "--K", "1e30"],
        ["rate-sweep", "-t", "holder-1d-alpha2", "--budgets", "1e7", "1e8", "1e9"],
        ["erm-sweep", "-t", "binarytree-d4", "--ns", "64", "--seeds", "0", "1", "--width", "8", "--depth", "2"],
    ]
    digests = []
    codes = []
    for i in range(2):
        root = tmp_path / f"run{i}"
        monkeypatch.setenv("FROBNET_OUTPUT_ROOT", str(root))
        for argv in commands:
            codes.append(run(argv))
        for d in ("rate-sweep-holder-1d-alpha2", "erm-sweep-binarytree-d4"):
            codes.append(run(["report", str(root / "runs" / d)]))
        digests.append(_tree_digest(root))
    ok = not any(codes) and digests[0] == digests[1] and len(digests[0]) == 11
    ok = record(12, "determinism", ok, f"{len(digests[0])} files byte-identical across two runs",
                time.perf_counter() - t0, 600)
    assert ok
