"""Acceptance criteria 1-9 at their stated sizes and tolerances.

Each test records a single PASS/FAIL line (with timing and the headline
numbers) that is printed in the terminal summary.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import CRITERIA
from psc_limits.assembly import (assemble, build_block, check_assembled_properties, check_block_properties,
                                 sample_tube)
from psc_limits.curvature import (AnsatzMetric, fd_relative_errors, oracle_sample, sectional_curvatures,
                                  verify_bound_table)
from psc_limits.distance import GeodesicMesh, calibrate_band, convergence_report, sample_pairs
from psc_limits.geometry import FlatTorus, Sphere
from psc_limits.packing import AxisGeodesicChart, GreatCircle, TubeChart, build_atlas
from psc_limits.profiles import SPHERE, TORUS, constant_factor, cosine_factor, linear_factor


@contextmanager
def criterion(number, title, limit_s=None):
    info = {}
    t0 = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        dt = time.perf_counter() - t0
        if ok and limit_s is not None and dt >= limit_s:
            ok = False
            info["runtime_limit"] = limit_s
        detail = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in info.items())
        CRITERIA[str(number)] = f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}  [{dt:.1f} s] {detail}"
    if limit_s is not None:
        assert dt < limit_s, f"runtime {dt:.1f} s exceeds {limit_s} s"


def sphere_chart():
    e = np.eye(5)
    return TubeChart(GreatCircle(e[0], e[1]))


def test_criterion_1_identities():
    with criterion(1, "round/flat identities", limit_s=1.0) as info:
        rng = np.random.default_rng(0)
        worst = 0.0
        for n in (4, 5):
            r = rng.uniform(1e-6, np.pi / 2 - 1e-6, 1000)
            rep = sectional_curvatures(AnsatzMetric.background(SPHERE, n), r=r, s=rng.uniform(0, 2 * np.pi, 1000))
            for K in (rep.K_ri, rep.K_rs, rep.K_is, rep.K_ij):
                worst = max(worst, float(np.max(np.abs(K - 1.0))))
            assert np.max(np.abs(rep.scalar - n * (n - 1))) < 1e-12 * n * (n - 1) * 10
        rep = sectional_curvatures(AnsatzMetric.background(TORUS, 4), r=rng.uniform(1e-6, 0.5, 1000),
                                   s=rng.uniform(0, 1, 1000))
        flat = max(float(np.max(np.abs(K))) for K in (rep.K_ri, rep.K_rs, rep.K_is, rep.K_ij, rep.scalar))
        info.update(round_err=worst, flat_err=flat)
        assert worst < 1e-12 and flat < 1e-12


def test_criterion_2_fd_oracle(s4, t4):
    with criterion(2, "finite-difference oracle vs closed form", limit_s=60.0) as info:
        rng = np.random.default_rng(1)
        sph = build_block(sphere_chart(), linear_factor(s4, 1.5, 0.3), 0.5, 0.005)
        tor = build_block(AxisGeodesicChart(t4, np.full(4, 0.3), 0), cosine_factor(t4, 1.5, 0.3, axis=1), 0.1, 0.2)
        errs = {}
        for name, blk in (("sphere", sph), ("torus", tor)):
            lr, s = oracle_sample(blk.warp.layout, 1000, rng, length=blk.chart.length)
            errs[name] = float(fd_relative_errors(blk.ansatz, lr, s, rng).max())
            # the innermost radii are checked through the near-axis model, which the block equals there
            near = np.log(rng.uniform(1e-3, 0.1, 250))
            errs[name + "_core_model"] = float(
                fd_relative_errors(blk.ansatz.near_axis_model(), near, rng.uniform(0, blk.chart.length, 250), rng).max())
        info.update(errs)
        assert max(errs.values()) < 1e-4


def test_criterion_3_sphere_block(s4):
    with criterion(3, "sphere block certificate (f=-1, eps=0.5, R=0.005)", limit_s=300.0) as info:
        blk = build_block(sphere_chart(), constant_factor(s4, -1.0), 0.5, 0.005)
        cert = check_block_properties(blk, n_r=400, n_s=400, n_points=10_000)
        info.update(min_scalar=cert["1_scalar"].witness["scalar"], upper_margin=cert["3_upper"].margin,
                    lower_margin=cert["4_lower"].margin, core_rel=cert["5_core"].witness["relative"])
        assert cert.passed
        assert cert["1_scalar"].n_samples == 400 * 400
        assert cert["2_outside"].witness == {"local": 0.0, "ambient": 0.0}
        assert cert["3_upper"].n_samples >= 10_000 and cert["4_lower"].n_samples >= 10_000
        assert cert["5_core"].witness["relative"] <= 1e-8


@pytest.mark.parametrize("factor", ["constant", "cosine"])
def test_criterion_4_torus(t4, factor):
    key = "4" if factor == "constant" else "4b"
    f = constant_factor(t4, -1.0) if factor == "constant" else cosine_factor(t4, 1.5, 0.3, axis=1)
    with criterion(key, f"torus certificate (n=4, eps=0.1, {factor} f)", limit_s=300.0) as info:
        eps = 0.1
        blk = build_block(AxisGeodesicChart(t4, np.zeros(4), 0), f, eps, 0.2)
        cert = check_block_properties(blk, n_r=400, n_s=400, n_points=10_000)
        atlas = build_atlas(t4, 1.0, seed=0)
        acert = check_assembled_properties(assemble(atlas, f, eps), n_points=10_000)
        info.update(min_scalar=cert["1_scalar"].witness["scalar"], zone3_margin=cert["1_zone3"].margin,
                    assembled_min=acert["1_scalar"].witness["scalar"])
        assert cert["1_scalar"].passed and cert["1_scalar"].witness["scalar"] >= -eps
        assert cert["1_zone3"].passed
        assert cert.passed and acert.passed


def test_criterion_5_bound_tables(s4, t4):
    with criterion(5, "bound tables 1-3, strict rows") as info:
        worst = {}
        cases = [(build_block(sphere_chart(), f, eps, 0.005), ("1", "2"), 2 * np.pi)
                 for f in (constant_factor(s4, -1.0), linear_factor(s4, 1.5, 0.3)) for eps in (0.5, 0.25, 0.125)]
        chart = AxisGeodesicChart(t4, np.zeros(4), 0)
        cases += [(build_block(chart, f, eps, 0.2), ("3",), 1.0)
                  for f in (constant_factor(t4, -1.0), cosine_factor(t4, 1.5, 0.3, axis=1)) for eps in (0.1, 0.05)]
        for blk, tables, length in cases:
            for t in tables:
                res = verify_bound_table(blk.ansatz, t, n_r=200, n_s=200, length=length)
                assert res.passed and res.strict_rows_ok, res.violations[:3]
                worst[t] = min(worst.get(t, np.inf), res.min_slack)
        info.update({f"table{t}_min_slack": v for t, v in sorted(worst.items())})
        assert all(v > 0 for v in worst.values())


def test_criterion_6_packing(s4):
    with criterion(6, "packing certificate (n=4, eta=0.5)", limit_s=300.0) as info:
        eta = 0.5
        atlas = build_atlas(s4, eta, seed=0)
        again = build_atlas(s4, eta, seed=0)
        sep = float(atlas.pairwise_distances().min())
        rng = np.random.default_rng(11)
        cov = atlas.pair_coverage(s4.sample(rng, 1000), s4.sample(rng, 1000), 3 * eta)
        info.update(N=atlas.N, R=atlas.R, min_distance=sep, coverage=float(cov.mean()))
        assert atlas.N <= 500
        assert sep > 2 * atlas.R
        assert cov.all()
        assert again.to_jsonable() == atlas.to_jsonable()


@pytest.fixture(scope="module")
def sweep(s4):
    t0 = time.perf_counter()
    rep = convergence_report(constant_factor(s4, -1.0), [0.5, 0.25, 0.125], sample_pairs(s4, 100, seed=0),
                             seed=0, keep_metrics=True)
    return rep, time.perf_counter() - t0


def test_criterion_7_convergence(sweep):
    rep, elapsed = sweep
    with criterion(7, "distance brackets over eps in {0.5, 0.25, 0.125}") as info:
        info.update({f"gap_up@{r.epsilon}": r.sup_gap_upper for r in rep.results})
        info.update({f"gap_lo@{r.epsilon}": r.sup_gap_lower for r in rep.results})
        info.update(C_ratio=rep.C_ratio, sweep_s=elapsed)
        assert elapsed < 1800
        assert all(len(r.rows) == 100 for r in rep.results)
        assert rep.brackets_consistent
        assert rep.upper_decreasing and rep.lower_decreasing
        assert rep.C_stable


@pytest.mark.parametrize("c", [-1.0, 0.5])
def test_criterion_8_mesh_calibration(s4, c):
    key = "8" if c == -1.0 else "8b"
    with criterion(key, f"mesh oracle on constant f = {c}") as info:
        m = 1000
        rng = np.random.default_rng(21)
        x, y = s4.sample(rng, m), s4.sample(rng, m)
        y[0] = -x[0]  # an antipodal pair
        f = constant_factor(s4, c)
        mesh = GeodesicMesh(s4, f, n_points=8000, k=48, seed=0, extra_points=np.concatenate([x, y]))
        mesh.band = calibrate_band(s4, 8000, 48, seed=1).scaled(np.exp(c))
        D = mesh.rows(np.arange(m))
        g = D[np.arange(m), m + np.arange(m)]
        exact = np.exp(c) * s4.distance(x, y)
        low = mesh.band.lower(g)
        info.update(max_excess=float(np.max(g - exact)), antipodal=float(g[0]), antipodal_exact=float(np.pi * np.exp(c)))
        assert exact[0] == pytest.approx(np.pi * np.exp(c), rel=1e-15)
        assert np.all(g >= exact * (1 - 1e-12))
        assert np.all(low <= exact * (1 + 1e-12))


def test_criterion_9_bilipschitz(sweep):
    rep, _ = sweep
    with criterion(9, "bi-Lipschitz sandwich over the sweep") as info:
        rng = np.random.default_rng(31)
        for r in rep.results:
            M = r.metric
            eig = M.metric_at(M.sample_points(10_000, rng)).eigenvalues()
            C = M.bilipschitz_constant
            assert C == pytest.approx(max(1 + r.epsilon, (1 + r.epsilon) * np.exp(2 * M.f.f_bar)))
            assert np.all(eig >= 1 / C) and np.all(eig <= C)
            # ambient points cannot reach radii near eps0; sample those in log r on every tube
            lam = []
            for blk in M.blocks:
                lr, s, _ = sample_tube(blk, 300, rng)
                lam.append(np.concatenate(blk.local_eigenvalues(lr, s)))
            lam = np.concatenate(lam)
            assert np.all(lam >= 1 / C) and np.all(lam <= C)
            assert r.certificate["bilipschitz"].passed
            info[f"C@{r.epsilon}"] = C
            lo, hi = min(eig.min(), lam.min()), max(eig.max(), lam.max())
            info[f"eig_range@{r.epsilon}"] = f"[{lo:.4g}, {hi:.4g}]"
