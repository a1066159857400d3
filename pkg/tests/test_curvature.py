import numpy as np
import pytest
from hypothesis import given, strategies as st

from psc_limits.curvature import (AnsatzMetric, fd_relative_errors, oracle_sample, scalar_curvature,
                                  sectional_curvatures, verify_bound_table)
from psc_limits.errors import DimensionError, DomainError, ParameterError
from psc_limits.fd import fd_curvature
from psc_limits.profiles import SPHERE, TORUS


@pytest.mark.parametrize("n", [4, 5, 7])
def test_round_identity(n):
    rng = np.random.default_rng(0)
    r = rng.uniform(1e-6, np.pi / 2 - 1e-6, 1000)
    s = rng.uniform(0, 2 * np.pi, 1000)
    rep = sectional_curvatures(AnsatzMetric.background(SPHERE, n), r=r, s=s)
    for K in (rep.K_ri, rep.K_rs, rep.K_is, rep.K_ij):
        assert np.max(np.abs(K - 1.0)) < 1e-12
    assert np.max(np.abs(rep.scalar - n * (n - 1))) < 1e-10


@pytest.mark.parametrize("n", [4, 6])
def test_flat_identity(n):
    rng = np.random.default_rng(1)
    r = rng.uniform(1e-6, 3.0, 1000)
    rep = sectional_curvatures(AnsatzMetric.background(TORUS, n), r=r, s=rng.uniform(0, 1, 1000))
    for K in (rep.K_ri, rep.K_rs, rep.K_is, rep.K_ij):
        assert np.max(np.abs(K)) < 1e-12
    assert np.all(rep.scalar == 0.0)


def test_scalar_assembly_examples():
    assert scalar_curvature(1.0, 1.0, 1.0, 1.0, 4) == 12
    assert scalar_curvature(1.0, 1.0, 1.0, 1.0, 5) == 20
    assert scalar_curvature(0.0, 0.0, 0.0, 0.0, 6) == 0
    with pytest.raises(DimensionError):
        scalar_curvature(1.0, 1.0, 1.0, 1.0, 3)


@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.integers(4, 10))
def test_scalar_assembly_is_the_linear_combination(k, n):
    ri, rs, is_, ij = k
    expected = 2 * rs + 2 * (n - 2) * ri + 2 * (n - 2) * is_ + (n - 2) * (n - 3) * ij
    assert scalar_curvature(ri, rs, is_, ij, n) == pytest.approx(expected, abs=1e-12)


def test_report_rejects_inconsistent_scalar(sphere_block):
    rep = sectional_curvatures(sphere_block.ansatz, r=np.array([0.003]), s=0.0)
    with pytest.raises(AssertionError):
        type(rep)(rep.n, rep.log_r, rep.s, rep.k_ri, rep.k_rs, rep.k_is, rep.k_ij, rep.scalar_scaled + 1.0)


def test_coordinate_singularities():
    round4 = AnsatzMetric.background(SPHERE, 4)
    with pytest.raises(DomainError):
        sectional_curvatures(round4, r=np.array([0.0]))
    with pytest.raises(DomainError):
        sectional_curvatures(round4, r=np.array([np.pi / 2]))
    with pytest.raises(ParameterError):
        sectional_curvatures(round4)


def test_ansatz_needs_dimension_four():
    with pytest.raises(DimensionError):
        AnsatzMetric.background(SPHERE, 3)


def test_block_equals_round_outside_tube(sphere_block):
    r = np.linspace(0.005, 1.2, 500)
    s = np.linspace(0, 2 * np.pi, 500)
    rep = sectional_curvatures(sphere_block.ansatz, r=r, s=s)
    bg = sectional_curvatures(AnsatzMetric.background(SPHERE, 4), r=r, s=s)
    for name in ("k_ri", "k_rs", "k_is", "k_ij", "scalar_scaled"):
        assert np.array_equal(getattr(rep, name), getattr(bg, name))


def test_block_scalar_positive_on_grid(sphere_block):
    from psc_limits.curvature import tube_log_grid

    lr = tube_log_grid(sphere_block.warp.layout, 400)
    s = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    LR, S = np.meshgrid(lr, s, indexing="ij")
    rep = sectional_curvatures(sphere_block.ansatz, log_r=LR, s=S)
    assert np.all(rep.scalar > 0)


def test_sectionals_match_fd_at_twice_eps0(sphere_block_linear):
    """All four sectional curvatures against the oracle Riemann tensor at r = 2 eps0."""
    ans = sphere_block_linear.ansatz
    lr = sphere_block_linear.warp.layout.log_epsilon0 + np.log(2.0)
    rep = sectional_curvatures(ans, log_r=np.array([lr]), s=np.array([0.0]))
    pt = np.array([1.0, 1.1, 0.0])
    pt = np.array([1.0, 1.1, 0.7, 0.0])
    _, full = fd_curvature(ans.chart_metric(lr, 0.0), pt, step=0.005, order=4, full=True)
    R = full["riemann"][0]
    g = np.diag(ans.chart_metric(lr, 0.0)(pt[None])[0])
    K = lambda a, b: R[a, b, a, b] / (g[a] * g[b])
    scale = 1.0 + np.max(np.abs([rep.k_ri, rep.k_rs, rep.k_is, rep.k_ij]))
    assert abs(K(0, 1) - rep.k_ri[0]) / scale < 1e-4
    assert abs(K(0, 3) - rep.k_rs[0]) / scale < 1e-4
    assert abs(K(1, 3) - rep.k_is[0]) / scale < 1e-4
    assert abs(K(1, 2) - rep.k_ij[0]) / scale < 1e-4


@pytest.mark.parametrize("block", ["sphere_block_linear", "torus_block"])
def test_scalar_matches_fd_on_random_points(block, request):
    b = request.getfixturevalue(block)
    rng = np.random.default_rng(2)
    lr, s = oracle_sample(b.warp.layout, 80, rng, length=b.chart.length)
    assert fd_relative_errors(b.ansatz, lr, s, rng).max() < 1e-4


def test_near_axis_model_is_exact_below_half_eps0(sphere_block_linear):
    ans = sphere_block_linear.ansatz
    model = ans.near_axis_model()
    lr = sphere_block_linear.warp.layout.log_epsilon0 + np.log(np.linspace(1e-3, 0.5, 200))
    s = np.linspace(0, 2 * np.pi, 200)
    a = ans.components(lr, s)
    m = model.components(lr, s)
    for x, y in zip(a, m):
        assert np.array_equal(x, y)
    # and the model itself agrees with the oracle at representable radii
    rng = np.random.default_rng(3)
    lr2 = np.log(rng.uniform(1e-3, 0.1, 40))
    assert fd_relative_errors(model, lr2, rng.uniform(0, 6, 40), rng).max() < 1e-4


class TestBoundTables:
    def test_round_metric_k_ri_above_quarter(self):
        rep = sectional_curvatures(AnsatzMetric.background(SPHERE, 4), r=np.linspace(1e-3, 1.5, 100))
        assert np.all(rep.K_ri >= 0.25)

    @pytest.mark.parametrize("table", ["1", "2"])
    def test_sphere_tables_strict(self, sphere_block, table):
        res = verify_bound_table(sphere_block.ansatz, table, n_r=200, n_s=200)
        assert res.passed and res.strict_rows_ok
        assert res.min_slack > 0
        assert not res.violations

    def test_sphere_table2_nonconstant_factor(self, sphere_block_linear):
        res = verify_bound_table(sphere_block_linear.ansatz, "2", n_r=200, n_s=200)
        assert res.passed and res.strict_rows_ok

    def test_torus_table3(self, torus_block):
        res = verify_bound_table(torus_block.ansatz, "3", n_r=200, n_s=200, length=torus_block.chart.length)
        assert res.passed and res.strict_rows_ok

    def test_wrong_variant_rejected(self, sphere_block, torus_block):
        with pytest.raises(ParameterError):
            verify_bound_table(sphere_block.ansatz, "3")
        with pytest.raises(ParameterError):
            verify_bound_table(torus_block.ansatz, "1")
        with pytest.raises(ParameterError):
            verify_bound_table(sphere_block.ansatz, "4")

    def test_detects_violation(self, sphere_block):
        """A warp climbing far too fast in zone 3 breaks the K_ri >= 1/4 row."""
        import dataclasses

        class SteepWarp:
            def __init__(self, warp):
                self.inner = warp

            def __getattr__(self, name):
                return getattr(self.inner, name)

            def eval_log(self, log_r):
                alpha, ra = self.inner.eval_log(log_r)
                return alpha, 50.0 * ra

        ans = dataclasses.replace(sphere_block.ansatz, warp=SteepWarp(sphere_block.ansatz.warp))
        res = verify_bound_table(ans, "2", n_r=50, n_s=20)
        assert not res.passed
        assert any(v["zone"] == 3 and v["section"] == "ri" for v in res.violations)

    def test_csv_columns(self, torus_block, tmp_path):
        res = verify_bound_table(torus_block.ansatz, "3", n_r=20, n_s=8, length=torus_block.chart.length)
        path = res.write_csv(tmp_path / "t3.csv")
        header = path.read_text().splitlines()[0].split(",")
        assert {"zone", "section", "r", "s", "value", "bound", "slack"} <= set(header)
