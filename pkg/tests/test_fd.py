"""The finite-difference oracle on metrics with known curvature."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from psc_limits.errors import OracleError
from psc_limits.fd import curvature_from_derivatives, fd_curvature, metric_derivatives


def round_s4_chart(q):
    """Round S^4 in (r, theta1, theta2, s): dr^2 + sin^2 r h_{S^2} + cos^2 r ds^2."""
    r, t1, _, _ = q.T
    g = np.zeros((len(q), 4, 4), dtype=q.dtype)
    g[:, 0, 0] = 1.0
    g[:, 1, 1] = np.sin(r) ** 2
    g[:, 2, 2] = np.sin(r) ** 2 * np.sin(t1) ** 2
    g[:, 3, 3] = np.cos(r) ** 2
    return g


def flat_polar_chart(q):
    """Flat R^3 x S^1 in (r, theta1, theta2, s)."""
    r, t1, _, _ = q.T
    g = np.zeros((len(q), 4, 4), dtype=q.dtype)
    g[:, 0, 0] = 1.0
    g[:, 1, 1] = r**2
    g[:, 2, 2] = r**2 * np.sin(t1) ** 2
    g[:, 3, 3] = 1.0
    return g


def half_space(q):
    """Hyperbolic 3-space, upper half-space model: scalar -6."""
    z = q[:, 2]
    return np.eye(3, dtype=q.dtype)[None] / (z**2)[:, None, None]


def s2_times_s2(q):
    t, _, u, _ = q.T
    g = np.zeros((len(q), 4, 4), dtype=q.dtype)
    g[:, 0, 0] = 1.0
    g[:, 1, 1] = np.sin(t) ** 2
    g[:, 2, 2] = 1.0
    g[:, 3, 3] = np.sin(u) ** 2
    return g


def test_round_s4_at_r07():
    val = fd_curvature(round_s4_chart, np.array([0.7, 1.0, 1.2, 0.3]), step=1e-4)
    assert val == pytest.approx(12.0, abs=1e-6)


def test_flat_torus_chart_is_flat():
    ident = lambda q: np.broadcast_to(np.eye(4), (len(q), 4, 4)).copy()
    assert abs(fd_curvature(ident, np.array([0.1, 0.2, 0.3, 0.4]), step=1e-3)) < 1e-8
    assert abs(fd_curvature(flat_polar_chart, np.array([0.5, 1.1, 0.4, 0.2]), step=1e-3)) < 1e-8


def test_hyperbolic_and_product():
    assert fd_curvature(half_space, np.array([0.3, -0.2, 1.5]), step=1e-3) == pytest.approx(-6.0, abs=1e-6)
    assert fd_curvature(s2_times_s2, np.array([1.0, 0.5, 1.3, 2.0]), step=1e-3) == pytest.approx(4.0, abs=1e-6)


@given(st.floats(0.2, 1.3), st.floats(0.3, 2.8))
def test_round_sphere_everywhere(r, t1):
    val = fd_curvature(round_s4_chart, np.array([r, t1, 0.0, 0.0]), step=1e-3, order=4)
    assert val == pytest.approx(12.0, abs=1e-6)


def test_order_four_beats_order_two():
    p = np.array([0.7, 1.0, 1.2, 0.3])
    e2 = abs(fd_curvature(round_s4_chart, p, step=0.05, richardson=False, order=2) - 12)
    e4 = abs(fd_curvature(round_s4_chart, p, step=0.05, richardson=False, order=4) - 12)
    assert e4 < e2 / 50


def test_richardson_improves_order_two():
    p = np.array([0.7, 1.0, 1.2, 0.3])
    plain = abs(fd_curvature(round_s4_chart, p, step=0.02, richardson=False) - 12)
    rich = abs(fd_curvature(round_s4_chart, p, step=0.02) - 12)
    assert rich < plain / 100


def test_riemann_symmetries_and_sectionals():
    p = np.array([[0.7, 1.0, 1.2, 0.3]])
    g, dg, ddg = metric_derivatives(round_s4_chart, p, 1e-3, order=4)
    riem, ricci, scalar = curvature_from_derivatives(g, dg, ddg)
    R = riem[0]
    assert np.allclose(R, -np.swapaxes(R, 0, 1), atol=1e-8)
    assert np.allclose(R, -np.swapaxes(R, 2, 3), atol=1e-8)
    assert np.allclose(R, np.transpose(R, (2, 3, 0, 1)), atol=1e-8)
    gd = np.diag(g[0])
    for a in range(4):
        for b in range(a + 1, 4):
            assert R[a, b, a, b] / (gd[a] * gd[b]) == pytest.approx(1.0, abs=1e-7)
    assert np.allclose(ricci[0], 3 * g[0], atol=1e-7)


def test_batch_matches_single_points():
    pts = np.array([[0.5, 1.0, 0.2, 0.0], [0.9, 2.0, 0.1, 1.0]])
    batch = fd_curvature(round_s4_chart, pts, step=1e-3)
    single = [fd_curvature(round_s4_chart, p, step=1e-3) for p in pts]
    assert np.allclose(batch, single, rtol=0, atol=1e-12)


def test_degenerate_metric_raises():
    zero = lambda q: np.zeros((len(q), 3, 3))
    with pytest.raises(OracleError):
        fd_curvature(zero, np.zeros(3))


def test_bad_order_rejected():
    with pytest.raises(ValueError):
        fd_curvature(round_s4_chart, np.array([0.7, 1.0, 1.2, 0.3]), order=3)
