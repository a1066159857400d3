import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import trapezoid

from psc_limits.assembly import SubCertificate, LemmaCertificate, assemble
from psc_limits.distance import (GeodesicMesh, arc_length_h, audit_modulus, calibrate_band, chunk_polyline,
                                 circle_arc_vs_distance, constructive_upper_bound, convergence_report,
                                 core_arc_length, demand_atlas, lower_bound, modulus_delta, refine_path,
                                 sample_pairs)
from psc_limits.errors import ParameterError, PreconditionError
from psc_limits.geometry import FlatTorus, Sphere
from psc_limits.profiles import constant_factor, cosine_factor, linear_factor


def lower_cert(passed=True):
    return LemmaCertificate({"4_lower": SubCertificate("lower", passed, 0.0, 1)})


@pytest.fixture(scope="module")
def sphere_mesh(s4):
    return GeodesicMesh(s4, None, n_points=3000, k=32, seed=0)


class TestModulus:
    def test_constant_gives_one(self, s4):
        assert modulus_delta(constant_factor(s4, -2.0), 0.5) == 1.0

    @pytest.mark.parametrize("eps", [0.5, 0.125])
    def test_audit_passes_at_returned_delta(self, s4, eps):
        f = linear_factor(s4, 1.5, 0.5)
        delta = modulus_delta(f, eps, n_audit=20_000)
        assert 0 < delta <= 1
        assert audit_modulus(f, eps, delta, n_pairs=20_000, seed=9) < 0.5 * np.log1p(eps)

    def test_lipschitz_start(self, s4):
        f = linear_factor(s4, 1.5, 0.5)
        assert modulus_delta(f, 0.5) == pytest.approx(np.log1p(0.5) / (5 * 0.5 * np.exp(f.f_bar)))

    def test_rejects_nonpositive_eps(self, s4):
        with pytest.raises(ParameterError):
            modulus_delta(constant_factor(s4, -1.0), 0.0)


class TestLowerBound:
    def test_examples(self):
        assert lower_bound(0.0, 2.0, lower_cert()) == 2.0
        assert lower_bound(0.21, 1.1, lower_cert()) == pytest.approx(1.0, abs=1e-15)

    def test_refuses_without_certificate(self):
        with pytest.raises(PreconditionError):
            lower_bound(0.5, 1.0)
        with pytest.raises(PreconditionError):
            lower_bound(0.5, 1.0, lower_cert(passed=False))
        assert lower_bound(0.5, 1.0, require_certificate=False) == pytest.approx(1 / np.sqrt(1.5))

    @given(st.floats(0, 0.99), st.floats(0, 10))
    def test_monotone_in_epsilon(self, eps, d):
        assert lower_bound(eps, d, lower_cert()) <= d


class TestArcLengths:
    def test_constant(self, s4):
        f = constant_factor(s4, -1.5)
        p, q = np.eye(5)[0], np.eye(5)[1]
        assert arc_length_h(f, s4, p, q) == pytest.approx(np.exp(-1.5) * np.pi / 2, rel=1e-15)
        assert arc_length_h(None, s4, p, q) == pytest.approx(np.pi / 2)

    def test_against_trapezoid(self, s4):
        f = linear_factor(s4, 1.0, 0.7, axis=2)
        rng = np.random.default_rng(0)
        p, q = s4.sample(rng, 2)
        t = np.linspace(0, 1, 20001)
        vals = np.exp(f(s4.geodesic(p, q, t)))
        ref = s4.distance(p, q) * trapezoid(vals, t)
        assert arc_length_h(f, s4, p, q) == pytest.approx(ref, rel=1e-8)

    def test_core_arc(self, s4, sphere_chart):
        f = linear_factor(s4, 1.0, 0.5, axis=0)
        got = core_arc_length(sphere_chart, f, 0.0, 2 * np.pi)
        s = np.linspace(0, 2 * np.pi, 40001)
        ref = trapezoid(np.exp(-1.0 - 0.5 * np.cos(s)), s)
        assert got == pytest.approx(ref, rel=1e-8)
        assert core_arc_length(sphere_chart, constant_factor(s4, -1.0), 0.5, 1.5) == pytest.approx(np.exp(-1.0))

    def test_circle_arc_vs_distance_constant(self, s4):
        f = constant_factor(s4, -1.0)
        rng = np.random.default_rng(1)
        x = s4.sample(rng, 1)[0]
        y = s4.perturb(x, 0.5, rng)
        out = circle_arc_vs_distance(f, x, y, delta=1.0, epsilon=0.1)
        assert out["passed"] and out["ratio"] == pytest.approx(1.0, abs=1e-14)
        assert circle_arc_vs_distance(f, x, -x, delta=0.1, epsilon=0.1) is None


class TestChunks:
    @given(st.floats(0.05, 1.0), st.integers(0, 100))
    def test_chunk_count_and_spacing(self, delta, seed):
        s4 = Sphere(4)
        f = constant_factor(s4, -1.0)
        rng = np.random.default_rng(seed)
        x, y = s4.sample(rng, 2)
        pts, total = chunk_polyline(s4, f, np.array([x, y]), delta)
        ell = len(pts) - 2
        assert ell <= total / delta + 1
        spacing = np.exp(-1.0) * s4.distance(pts[:-1], pts[1:])
        assert np.all(spacing <= delta * (1 + 1e-9))
        assert np.allclose(pts[0], x) and np.allclose(pts[-1], y)


class TestMesh:
    def test_triangle_inequality(self, sphere_mesh):
        D = sphere_mesh.rows(np.arange(30))[:, :30]
        # D[a, c] <= D[a, b] + D[b, c]
        assert np.all(D[:, None, :] <= D[:, :, None] + D[None, :, :] + 1e-12)

    def test_graph_is_upper_bound_within_band(self, s4, sphere_mesh):
        band = calibrate_band(s4, n_points=3000, k=32, seed=1, n_pairs=200)
        rng = np.random.default_rng(2)
        idx = rng.integers(0, sphere_mesh.n_nodes, (100, 2))
        g = np.array([sphere_mesh.distance(i, j)[0] for i, j in idx])
        exact = s4.distance(sphere_mesh.points[idx[:, 0]], sphere_mesh.points[idx[:, 1]])
        assert np.all(g >= exact - 1e-12)
        assert np.all(band.lower(g) <= exact + 1e-12)

    def test_path_length_matches_distance(self, sphere_mesh):
        nodes = sphere_mesh.path(0, 7)
        pts = sphere_mesh.points[nodes]
        L = float(np.sum(sphere_mesh.manifold.distance(pts[:-1], pts[1:])))
        assert L == pytest.approx(sphere_mesh.distance(0, 7)[0], rel=1e-12)

    def test_refined_path_is_shorter_but_not_below_exact(self, s4, sphere_mesh):
        nodes = sphere_mesh.path(3, 11)
        L, pts = refine_path(sphere_mesh, nodes)
        exact = float(s4.distance(sphere_mesh.points[3], sphere_mesh.points[11]))
        assert exact - 1e-12 <= L <= sphere_mesh.distance(3, 11)[0] + 1e-12
        assert np.allclose(pts[0], sphere_mesh.points[3]) and np.allclose(pts[-1], sphere_mesh.points[11])

    def test_conformal_weights(self, s4):
        f = linear_factor(s4, 1.0, 0.3)
        mesh = GeodesicMesh(s4, f, n_points=500, k=16, seed=0)
        assert mesh.quadrature_error < 1e-10
        e = mesh.edges[0]
        assert mesh.weights[0] == pytest.approx(arc_length_h(f, s4, mesh.points[e[0]], mesh.points[e[1]]),
                                                rel=1e-10)

    def test_torus_mesh(self, t4):
        mesh = GeodesicMesh(t4, None, n_points=2000, k=24, seed=0)
        g, _ = mesh.distance(0, 1)
        assert g >= t4.distance(mesh.points[0], mesh.points[1]) - 1e-12


class TestUpperBound:
    @pytest.fixture(scope="class")
    @classmethod
    def setup(cls):
        s4 = Sphere(4)
        f = constant_factor(s4, -1.0)
        x, y = sample_pairs(s4, 4, seed=3)
        eps, delta = 0.5, 1.0
        eta = eps * delta / 6
        chunks = [chunk_polyline(s4, f, np.array([a, b]), delta)[0] for a, b in zip(x, y)]
        atlas = demand_atlas(s4, eta, chunks, seed=0)
        return s4, f, x, y, assemble(atlas, f, eps), delta

    def test_path_structure(self, setup):
        s4, f, x, y, M, delta = setup
        for a, b in zip(x, y):
            path = constructive_upper_bound(M, a, b, delta)
            assert path.continuity_error(s4) < 1e-9
            assert path.max_hop() <= 3 * M.atlas.eta * (1 + 1e-9)
            assert np.allclose(path.segments[0].start, a) and np.allclose(path.segments[-1].end, b)
            d_h = np.exp(-1.0) * s4.distance(a, b)
            assert path.length >= lower_bound(M.epsilon, d_h, require_certificate=False)

    def test_hop_factor_floor(self, setup):
        _, _, x, y, M, delta = setup
        with pytest.raises(ParameterError):
            constructive_upper_bound(M, x[0], y[0], delta, hop_factor=1.0)


def test_small_convergence_run(s4):
    pairs = sample_pairs(s4, 6, seed=4)
    rep = convergence_report(constant_factor(s4, -1.0), [0.5, 0.25], pairs, seed=0, cert_points=500)
    assert rep.brackets_consistent
    for res in rep.results:
        assert res.certificate.passed
        for row in res.rows:
            assert row["lower"] <= row["d_h"] <= row["upper"]
    assert rep.upper_decreasing and rep.lower_decreasing


def test_convergence_rejects_unsorted_epsilons(s4):
    with pytest.raises(ParameterError):
        convergence_report(constant_factor(s4, -1.0), [0.25, 0.5], sample_pairs(s4, 2))
