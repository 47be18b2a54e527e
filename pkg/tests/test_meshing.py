"""Disk mesh contracts.

Frozen reference values (measured on this generator, grading 0.28):
  R=1, target 0.5  -> 27 triangles, area 3.0207, realized h 0.6764
  R=1 triangle counts at target (0.2, 0.1, 0.05): 208, 861, 3474
  R=2 triangle counts at target (0.2, 0.1, 0.05): 861, 3474, 13912
  boundary node radius error ~ 2e-16
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from otlab.meshing import DiskMesh, build_mesh


class TestBuildContracts:
    def test_coarse_unit_disk(self):
        m = build_mesh(1.0, 0.5)
        assert m.n_triangles == 27
        assert m.n_triangles >= 4
        deficit = math.pi - m.area
        assert 0.0 < deficit < 0.5 ** 2
        assert m.h <= 1.5 * 0.5

    def test_halving_quadruples_triangles(self):
        for R, lo, hi in ((1.0, 208, 861), (2.0, 861, 3474)):
            assert build_mesh(R, 0.2).n_triangles == lo
            assert build_mesh(R, 0.1).n_triangles == hi
            assert 0.8 * 4 <= hi / lo <= 1.2 * 4

    def test_boundary_nodes_on_circle(self):
        for R, h in ((1.0, 0.3), (2.5, 0.1)):
            m = build_mesh(R, h)
            rb = np.linalg.norm(m.nodes[m.boundary_nodes], axis=1)
            assert np.abs(rb - R).max() <= 1e-10

    def test_diameter_bound_across_scales(self):
        for R, h in ((1.0, 0.2), (2.0, 0.1), (2.5, 0.1), (3.0, 0.25)):
            m = build_mesh(R, h)
            assert m.h <= 1.5 * h

    def test_area_converges_quadratically(self):
        deficits = [math.pi * 4.0 - build_mesh(2.0, h).area for h in (0.2, 0.1)]
        assert deficits[1] > 0.0
        assert 2.5 <= deficits[0] / deficits[1] <= 6.0

    def test_rejects_bad_target(self):
        with pytest.raises(ValueError):
            build_mesh(1.0, 1.5)
        with pytest.raises(ValueError):
            build_mesh(1.0, 0.0)
        with pytest.raises(ValueError):
            build_mesh(-1.0, 0.1)

    def test_deterministic(self):
        a = build_mesh(2.0, 0.15)
        b = build_mesh(2.0, 0.15)
        assert a.nodes.tobytes() == b.nodes.tobytes()
        assert a.triangles.tobytes() == b.triangles.tobytes()
        assert a.boundary_edges.tobytes() == b.boundary_edges.tobytes()


class TestGeometry:
    def test_orientation_and_positivity(self):
        m = build_mesh(1.5, 0.2)
        p0, p1, p2 = (m.nodes[m.triangles[:, k]] for k in range(3))
        d1, d2 = p1 - p0, p2 - p0
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        assert np.all(det > 0.0)
        assert np.allclose(m.areas, 0.5 * det)

    def test_hat_gradients_sum_to_zero(self):
        m = build_mesh(1.0, 0.3)
        assert np.abs(m.shape_gradients.sum(axis=1)).max() < 1e-12

    def test_hat_gradient_reproduces_linear(self):
        # interpolating x + 2y triangle-wise must give gradient (1, 2)
        m = build_mesh(1.0, 0.3)
        vals = m.nodes[:, 0] + 2.0 * m.nodes[:, 1]
        g = np.einsum("tiv,ti->tv", m.shape_gradients, vals[m.triangles])
        assert np.abs(g - np.array([1.0, 2.0])).max() < 1e-10

    def test_lumped_mass_totals_area(self):
        m = build_mesh(2.0, 0.2)
        assert math.isclose(float(m.lumped_mass.sum()), m.area, rel_tol=1e-12)
        assert np.all(m.lumped_mass > 0.0)

    def test_boundary_edges_walk_counterclockwise(self):
        m = build_mesh(1.0, 0.2)
        th = m.boundary_angles
        assert np.all(np.diff(th) > 0.0)
        assert np.array_equal(m.boundary_edges[:, 1],
                              np.roll(m.boundary_edges[:, 0], -1))

    def test_boundary_normals_outward_unit(self):
        m = build_mesh(2.0, 0.2)
        n = m.boundary_normals
        assert np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)
        mids = 0.5 * (m.nodes[m.boundary_edges[:, 0]] +
                      m.nodes[m.boundary_edges[:, 1]])
        assert np.all(np.sum(n * mids, axis=1) > 0.0)

    def test_boundary_arcs_close_the_circle(self):
        m = build_mesh(1.0, 0.25)
        th = m.boundary_angles
        gaps = np.diff(np.concatenate([th, [th[0] + 2.0 * math.pi]]))
        assert math.isclose(float(gaps.sum()), 2.0 * math.pi, rel_tol=1e-12)


class TestPointLocation:
    def test_locate_finds_containing_triangle(self):
        m = build_mesh(1.0, 0.2)
        rng = np.random.default_rng(7)
        pts = rng.uniform(-0.6, 0.6, size=(50, 2))
        idx = m.locate(pts)
        assert np.all(idx >= 0)
        # barycentric coordinates of each point in its triangle lie in [0, 1]
        tri = m.triangles[idx]
        a = m.nodes[tri[:, 0]]
        T = np.stack([m.nodes[tri[:, 1]] - a, m.nodes[tri[:, 2]] - a], axis=2)
        lam = np.linalg.solve(T, (pts - a)[..., None])[..., 0]
        assert np.all(lam > -1e-9)
        assert np.all(lam.sum(axis=1) < 1.0 + 1e-9)

    def test_locate_outside_is_negative(self):
        m = build_mesh(1.0, 0.3)
        assert m.locate([[2.0, 0.0]])[0] == -1

    def test_nearest_node_on_a_node(self):
        m = build_mesh(1.0, 0.3)
        assert m.nearest_node(m.nodes[5:6])[0] == 5


class TestValidation:
    def test_degenerate_triangle_rejected(self):
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError, match="degenerate"):
            DiskMesh(1.0, nodes, np.array([[0, 1, 2], [0, 1, 3]]),
                     np.array([[1, 2]]), 0.5)

    def test_clockwise_triangle_rejected(self):
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError):
            DiskMesh(1.0, nodes, np.array([[0, 2, 1]]), np.array([[1, 2]]), 0.5)

    def test_shape_checks(self):
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        tris = np.array([[0, 1, 2]])
        with pytest.raises(ValueError):
            DiskMesh(0.0, nodes, tris, np.array([[1, 2]]), 0.5)
        with pytest.raises(ValueError):
            DiskMesh(1.0, nodes, np.zeros((0, 3), dtype=int),
                     np.array([[1, 2]]), 0.5)
        with pytest.raises(ValueError):
            DiskMesh(1.0, nodes, tris, np.array([1, 2]), 0.5)


class TestSerialization:
    def test_csv_pair_roundtrippable_text(self, tmp_path):
        m = build_mesh(1.0, 0.4)
        np_, tp = tmp_path / "nodes.csv", tmp_path / "tris.csv"
        m.to_csv(np_, tp)
        nlines = np_.read_text().splitlines()
        tlines = tp.read_text().splitlines()
        assert nlines[0] == "node_id,x,y"
        assert tlines[0] == "triangle_id,v0,v1,v2"
        assert len(nlines) == m.n_nodes + 1
        assert len(tlines) == m.n_triangles + 1
        parsed = np.array([[float(v) for v in ln.split(",")[1:]]
                           for ln in nlines[1:]])
        assert np.array_equal(parsed, m.nodes)

    def test_csv_deterministic(self, tmp_path):
        m = build_mesh(1.0, 0.4)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        m.to_csv(p1, tmp_path / "ta.csv")
        m.to_csv(p2, tmp_path / "tb.csv")
        assert p1.read_bytes() == p2.read_bytes()


@settings(max_examples=15, deadline=None)
@given(R=st.floats(0.5, 4.0), frac=st.floats(0.05, 0.4))
def test_mesh_contract_properties(R, frac):
    h = R * frac
    m = build_mesh(R, h)
    assert m.h <= 1.5 * h
    assert 0.0 < m.area < math.pi * R * R
    rb = np.linalg.norm(m.nodes[m.boundary_nodes], axis=1)
    assert np.abs(rb - R).max() <= 1e-10 * max(1.0, R)
    assert np.all(m.areas > 0.0)
