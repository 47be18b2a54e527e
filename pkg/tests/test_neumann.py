"""Dual Neumann solver oracles and diagnostics contracts.

Frozen reference values, measured at 2048-bin boundary histograms with
solver tolerance 1e-9 (nodal max errors against the closed forms):
  cos data, p=2, R=1:      3.21e-3 (h=0.2), 8.29e-4 (h=0.1), ratio 3.87
  unit flux p=1.5, R=1:    4.95e-3 / 1.21e-3, ratio 4.09
  unit flux p=2,   R=1:    7.27e-3 / 1.96e-3, ratio 3.72
  unit flux p=3,   R=1:    8.67e-3 / 2.66e-3, ratio 3.26
  unit flux p=3, R=1.5, h=0.15 vs r^p/(p R^{p-1}): 3.99e-3
  cos energy ratio (int |D phi|^2 over int cos^2 ds): 1.000005 at h=0.2
  interior sup ratio for the same instance: 0.320 (= 1/pi up to O(h^2))
  holder ratio, unit flux p=3, ball 0.7: 0.7367 (h=0.2), 0.8781 (h=0.1)
  boundary flux balance defect, p=3 R=1.5: -0.552 (h=0.2), -0.280 (h=0.1)
  mollification ladder (0.4, 0.2, 0.1, 0.05) on cos data: fitted s = 3.996
"""
import json
import math

import numpy as np
import pytest

from otlab.costs import CostSpec, dual_grad
from otlab.measures import Ball, BoundaryData, mollify_boundary
from otlab.meshing import build_mesh
from otlab.neumann import (
    DiagnosticsReport,
    NeumannProblem,
    ScalarField,
    flux_field,
    holder_product_check,
    net_boundary_flux,
    regularity_diagnostics,
    solve_neumann,
)


def cos_data(R, nb=2048):
    """Histogram with bin masses int R cos(theta) dtheta, exactly."""
    edges = 2.0 * np.pi * np.arange(nb + 1) / nb
    return BoundaryData(R, R * (np.sin(edges[1:]) - np.sin(edges[:-1])),
                        signed=True)


def unit_data(R, nb=2048):
    """Histogram of the constant density 1 on the circle of radius R."""
    return BoundaryData(R, np.full(nb, R * 2.0 * np.pi / nb), signed=True)


class TestProblemConstruction:
    def test_c_r_filled_in(self):
        mesh = build_mesh(1.0, 0.4)
        prob = NeumannProblem(mesh, CostSpec.radial(2.0), unit_data(1.0))
        assert math.isclose(prob.c_R, -2.0 * math.pi / math.pi, rel_tol=1e-12)

    def test_compatibility_holds_after_construction(self):
        mesh = build_mesh(1.5, 0.4)
        g = unit_data(1.5)
        prob = NeumannProblem(mesh, CostSpec.radial(3.0), g)
        assert abs(g.total_mass + prob.c_R * math.pi * 1.5 ** 2) <= 1e-10

    def test_explicit_consistent_c_r_accepted(self):
        mesh = build_mesh(1.0, 0.4)
        g = unit_data(1.0)
        prob = NeumannProblem(mesh, CostSpec.radial(2.0), g,
                              c_R=-g.total_mass / math.pi)
        assert prob.c_R < 0.0

    def test_incompatible_c_r_rejected(self):
        mesh = build_mesh(1.0, 0.4)
        with pytest.raises(ValueError, match="incompatible"):
            NeumannProblem(mesh, CostSpec.radial(2.0), unit_data(1.0), c_R=0.0)

    def test_radius_mismatch_rejected(self):
        mesh = build_mesh(1.0, 0.4)
        with pytest.raises(ValueError):
            NeumannProblem(mesh, CostSpec.radial(2.0), unit_data(1.2))

    def test_line_data_rejected(self):
        mesh = build_mesh(1.0, 0.4)
        line = BoundaryData(1.0, [0.3, 0.7], dim=1)
        with pytest.raises(ValueError):
            NeumannProblem(mesh, CostSpec.radial(2.0), line)


class TestNetFlux:
    def test_signed_difference(self):
        g = BoundaryData(2.0, np.full(16, 0.1))
        f = BoundaryData(2.0, np.full(16, 0.3))
        net = net_boundary_flux(g, f)
        assert net.signed
        assert np.allclose(net.masses, -0.2)
        assert math.isclose(net.total_mass, g.total_mass - f.total_mass,
                            abs_tol=1e-12)

    def test_mismatched_binning_rejected(self):
        g = BoundaryData(2.0, np.full(16, 0.1))
        with pytest.raises(ValueError):
            net_boundary_flux(g, BoundaryData(2.0, np.full(8, 0.2)))
        with pytest.raises(ValueError):
            net_boundary_flux(g, BoundaryData(2.5, np.full(16, 0.2)))


class TestScalarField:
    def test_mean_zero_enforced(self):
        mesh = build_mesh(1.0, 0.4)
        with pytest.raises(ValueError, match="zero"):
            ScalarField(mesh, np.ones(mesh.n_nodes))
        phi = ScalarField.projected(mesh, np.ones(mesh.n_nodes))
        assert np.abs(phi.values).max() < 1e-14

    def test_length_and_finiteness_checked(self):
        mesh = build_mesh(1.0, 0.4)
        with pytest.raises(ValueError):
            ScalarField(mesh, np.zeros(3))
        bad = np.zeros(mesh.n_nodes)
        bad[0] = math.nan
        with pytest.raises(ValueError):
            ScalarField(mesh, bad)

    def test_linear_field_interpolates_exactly(self):
        mesh = build_mesh(1.0, 0.25)
        phi = ScalarField.projected(mesh, 2.0 * mesh.nodes[:, 0]
                                    - mesh.nodes[:, 1])
        shift = phi.values[0] - (2.0 * mesh.nodes[0, 0] - mesh.nodes[0, 1])
        pts = np.array([[0.2, 0.1], [-0.4, 0.3], [0.0, 0.0]])
        expect = 2.0 * pts[:, 0] - pts[:, 1] + shift
        assert np.abs(phi.evaluate(pts) - expect).max() < 1e-12
        assert np.abs(phi.gradient(pts) - np.array([2.0, -1.0])).max() < 1e-10

    def test_outside_points_use_nearest_node(self):
        mesh = build_mesh(1.0, 0.3)
        phi = ScalarField.projected(mesh, mesh.nodes[:, 0])
        far = np.array([[3.0, 0.0]])
        rim = int(mesh.nearest_node(far)[0])
        assert phi.evaluate(far)[0] == phi.values[rim]

    def test_nodal_gradients_exact_for_linear(self):
        mesh = build_mesh(1.0, 0.3)
        phi = ScalarField.projected(mesh, mesh.nodes[:, 0])
        assert np.abs(phi.nodal_gradients - np.array([1.0, 0.0])).max() < 1e-10

    def test_csv_layout_and_determinism(self, tmp_path):
        mesh = build_mesh(1.0, 0.4)
        phi = ScalarField.projected(mesh, mesh.nodes[:, 1])
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        phi.to_csv(p1)
        phi.to_csv(p2)
        lines = p1.read_text().splitlines()
        assert lines[0] == "node_id,x,y,phi"
        assert len(lines) == mesh.n_nodes + 1
        assert p1.read_bytes() == p2.read_bytes()


class TestSolveOracles:
    def test_zero_data_gives_zero_field(self):
        mesh = build_mesh(1.0, 0.3)
        g = BoundaryData(1.0, np.zeros(64), signed=True)
        phi = solve_neumann(NeumannProblem(mesh, CostSpec.radial(3.0), g))
        assert np.all(phi.values == 0.0)

    def test_cosine_oracle_p2(self):
        errs = []
        for h in (0.2, 0.1):
            mesh = build_mesh(1.0, h)
            prob = NeumannProblem(mesh, CostSpec.radial(2.0), cos_data(1.0))
            phi = solve_neumann(prob, tol=1e-9)
            exact = ScalarField.projected(mesh, mesh.nodes[:, 0])
            errs.append(float(np.abs(phi.values - exact.values).max()))
        assert errs[0] < 4e-3
        assert 3.0 <= errs[0] / errs[1] <= 5.0

    @pytest.mark.parametrize("p,coarse_bound,ratio_lo", [
        (1.5, 6e-3, 3.4),
        (2.0, 9e-3, 3.2),
        (3.0, 1.1e-2, 2.9),
    ])
    def test_radial_oracle_unit_flux(self, p, coarse_bound, ratio_lo):
        errs = []
        for h in (0.2, 0.1):
            mesh = build_mesh(1.0, h)
            prob = NeumannProblem(mesh, CostSpec.radial(p), unit_data(1.0))
            phi = solve_neumann(prob, tol=1e-9)
            r = np.linalg.norm(mesh.nodes, axis=1)
            exact = ScalarField.projected(mesh, r ** p / p)
            errs.append(float(np.abs(phi.values - exact.values).max()))
        assert errs[0] < coarse_bound
        assert ratio_lo <= errs[0] / errs[1] <= 5.0

    def test_radial_closed_form_nonunit_radius(self):
        R, p = 1.5, 3.0
        mesh = build_mesh(R, 0.15)
        prob = NeumannProblem(mesh, CostSpec.radial(p), unit_data(R, 1024))
        phi = solve_neumann(prob, tol=1e-9)
        r = np.linalg.norm(mesh.nodes, axis=1)
        exact = ScalarField.projected(mesh, r ** p / (p * R ** (p - 1.0)))
        assert np.abs(phi.values - exact.values).max() < 8e-3

    def test_p2_matches_direct_linear_solve(self):
        # independent dense assembly of the same quadratic problem
        mesh = build_mesh(1.0, 0.2)
        g = unit_data(1.0, 1024)
        prob = NeumannProblem(mesh, CostSpec.radial(2.0), g)
        phi = solve_neumann(prob, tol=1e-10)

        n = mesh.n_nodes
        K = np.zeros((n, n))
        for tri in mesh.triangles:
            a, b, c = mesh.nodes[tri]
            twice = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            grads = [(b - c), (c - a), (a - b)]
            grads = [np.array([-v[1], v[0]]) / twice for v in grads]
            area = 0.5 * abs(twice)
            for i in range(3):
                for j in range(3):
                    K[tri[i], tri[j]] += area * float(grads[i] @ grads[j])
        th = mesh.boundary_angles
        arcs = np.diff(np.concatenate([th, [th[0] + 2.0 * math.pi]]))
        load = np.zeros(n)
        bn = mesh.boundary_nodes
        load[bn] += 0.5 * arcs
        load[np.roll(bn, -1)] += 0.5 * arcs
        mass = mesh.lumped_mass
        aug = np.zeros((n + 1, n + 1))
        aug[:n, :n] = K
        aug[:n, n] = mass
        aug[n, :n] = mass
        rhs = np.append(load + prob.c_R * mass, 0.0)
        direct = np.linalg.solve(aug, rhs)[:n]
        direct -= (mass @ direct) / mass.sum()
        assert np.abs(phi.values - direct).max() < 1e-8

    def test_deterministic_resolve(self):
        mesh = build_mesh(1.0, 0.2)
        prob = NeumannProblem(mesh, CostSpec.radial(3.0), unit_data(1.0))
        a = solve_neumann(prob, tol=1e-9)
        b = solve_neumann(prob, tol=1e-9)
        assert a.values.tobytes() == b.values.tobytes()

    def test_anisotropic_solve_converges(self):
        mesh = build_mesh(1.0, 0.25)
        spec = CostSpec.anisotropic(2.5, [[1.3, 0.2], [0.2, 0.8]], 6.0)
        prob = NeumannProblem(mesh, spec, unit_data(1.0, 256))
        phi = solve_neumann(prob, tol=1e-7)
        assert np.all(np.isfinite(phi.values))
        assert np.all(np.isfinite(flux_field(phi, spec)))

    def test_iteration_cap_raises_with_residual(self):
        mesh = build_mesh(1.0, 0.2)
        prob = NeumannProblem(mesh, CostSpec.radial(3.0), unit_data(1.0))
        with pytest.raises(ArithmeticError, match="residual"):
            solve_neumann(prob, tol=1e-14, max_iter=2)

    def test_parameter_validation(self):
        mesh = build_mesh(1.0, 0.4)
        prob = NeumannProblem(mesh, CostSpec.radial(2.0), unit_data(1.0))
        with pytest.raises(ValueError):
            solve_neumann(prob, tol=0.0)
        with pytest.raises(ValueError):
            solve_neumann(prob, max_iter=0)


class TestFluxField:
    def test_zero_field_zero_flux(self):
        mesh = build_mesh(1.0, 0.3)
        phi = ScalarField(mesh, np.zeros(mesh.n_nodes))
        assert np.all(flux_field(phi, CostSpec.radial(3.0)) == 0.0)

    def test_p2_flux_is_the_gradient(self):
        mesh = build_mesh(1.0, 0.3)
        phi = ScalarField.projected(mesh, mesh.nodes[:, 0] ** 2)
        fl = flux_field(phi, CostSpec.radial(2.0))
        assert np.array_equal(fl, phi.element_gradients)

    def test_cosine_flux_is_unit_x(self):
        mesh = build_mesh(1.0, 0.1)
        prob = NeumannProblem(mesh, CostSpec.radial(2.0), cos_data(1.0))
        phi = solve_neumann(prob, tol=1e-9)
        fl = flux_field(phi, prob.cost)
        assert np.abs(fl - np.array([1.0, 0.0])).max() < 5e-3

    def test_radial_flux_magnitude(self):
        # unit boundary flux forces |grad c*(D phi)| = r / R
        R, p = 1.0, 3.0
        mesh = build_mesh(R, 0.1)
        prob = NeumannProblem(mesh, CostSpec.radial(p), unit_data(R))
        phi = solve_neumann(prob, tol=1e-9)
        fl = flux_field(phi, prob.cost)
        rc = np.linalg.norm(mesh.centroids, axis=1)
        sel = rc > 0.15
        dev = np.linalg.norm(fl[sel], axis=1) - rc[sel] / R
        assert np.abs(dev).max() < 0.12

    def test_boundary_flux_balance_first_order(self):
        defects = []
        for h in (0.2, 0.1):
            R = 1.5
            mesh = build_mesh(R, h)
            prob = NeumannProblem(mesh, CostSpec.radial(3.0),
                                  unit_data(R, 1024))
            phi = solve_neumann(prob, tol=1e-9)
            fl = flux_field(phi, prob.cost)
            owner = {}
            for t, tri in enumerate(mesh.triangles):
                for k in range(3):
                    owner[frozenset((int(tri[k]), int(tri[(k + 1) % 3])))] = t
            total = 0.0
            for edge, nrm in zip(mesh.boundary_edges, mesh.boundary_normals):
                t = owner[frozenset((int(edge[0]), int(edge[1])))]
                length = np.linalg.norm(mesh.nodes[edge[1]]
                                        - mesh.nodes[edge[0]])
                total += float(fl[t] @ nrm) * length
            defects.append(abs(total + prob.c_R * math.pi * R * R))
        assert defects[1] < 0.35
        assert 1.4 <= defects[0] / defects[1] <= 2.8


class TestDiagnostics:
    def test_zero_data_zero_numerators(self):
        mesh = build_mesh(1.0, 0.3)
        g = BoundaryData(1.0, np.zeros(64), signed=True)
        prob = NeumannProblem(mesh, CostSpec.radial(2.0), g)
        phi = solve_neumann(prob)
        rep = regularity_diagnostics(prob, phi)
        assert rep.gradient_energy == 0.0
        assert rep.dual_cost_energy == 0.0
        assert rep.interior_sup == 0.0
        assert rep.energy_ratio == 0.0

    def test_cosine_energy_ratio_is_one(self):
        mesh = build_mesh(1.0, 0.2)
        prob = NeumannProblem(mesh, CostSpec.radial(2.0), cos_data(1.0))
        phi = solve_neumann(prob, tol=1e-9)
        rep = regularity_diagnostics(prob, phi)
        assert 0.99 <= rep.energy_ratio <= 1.01
        # c(D phi) is half |D phi|^2 at p = 2
        assert math.isclose(rep.dual_energy_ratio, rep.energy_ratio / 2.0,
                            rel_tol=1e-12)
        assert 0.25 <= rep.interior_ratio <= 0.4
        assert rep.beta == 0.5
        assert math.isclose(rep.interior_radius, 0.5)

    def test_mollification_ladder_fits_positive_exponent(self):
        mesh = build_mesh(1.0, 0.1)
        g = cos_data(1.0)
        prob = NeumannProblem(mesh, CostSpec.radial(2.0), g)
        phi = solve_neumann(prob, tol=1e-9)
        pairs = []
        for r in (0.4, 0.2, 0.1, 0.05):
            smooth = mollify_boundary(g, r)
            pairs.append((r, solve_neumann(NeumannProblem(mesh, prob.cost,
                                                          smooth), tol=1e-9)))
        rep = regularity_diagnostics(prob, phi, pairs)
        assert rep.fitted_exponent > 0.5
        assert len(rep.mollification) == 4
        assert all(gap > 0.0 for _, gap in rep.mollification)
        ratios = [v for _, v in rep.mollification_ratios()]
        assert max(ratios) / min(ratios) < 3.0

    def test_underdetermined_fit_is_nan(self):
        mesh = build_mesh(1.0, 0.3)
        prob = NeumannProblem(mesh, CostSpec.radial(2.0), cos_data(1.0, 256))
        phi = solve_neumann(prob, tol=1e-9)
        rep = regularity_diagnostics(prob, phi, [(0.2, phi)])
        assert math.isnan(rep.fitted_exponent)

    def test_foreign_mesh_companion_rejected(self):
        mesh = build_mesh(1.0, 0.3)
        other = build_mesh(1.0, 0.2)
        prob = NeumannProblem(mesh, CostSpec.radial(2.0), cos_data(1.0, 256))
        phi = solve_neumann(prob, tol=1e-9)
        alien = ScalarField(other, np.zeros(other.n_nodes))
        with pytest.raises(ValueError):
            regularity_diagnostics(prob, phi, [(0.1, alien)])

    def test_json_report_roundtrip(self, tmp_path):
        rep = DiagnosticsReport(
            p=2.0, beta=0.5, interior_radius=0.5, gradient_energy=3.1,
            dual_cost_energy=1.55, interior_sup=1.0, boundary_lp=3.14,
            mollification=((0.2, 0.01),), fitted_exponent=math.nan)
        path = tmp_path / "report.json"
        rep.to_json(path)
        loaded = json.loads(path.read_text())
        assert loaded["fitted_exponent"] is None
        assert loaded["mollification"][0]["gap"] == 0.01
        assert math.isclose(loaded["energy_ratio"], 3.1 / 3.14)


class TestHolderProduct:
    def test_exactly_linear_field_scores_zero(self):
        mesh = build_mesh(1.0, 0.2)
        phi = ScalarField.projected(mesh, mesh.nodes[:, 0])
        out = holder_product_check(phi, CostSpec.radial(2.0),
                                   Ball.at_origin(0.7))
        assert out == 0.0

    def test_radial_p3_ratio_finite(self):
        mesh = build_mesh(1.0, 0.1)
        spec = CostSpec.radial(3.0)
        phi = solve_neumann(NeumannProblem(mesh, spec, unit_data(1.0)),
                            tol=1e-9)
        out = holder_product_check(phi, spec, Ball.at_origin(0.7))
        assert 0.0 < out < 5.0

    def test_stable_under_refinement(self):
        spec = CostSpec.radial(3.0)
        vals = []
        for h in (0.2, 0.1):
            mesh = build_mesh(1.0, h)
            phi = solve_neumann(NeumannProblem(mesh, spec, unit_data(1.0)),
                                tol=1e-9)
            vals.append(holder_product_check(phi, spec, Ball.at_origin(0.7)))
        assert 0.5 <= vals[0] / vals[1] <= 2.0

    def test_tiny_ball_rejected(self):
        mesh = build_mesh(1.0, 0.3)
        phi = ScalarField(mesh, np.zeros(mesh.n_nodes))
        with pytest.raises(ValueError):
            holder_product_check(phi, CostSpec.radial(2.0),
                                 Ball.at_origin(1e-6))
