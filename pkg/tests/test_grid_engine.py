"""Tests for the brute-force grid engine."""

from __future__ import annotations

import math

import numpy as np
import pytest

from qbflow.core_model import PhysParams
from qbflow import gaussian_engine as ge
from qbflow import grid_engine as gr


PAR = PhysParams(D=2.0)


def _cat():
    return ge.make_cat_state(separation=4.0, p0=-2.0, sigma=0.7)


class TestAxes:
    def test_axis_validation(self):
        with pytest.raises(ValueError, match="inverted"):
            gr.Axis(1.0, -1.0, 64)
        with pytest.raises(ValueError, match="at least 2"):
            gr.Axis(0.0, 1.0, 1)

    def test_grid_shape_checked(self):
        with pytest.raises(ValueError, match="shape"):
            gr.PhaseSpaceGrid(gr.Axis(0, 1, 4), gr.Axis(0, 1, 4), np.zeros((3, 4)))

    def test_default_axes_cover_drift(self):
        s = ge.make_gaussian_state(p0=-5.0, q0=2.0, sigma=1.0)
        pax, qax = gr.default_axes(s, PAR, t_max=2.0)
        assert pax.lo < -5.0 < pax.hi
        assert qax.lo < 2.0 - 10.0  # classical drift end plus padding
        assert qax.hi > 2.0


class TestWignerTransform:
    def test_matches_closed_form(self):
        ax = gr.Axis(-14.0, 10.0, 256)
        rho = gr.density_matrix_from_state(_cat(), ax)
        w = gr.wigner_from_density(rho)
        pp, qq = np.meshgrid(w.p.points, w.q.points, indexing="ij")
        ref = ge.evaluate_state(_cat(), pp, qq)
        assert np.abs(w.values - ref).max() < 1e-12 * np.abs(ref).max()

    def test_mass_and_trace_agree(self):
        ax = gr.Axis(-14.0, 10.0, 256)
        rho = gr.density_matrix_from_state(_cat(), ax)
        w = gr.wigner_from_density(rho)
        assert math.isclose(rho.trace(), 1.0, rel_tol=1e-9)
        assert math.isclose(w.integrate(), 1.0, rel_tol=1e-9)

    def test_density_matrix_hermitian(self):
        ax = gr.Axis(-14.0, 10.0, 128)
        rho = gr.density_matrix_from_state(_cat(), ax)
        assert rho.hermiticity_defect() < 1e-14


class TestQFunction:
    def test_nonnegative_for_cat(self):
        pax, qax = gr.default_axes(_cat(), PAR, n=256)
        w = gr.wigner_grid_from_state(_cat(), pax, qax)
        assert w.values.min() < 0.0  # genuinely negative input
        q_rep = gr.q_function_from_wigner(w, s=1.0)
        assert q_rep.values.min() >= -1e-9
        # the smear kernel's own tail leaks past the grid edge, so the mass
        # tolerance is looser than the raw Wigner one
        assert math.isclose(q_rep.integrate(), 1.0, rel_tol=1e-4)

    def test_rejects_bad_squeeze(self):
        pax, qax = gr.default_axes(_cat(), PAR, n=64)
        w = gr.wigner_grid_from_state(_cat(), pax, qax)
        with pytest.raises(ValueError, match="positive"):
            gr.q_function_from_wigner(w, s=0.0)


class TestWignerPropagation:
    def test_zero_time_is_identity(self):
        pax, qax = gr.default_axes(_cat(), PAR, n=64)
        w = gr.wigner_grid_from_state(_cat(), pax, qax)
        assert gr.propagate_wigner_qbm(w, 0.0, PAR) is w

    def test_fast_agrees_with_direct(self):
        g = ge.make_gaussian_state(p0=1.0, q0=-1.0, sigma=0.9)
        pax, qax = gr.default_axes(g, PAR, t_max=1.0, n=144)
        w = gr.wigner_grid_from_state(g, pax, qax)
        a = gr.propagate_wigner_qbm(w, 1.0, PAR, method="fast")
        b = gr.propagate_wigner_qbm(w, 1.0, PAR, method="direct")
        assert np.abs(a.values - b.values).max() < 1e-3 * np.abs(b.values).max()

    def test_mass_conserved(self):
        pax, qax = gr.default_axes(_cat(), PAR, t_max=1.5, n=256)
        w = gr.wigner_grid_from_state(_cat(), pax, qax)
        out = gr.propagate_wigner_qbm(w, 1.5, PAR)
        assert math.isclose(out.integrate(), w.integrate(), rel_tol=1e-6)

    def test_leaking_grid_rejected(self):
        g = ge.make_gaussian_state(p0=4.0, q0=0.0, sigma=1.0)
        pax = gr.Axis(-2.0, 10.0, 96)
        qax = gr.Axis(-3.0, 3.0, 96)  # drift of 8 leaves this box
        w = gr.wigner_grid_from_state(g, pax, qax)
        with pytest.raises(ValueError, match="grid too small"):
            gr.propagate_wigner_qbm(w, 2.0, PAR)

    def test_direct_guards_small_time(self):
        pax, qax = gr.default_axes(_cat(), PAR, t_max=1.0, n=144)
        w = gr.wigner_grid_from_state(_cat(), pax, qax)
        with pytest.raises(ValueError, match="too coarse"):
            gr.propagate_wigner_qbm(w, 0.01, PAR, method="direct")

    def test_dissipation_not_supported_on_grid(self):
        pax, qax = gr.default_axes(_cat(), PAR, n=64)
        w = gr.wigner_grid_from_state(_cat(), pax, qax)
        with pytest.raises(ValueError, match="gamma"):
            gr.propagate_wigner_qbm(w, 0.5, PhysParams(D=1.0, gamma=0.2))


class TestRestrictedPropagation:
    def test_step_count_must_divide(self):
        pax, qax = gr.default_axes(_cat(), PAR, n=64)
        w = gr.wigner_grid_from_state(_cat(), pax, qax)
        with pytest.raises(ValueError, match="whole number"):
            gr.propagate_wigner_restricted(w, 1.0, 0.3, PAR)

    def test_right_mover_keeps_norm(self):
        # fast right-moving packet far from the boundary: truncation is idle
        g = ge.make_gaussian_state(p0=6.0, q0=4.0, sigma=0.8)
        pax = gr.Axis(-2.0, 14.0, 192)
        qax = gr.Axis(-4.0, 24.0, 192)
        w = gr.wigner_grid_from_state(g, pax, qax)
        out = gr.propagate_wigner_restricted(w, 2.0, 0.25, PhysParams(D=0.5))
        assert out.integrate() > 0.995

    def test_left_mover_loses_norm(self):
        g = ge.make_gaussian_state(p0=-4.0, q0=3.0, sigma=0.8)
        pax = gr.Axis(-12.0, 4.0, 192)
        qax = gr.Axis(-14.0, 10.0, 192)
        w = gr.wigner_grid_from_state(g, pax, qax)
        out = gr.propagate_wigner_restricted(w, 2.0, 0.25, PhysParams(D=0.5))
        assert out.integrate() < 0.1

    def test_eps_refinement_converges(self):
        g = ge.make_gaussian_state(p0=-3.0, q0=4.0, sigma=1.0)
        pax = gr.Axis(-11.0, 5.0, 192)
        qax = gr.Axis(-10.0, 12.0, 192)
        w = gr.wigner_grid_from_state(g, pax, qax)
        par = PhysParams(D=0.5)
        coarse = gr.propagate_wigner_restricted(w, 2.0, 0.2, par).integrate()
        fine = gr.propagate_wigner_restricted(w, 2.0, 0.1, par).integrate()
        assert abs(fine - coarse) < 0.02


class TestDensityPropagation:
    def test_matches_engine_for_cat(self):
        ax = gr.Axis(-14.0, 10.0, 256)
        rho0 = gr.density_matrix_from_state(_cat(), ax)
        t = 0.7
        rho_t = gr.propagate_density_qbm(rho0, t, PAR)
        ref = gr.density_matrix_from_state(ge.propagate_mixture(_cat(), t, PAR), ax)
        scale = np.abs(ref.values).max()
        assert np.abs(rho_t.values - ref.values).max() < 1e-4 * scale
        assert abs(rho_t.trace() - 1.0) < 1e-4
        assert rho_t.hermiticity_defect() < 1e-12

    def test_free_unitary_case(self):
        g = ge.make_gaussian_state(p0=1.5, q0=-3.0, sigma=0.9)
        ax = gr.Axis(-12.0, 12.0, 220)
        rho0 = gr.density_matrix_from_state(g, ax)
        rho_t = gr.propagate_density_qbm(rho0, 1.2, PhysParams(D=0.0))
        ref = gr.density_matrix_from_state(
            ge.propagate_mixture(g, 1.2, PhysParams(D=0.0)), ax)
        assert np.abs(rho_t.values - ref.values).max() < 1e-4 * np.abs(ref.values).max()

    def test_diagonal_route_matches_full(self):
        ax = gr.Axis(-14.0, 10.0, 192)
        rho0 = gr.density_matrix_from_state(_cat(), ax)
        t = 0.5
        full = gr.propagate_density_qbm(rho0, t, PAR).diagonal()
        diag = gr.propagated_diagonal(rho0, t, PAR)
        assert np.abs(full - diag).max() < 1e-10 * full.max()

    def test_rejects_dissipation(self):
        ax = gr.Axis(-5.0, 5.0, 64)
        rho = gr.density_matrix_from_state(ge.make_gaussian_state(0, 0, 1.0), ax)
        with pytest.raises(ValueError, match="gamma"):
            gr.propagate_density_qbm(rho, 0.5, PhysParams(D=1.0, gamma=0.1))


class TestReductions:
    def test_slice_at_q0_interpolates(self):
        pax = gr.Axis(-1.0, 1.0, 8)
        qax = gr.Axis(-0.95, 1.05, 9)  # q = 0 falls between columns
        qv = qax.points
        vals = np.tile(2.0 * qv + 1.0, (8, 1))
        w = gr.PhaseSpaceGrid(pax, qax, vals)
        assert np.allclose(gr.slice_at_q0(w), 1.0)

    def test_slice_requires_zero_inside(self):
        w = gr.PhaseSpaceGrid(gr.Axis(-1, 1, 4), gr.Axis(1.0, 2.0, 4), np.zeros((4, 4)))
        with pytest.raises(ValueError, match="outside"):
            gr.slice_at_q0(w)

    def test_region_integral_matches_full(self):
        pax, qax = gr.default_axes(_cat(), PAR, n=128)
        w = gr.wigner_grid_from_state(_cat(), pax, qax)
        full = w.integrate()
        region = gr.integrate_region(w, p_range=(pax.lo, pax.hi), q_range=(qax.lo, qax.hi))
        assert math.isclose(full, region, rel_tol=1e-12)

    def test_csv_export_round_trip(self, tmp_path):
        pax = gr.Axis(-1.0, 1.0, 3)
        qax = gr.Axis(0.0, 1.0, 2)
        w = gr.PhaseSpaceGrid(pax, qax, np.arange(6.0).reshape(3, 2))
        path = tmp_path / "grid.csv"
        gr.export_phase_space_csv(w, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("#")
        assert "p,q,w" in lines
        data = [ln for ln in lines if not ln.startswith("#")][1:]
        assert len(data) == 6
        assert data[-1] == "1.0,1.0,5.0"
