import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

import oracles
from qwlab.spectral import (
    GaugeField,
    apply_gauge,
    bcc_local_decomposition_check,
    bcc_project,
    dispersion,
    find_doublers,
    naive_fermion_energy,
    quasi_energy,
    reduce_to_bcc_zone,
    trace_map,
)
from qwlab.walk_core import CoinedWalk, Lattice, WaveState, build_preset, dense_operator, momentum_symbol

PI = np.pi


@pytest.fixture(scope="module")
def weyl_projection():
    walk = build_preset("weyl3d_right", extents=4)
    return walk, bcc_project(walk, n_grid=16)


class TestQuasiEnergy:
    @pytest.mark.parametrize("m,a", [(0.0, 0.1), (0.5, 0.1), (1.0, 0.05)])
    def test_dirac_closed_form(self, m, a):
        walk = build_preset("dirac1d", mass=m, spacing=a)
        p = np.linspace(-PI / a, PI / a, 256)
        ref = oracles.dirac1d_quasi_energies(m, a, p)
        # the band edge -pi/a is the same point as +pi/a; fold into (-pi/a, pi/a]
        ref = np.sort(np.where(np.isclose(ref, -PI / a, rtol=0, atol=1e-9), PI / a, ref), axis=-1)
        np.testing.assert_allclose(quasi_energy(walk, p), ref, atol=1e-12)

    def test_frozen_values(self):
        # arccos(cos(0.05) cos(p a)) / a at p = 0.3, 2.0, -7.0 with a = 0.1
        walk = build_preset("dirac1d", mass=0.5, spacing=0.1)
        e = quasi_energy(walk, np.array([0.3, 2.0, -7.0]))[:, 1]
        np.testing.assert_allclose(e, [0.58303086, 2.0607419, 7.01482439], atol=1e-8)

    def test_zero_momentum_massless(self):
        np.testing.assert_array_equal(quasi_energy(build_preset("dirac1d"), 0.0), [0.0, 0.0])

    def test_naive_fermion_reference(self):
        assert naive_fermion_energy(0.7, 0.5, 0.1) == pytest.approx(oracles.naive_fermion_energy(0.7, 0.5, 0.1))

    def test_strang_uses_its_time_step(self):
        walk = build_preset("strang_dirac1d", mass=0.5, spacing=0.01)
        e = quasi_energy(walk, 0.2)[1]
        assert e == pytest.approx(np.hypot(0.2, 0.5), rel=1e-3)

    def test_dispersion_unimodular(self):
        walk = build_preset("dirac2d", mass=0.3, extents=8)
        data = dispersion(walk)
        assert data.bands.shape == (64, 2)
        assert data.max_modulus_defect(walk) < 1e-12


class TestDoublers:
    @pytest.mark.parametrize(
        "name,count", [("dirac1d", 1), ("dirac2d", 2), ("weyl3d_right", 8), ("weyl3d_left", 8), ("hadamard1d", 2)]
    )
    @pytest.mark.parametrize("n_grid", [16, 32])
    def test_counts(self, name, count, n_grid):
        walk = build_preset(name, extents=4)
        assert find_doublers(walk, n_grid=n_grid).count == count

    def test_dirac2d_locations(self):
        rep = find_doublers(build_preset("dirac2d", extents=4))
        pts = sorted(tuple(np.round(np.abs(p), 6)) for p in rep.momenta)
        assert pts == [(0.0, 0.0), (round(PI, 6), round(PI, 6))]

    def test_weyl_quarter_points(self):
        rep = find_doublers(build_preset("weyl3d_right", extents=4))
        quarter = [p for p in rep.momenta if np.allclose(np.abs(p), PI / 2, atol=1e-6)]
        assert len(quarter) == 4

    def test_threshold_halving_stable(self):
        walk = build_preset("dirac2d", extents=4)
        assert find_doublers(walk, threshold=0.025).count == find_doublers(walk).count

    def test_massive_has_none(self):
        assert find_doublers(build_preset("dirac1d", mass=1.0)).count == 0


class TestTraceMap:
    def test_dirac2d_closed_form(self):
        walk = build_preset("dirac2d", extents=4)
        grid = np.random.default_rng(0).uniform(-PI, PI, size=(20, 2))
        np.testing.assert_allclose(trace_map(walk, grid), 2 * np.cos(grid[:, 0]) * np.cos(grid[:, 1]), atol=1e-12)

    def test_dirac2d_quarter_point(self):
        assert abs(trace_map(build_preset("dirac2d", extents=4), [[PI / 2, PI / 2]])[0]) < 1e-15

    @pytest.mark.parametrize("name,sign", [("weyl3d_right", -1), ("weyl3d_left", +1)])
    def test_weyl_closed_form(self, name, sign):
        grid = np.random.default_rng(1).uniform(-PI, PI, size=(20, 3))
        c, s = np.cos(grid), np.sin(grid)
        ref = 2 * (c.prod(axis=1) + sign * s.prod(axis=1))
        np.testing.assert_allclose(trace_map(build_preset(name, extents=4), grid), ref, atol=1e-12)

    def test_weyl_doubler_trace(self):
        assert trace_map(build_preset("weyl3d_right", extents=4), [[-PI / 2, PI / 2, PI / 2]])[0] == pytest.approx(2)

    def test_origin(self):
        assert trace_map(build_preset("spin1_3d", extents=4), [[0, 0, 0]])[0] == pytest.approx(3)


class TestBcc:
    def test_dirac2d_one_doubler(self):
        assert bcc_project(build_preset("dirac2d", extents=4)).doublers.count == 1

    def test_weyl_two_doublers(self):
        proj = bcc_project(build_preset("weyl3d_right", extents=4))
        assert proj.doublers.count == 2
        (second,) = proj.second_step_symbols
        np.testing.assert_allclose(second, -np.eye(2), atol=1e-10)

    def test_mixed_parity_rejected(self):
        lat = Lattice((4, 4), 1.0)
        walk = CoinedWalk(lat, {(1, 0): np.diag([1, 0]), (0, 0): np.diag([0, 1])})
        with pytest.raises(ValueError, match="sublattice"):
            bcc_project(walk)

    @settings(max_examples=30, deadline=None)
    @given(p=st.lists(st.floats(-PI, PI), min_size=3, max_size=3))
    @example(p=[1e-11, 0.0, 2.0])
    def test_restriction_consistency(self, weyl_projection, p):
        walk, proj = weyl_projection
        np.testing.assert_allclose(proj.symbol(p), momentum_symbol(walk, p), atol=1e-12)
        r = reduce_to_bcc_zone(p, 1.0)
        assert -PI < r[0] <= PI and all(-PI / 2 < x <= PI / 2 for x in r[1:])


class TestGauge:
    def ring(self, mass=0.4):
        return build_preset("dirac1d", mass=mass, extents=8)

    def test_zero_field(self):
        walk = self.ring()
        np.testing.assert_allclose(apply_gauge(walk, GaugeField.zero(walk.lattice)).dense(), dense_operator(walk), atol=1e-15)

    def test_constant_field_phase(self):
        # an 8-site ring with A a = 0.3: right movers pick up exp(-0.3i), left movers exp(+0.3i)
        walk = self.ring(0.0)
        g = apply_gauge(walk, GaugeField.constant(walk.lattice, 0.3))
        p = walk.lattice.axis_momenta(0)[2]
        for coin, sign in ((np.array([1, 0]), -1), (np.array([0, 1]), 1)):
            psi = WaveState.plane_wave(walk.lattice, coin, p)
            free = WaveState(walk.lattice, (dense_operator(walk) @ psi.amplitudes.reshape(-1)).reshape(8, 2))
            out = g.step(psi).amplitudes.reshape(-1)
            np.testing.assert_allclose(out, np.exp(sign * 0.3j) * free.amplitudes.reshape(-1), atol=1e-14)

    def test_gauge_covariance(self):
        walk = self.ring()
        rng = np.random.default_rng(5)
        field = GaugeField.random(walk.lattice, rng)
        lam = rng.uniform(0, 2 * PI, size=8)
        # A -> A + lam(n + 1) - lam(n) pairs with psi(n) -> exp(-i lam(n)) psi(n)
        g = np.kron(np.diag(np.exp(-1j * lam)), np.eye(2))
        u_a = apply_gauge(walk, field).dense()
        u_b = apply_gauge(walk, field.transformed(lam)).dense()
        np.testing.assert_allclose(u_b, g @ u_a @ g.conj().T, atol=1e-13)

    def test_unitary(self):
        walk = build_preset("dirac2d", mass=0.2, extents=4)
        u = apply_gauge(walk, GaugeField.random(walk.lattice, np.random.default_rng(0))).dense()
        np.testing.assert_allclose(u.conj().T @ u, np.eye(32), atol=1e-13)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_site_probabilities_invariant(self, seed):
        rng = np.random.default_rng(seed)
        walk = self.ring()
        field = GaugeField.random(walk.lattice, rng)
        lam = rng.uniform(0, 2 * PI, size=8)
        psi = WaveState.random(walk.lattice, 2, rng)
        moved = WaveState(walk.lattice, psi.amplitudes * np.exp(-1j * lam)[:, None])
        _, p1 = apply_gauge(walk, field).evolve(psi, 20)
        _, p2 = apply_gauge(walk, field.transformed(lam)).evolve(moved, 20)
        np.testing.assert_allclose(p1, p2, atol=1e-12)

    def test_lattice_mismatch(self):
        walk = self.ring()
        with pytest.raises(ValueError):
            apply_gauge(walk, GaugeField.zero(Lattice((6,), 1.0)))


class TestBccLocal:
    @pytest.mark.parametrize("dims", [2, 3])
    @pytest.mark.parametrize("extent", [4, 6])
    def test_passes(self, dims, extent):
        rep = bcc_local_decomposition_check(dims, extent)
        assert rep.passed and rep.residual < 1e-10

    def test_identity_model(self):
        assert bcc_local_decomposition_check(2, 4, model="identity").passed

    def test_wrong_phase_fails(self):
        rep = bcc_local_decomposition_check(2, 4, r2_phase_error=0.1)
        assert not rep.passed and rep.residual > 1e-3

    def test_bad_extent(self):
        with pytest.raises(ValueError):
            bcc_local_decomposition_check(2, 8)
