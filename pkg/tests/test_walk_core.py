import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from qwlab.walk_core import (
    HADAMARD,
    PRESETS,
    CoinedWalk,
    ConditionalShift,
    Lattice,
    WaveState,
    build_preset,
    conditional_shift,
    decompose_1d,
    dense_operator,
    evolve,
    mass_decompose,
    momentum_symbol,
    preset_family,
    random_product_walk,
    spin1_generators,
    step,
    verify_unitarity,
)

R = np.array([1, 0], dtype=complex)
L = np.array([0, 1], dtype=complex)


def small_extents(name):
    return {1: 8, 2: 4, 3: 4}[build_preset(name, extents=2).lattice.dims]


class TestLattice:
    def test_odd_extent_rejected(self):
        with pytest.raises(ValueError, match="even"):
            Lattice((5,), 1.0)

    def test_grid_contains_zone_edge(self):
        lat = Lattice((8,), 0.5)
        p = lat.axis_momenta(0)
        assert np.isclose(p.max(), np.pi / 0.5)
        assert len(p) == 8 and np.all(p > -np.pi / 0.5)

    def test_site_count(self):
        assert Lattice((4, 6, 2), 1.0).n_sites == 48


class TestPresets:
    @pytest.mark.parametrize("name", PRESETS)
    def test_every_preset_is_unitary(self, name):
        walk = build_preset(name, mass=0.3, spacing=0.5, extents=small_extents(name))
        assert verify_unitarity(walk).passed

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            build_preset("graphene")

    def test_odd_extent(self):
        with pytest.raises(ValueError):
            build_preset("dirac1d", extents=7)

    def test_dirac1d_terms_match_projector_blocks(self):
        walk = build_preset("dirac1d", mass=0.5, spacing=0.1, extents=8)
        ref = oracles.dirac1d_terms(0.5, 0.1)
        for q, a in ref.items():
            np.testing.assert_allclose(walk.terms[(q,)], a, atol=1e-15)

    def test_massless_dirac_eigenphases(self):
        walk = build_preset("dirac1d", spacing=0.2, extents=8)
        for p in np.linspace(-3, 3, 7):
            u = momentum_symbol(walk, p)
            np.testing.assert_allclose(np.diag(u), [np.exp(-1j * p * 0.2), np.exp(1j * p * 0.2)], atol=1e-15)

    def test_weyl_symbol_is_product_of_rotations(self):
        walk = build_preset("weyl3d_right", extents=4)
        rng = np.random.default_rng(3)
        for p in rng.uniform(-np.pi, np.pi, size=(5, 3)):
            np.testing.assert_allclose(momentum_symbol(walk, p), oracles.weyl_symbol(p), atol=1e-13)

    def test_dirac3d_is_direct_sum_of_weyl_walks(self):
        walk = build_preset("dirac3d", mass=0.4, extents=4)
        md = mass_decompose(walk)
        p = np.array([0.3, -1.1, 2.0])
        # chirality is the second tensor factor of the coin: sectors {0, 2} and {1, 3}
        perm = [0, 2, 1, 3]
        u0 = (md.W.conj().T @ momentum_symbol(walk, p))[np.ix_(perm, perm)]
        assert np.allclose(u0[:2, 2:], 0) and np.allclose(u0[2:, :2], 0)
        right = momentum_symbol(build_preset("weyl3d_right", extents=4), p)
        left = momentum_symbol(build_preset("weyl3d_left", extents=4), p)
        blocks = {tuple(np.round(np.linalg.eigvals(b), 10)) for b in (u0[:2, :2], u0[2:, 2:])}
        assert blocks == {tuple(np.round(np.linalg.eigvals(b), 10)) for b in (right, left)}

    def test_strang_bundles_two_substeps(self):
        walk = build_preset("strang_dirac1d", mass=0.5, spacing=0.1, extents=8)
        assert walk.time_step == pytest.approx(0.2)
        assert set(walk.terms) == {(-2,), (2,)}

    def test_family_keeps_physical_length(self):
        fam = preset_family("dirac1d", 0.5, physical_length=16 * np.pi)
        for a in (0.1, 0.05):
            w = fam(a)
            assert abs(w.lattice.extents[0] * a - 16 * np.pi) <= 2 * a


class TestSymbol:
    def test_zero_momentum_massless_identity(self):
        np.testing.assert_allclose(momentum_symbol(build_preset("dirac1d"), 0.0), np.eye(2), atol=1e-15)

    @pytest.mark.parametrize("m,a", [(0.0, 0.1), (0.5, 0.1), (1.0, 0.05), (0.3, 1.0)])
    def test_dirac_trace(self, m, a):
        walk = build_preset("dirac1d", mass=m, spacing=a)
        for p in np.linspace(-np.pi / a, np.pi / a, 11):
            assert np.trace(momentum_symbol(walk, p)) == pytest.approx(2 * np.cos(m * a) * np.cos(p * a), abs=1e-13)

    def test_dirac2d_corner_is_identity(self):
        u = momentum_symbol(build_preset("dirac2d", extents=4), [np.pi, np.pi])
        np.testing.assert_allclose(u, np.eye(2), atol=1e-14)

    def test_symbol_off_grid_is_unitary(self):
        walk = build_preset("rotsym2d", mass=0.7, extents=4)
        u = momentum_symbol(walk, [0.123, -2.71])
        np.testing.assert_allclose(u.conj().T @ u, np.eye(4), atol=1e-12)


class TestStep:
    @pytest.mark.parametrize("name", ["hadamard1d", "dirac1d", "dirac2d", "weyl3d_right", "spin1_3d", "rotsym2d"])
    def test_matches_dense_oracle(self, name):
        walk = build_preset(name, mass=0.4, extents=small_extents(name))
        state = WaveState.random(walk.lattice, walk.coin_dim, np.random.default_rng(0))
        ref = oracles.dense_walk_nd(walk.terms, walk.lattice.extents) @ state.amplitudes.reshape(-1)
        np.testing.assert_allclose(step(walk, state).amplitudes.reshape(-1), ref, atol=1e-12)
        np.testing.assert_allclose(dense_operator(walk), oracles.dense_walk_nd(walk.terms, walk.lattice.extents), atol=1e-14)

    def test_hadamard_single_step(self):
        # the shift acts first, so both coin components land on site +1
        walk = build_preset("hadamard1d", extents=8)
        out = step(walk, WaveState.localized(walk.lattice, R, 0)).amplitudes
        np.testing.assert_allclose(out[1], [np.sqrt(0.5), np.sqrt(0.5)], atol=1e-15)
        assert np.allclose(np.delete(out, 1, axis=0), 0)

    def test_hadamard_100_steps_on_200_sites(self):
        walk = build_preset("hadamard1d", extents=200)
        psi0 = WaveState.localized(walk.lattice, R, 100)
        _, probs = evolve(walk, psi0, 100, record=True)
        u = oracles.dense_walk_1d({q[0]: a for q, a in walk.terms.items()}, 200)
        v = psi0.amplitudes.reshape(-1)
        for _ in range(100):
            v = u @ v
        np.testing.assert_allclose(probs[-1], (np.abs(v) ** 2).reshape(200, 2).sum(axis=1), atol=1e-9)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-10)

    def test_right_mover(self):
        walk = build_preset("dirac1d", extents=16)
        state, _ = evolve(walk, WaveState.localized(walk.lattice, R, 0), 5)
        assert state.probabilities()[5] == pytest.approx(1.0)

    def test_two_peaks(self):
        walk = build_preset("dirac1d", extents=32)
        coin = np.array([np.sqrt(0.3), np.sqrt(0.7)])
        _, probs = evolve(walk, WaveState.localized(walk.lattice, coin, 0), 7, record=True)
        assert probs[-1][7] == pytest.approx(0.3) and probs[-1][-7] == pytest.approx(0.7)

    def test_plane_wave_phase(self):
        walk = build_preset("dirac1d", spacing=0.5, extents=16)
        p = walk.lattice.axis_momenta(0)[3]
        psi = WaveState.plane_wave(walk.lattice, R, p)
        np.testing.assert_allclose(step(walk, psi).amplitudes, np.exp(-1j * p * 0.5) * psi.amplitudes, atol=1e-14)

    def test_zero_steps_identity(self):
        walk = build_preset("hadamard1d", extents=8)
        psi = WaveState.random(walk.lattice, 2, np.random.default_rng(1))
        out, _ = evolve(walk, psi, 0)
        np.testing.assert_array_equal(out.amplitudes, psi.amplitudes)

    def test_dimension_mismatch(self):
        walk = build_preset("dirac1d", extents=8)
        with pytest.raises(ValueError):
            step(walk, WaveState.random(Lattice((6,), 1.0), 2, np.random.default_rng(0)))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), name=st.sampled_from(["dirac1d", "dirac2d", "weyl3d_left", "rotsym2d"]))
    def test_norm_and_fft_consistency(self, seed, name):
        walk = build_preset(name, mass=0.6, spacing=0.7, extents=small_extents(name))
        psi = WaveState.random(walk.lattice, walk.coin_dim, np.random.default_rng(seed))
        a = step(walk, psi, method="position")
        b = step(walk, psi, method="momentum")
        assert abs(a.norm() - 1) < 1e-12
        np.testing.assert_allclose(a.amplitudes, b.amplitudes, atol=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), shift=st.integers(-6, 6))
    def test_translation_covariance(self, seed, shift):
        walk = build_preset("dirac1d", mass=0.2, extents=12)
        psi = WaveState.random(walk.lattice, 2, np.random.default_rng(seed))
        moved = WaveState(walk.lattice, np.roll(psi.amplitudes, shift, axis=0))
        np.testing.assert_array_equal(step(walk, moved).amplitudes, np.roll(step(walk, psi).amplitudes, shift, axis=0))


class TestUnitarity:
    def test_dirac_exact(self):
        assert verify_unitarity(build_preset("dirac1d", mass=0.9)).max_deviation < 1e-14

    def test_averaging_walk_fails(self):
        lat = Lattice((8,), 1.0)
        rep = verify_unitarity(CoinedWalk(lat, {(1,): 0.5 * np.eye(2), (-1,): 0.5 * np.eye(2)}))
        assert rep.cross[(2,)] == pytest.approx(0.25)
        assert not rep.passed

    def test_weyl_passes(self):
        assert verify_unitarity(build_preset("weyl3d_right", extents=4)).passed


class TestMassDecompose:
    def test_massless(self):
        assert mass_decompose(build_preset("dirac1d")).massless

    def test_massive_coin(self):
        md = mass_decompose(build_preset("dirac1d", mass=0.5, spacing=0.1))
        np.testing.assert_allclose(md.W, oracles.dirac1d_terms(0.5, 0.1)[1] + oracles.dirac1d_terms(0.5, 0.1)[-1], atol=1e-15)
        assert not md.massless
        assert np.allclose(sum(md.primed_terms.values()), np.eye(2))

    def test_weyl_massless(self):
        assert mass_decompose(build_preset("weyl3d_right", extents=4)).massless

    def test_non_unitary_rejected(self):
        with pytest.raises(ValueError, match="not unitary"):
            mass_decompose(CoinedWalk(Lattice((4,), 1.0), {(1,): 0.5 * np.eye(2), (-1,): 0.5 * np.eye(2)}))


class TestDecompose1D:
    def test_dirac(self):
        walk = build_preset("dirac1d", mass=0.5, spacing=0.1, extents=16)
        dec = decompose_1d(walk)
        assert len(dec.factors) == 1
        np.testing.assert_allclose(dec.W, mass_decompose(walk).W, atol=1e-12)
        for p in np.linspace(-np.pi / 0.1, np.pi / 0.1, 64):
            np.testing.assert_allclose(dec.symbol(p), momentum_symbol(walk, p), atol=1e-10)

    def test_pure_shift(self):
        walk = CoinedWalk(Lattice((8,), 1.0), {(1,): np.eye(2)})
        dec = decompose_1d(walk)
        assert len(dec.factors) == 1
        np.testing.assert_allclose(dec.W, np.eye(2), atol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("coin_dim", [2, 3])
    def test_random_roundtrip(self, seed, coin_dim):
        lat = Lattice((16,), 1.0)
        walk = random_product_walk(lat, coin_dim, 3, np.random.default_rng(seed))
        dec = decompose_1d(walk)
        for proj, _ in [b for f in dec.factors for b in f.branches]:
            np.testing.assert_allclose(proj @ proj, proj, atol=1e-9)
        err = max(np.abs(dec.symbol(p) - walk.symbol(p)).max() for p in lat.momentum_grid())
        assert err < 1e-10

    def test_rejects_2d(self):
        with pytest.raises(ValueError):
            decompose_1d(build_preset("dirac2d", extents=4))


class TestShiftsAndGenerators:
    def test_conditional_shift_eigenspaces(self):
        lat = Lattice((8,), 1.0)
        walk = CoinedWalk.from_factors(lat, [conditional_shift(0, 1, oracles.X, 1)])
        for p in (0.4, -2.0):
            u = momentum_symbol(walk, p)
            np.testing.assert_allclose(u, np.cos(p) * np.eye(2) - 1j * np.sin(p) * oracles.X, atol=1e-14)

    def test_spin1_algebra(self):
        jx, jy, jz = spin1_generators()
        np.testing.assert_allclose(jx @ jy - jy @ jx, 1j * jz, atol=1e-14)
        np.testing.assert_allclose(jx @ jx + jy @ jy + jz @ jz, 2 * np.eye(3), atol=1e-14)

    def test_bad_projectors(self):
        with pytest.raises(ValueError):
            ConditionalShift(((np.diag([1.0, 0.5]), (1,)),))

    def test_hadamard_matrix(self):
        np.testing.assert_allclose(HADAMARD @ HADAMARD, np.eye(2), atol=1e-15)
