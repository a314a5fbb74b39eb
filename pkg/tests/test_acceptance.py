"""Acceptance criteria, one test each, printing a PASS/FAIL line per criterion."""

import math
import subprocess
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

import oracles
from qwlab._linalg import random_unitary
from qwlab.continuum import ContinuumHamiltonian, canonicalize, continuum_hamiltonian, convergence_error, is_relativistic
from qwlab.equilibration import (
    SpectralSystem,
    effective_dimension,
    evolve_state,
    exponential_gap_model,
    gap_stats,
    harmonic_system,
    heisenberg_chain,
    qubit_oscillator_model,
    random_hamiltonian_system,
    random_pure_state,
    random_unit_observable,
    slow_equilibration_construct,
    time_average_state,
    trace_distance,
    verify_bound,
)
from qwlab.fermions import (
    MajoranaLayout,
    ModeOrdering,
    annihilation,
    doubled_local_decomposition,
    fock_operator,
    invariant_sector_spectrum,
    invariant_state,
    invariant_state_circuit,
    jordan_wigner,
    majorana_localize,
    simulate_circuit,
    vacuum_convergence,
    discrete_vacuum,
)
from qwlab.spectral import GaugeField, apply_gauge, bcc_project, find_doublers, quasi_energy
from qwlab.walk_core import (
    CoinedWalk,
    Lattice,
    WaveState,
    build_preset,
    decompose_1d,
    dense_operator,
    preset_family,
    random_product_walk,
)

from test_fermions import hopping_model, random_even_line_term

PI = math.pi
HALVINGS = [0.1 * 2.0**-k for k in range(6)]


@pytest.fixture
def criterion(capsys):
    @contextmanager
    def run(number, title, limit=None):
        start = time.perf_counter()
        status = "FAIL"
        try:
            yield
            elapsed = time.perf_counter() - start
            if limit is not None:
                assert elapsed < limit, f"runtime {elapsed:.1f} s exceeds {limit} s"
            status = "PASS"
        finally:
            elapsed = time.perf_counter() - start
            with capsys.disabled():
                print(f"\n[acceptance {number:2d}] {status}  {title}  ({elapsed:.2f} s)")

    return run


def test_01_dispersion_exact(criterion):
    with criterion(1, "dirac1d quasi-energies match the arccos closed form", limit=1.0):
        for m, a in [(0.0, 0.1), (0.5, 0.1), (1.0, 0.05)]:
            p = np.linspace(-PI / a, PI / a, 256)
            ref = oracles.dirac1d_quasi_energies(m, a, p)
            ref = np.sort(np.where(np.isclose(ref, -PI / a, rtol=0, atol=1e-9), PI / a, ref), axis=-1)
            np.testing.assert_allclose(quasi_energy(build_preset("dirac1d", mass=m, spacing=a), p), ref, atol=1e-12)


def test_02_doubler_counts(criterion):
    with criterion(2, "doubler counts, full and sublattice-projected, stable under refinement", limit=30.0):
        for n_grid in (16, 32):
            assert find_doublers(build_preset("dirac1d", extents=4), n_grid=n_grid).count == 1
            assert find_doublers(build_preset("dirac2d", extents=4), n_grid=n_grid).count == 2
            assert find_doublers(build_preset("weyl3d_right", extents=4), n_grid=n_grid).count == 8
            assert find_doublers(build_preset("weyl3d_left", extents=4), n_grid=n_grid).count == 8
            assert bcc_project(build_preset("dirac2d", extents=4), n_grid=n_grid).doublers.count == 1
            assert bcc_project(build_preset("weyl3d_right", extents=4), n_grid=n_grid).doublers.count == 2


def test_03_convergence_slopes(criterion):
    with criterion(3, "convergence slopes: dirac1d ~1, strang_dirac1d ~2", limit=60.0):
        ref = ContinuumHamiltonian(B=(oracles.Z,), M=0.5 * oracles.X)
        first = convergence_error(preset_family("dirac1d", 0.5), ref, 1.0, HALVINGS, 1.0)
        second = convergence_error(preset_family("strang_dirac1d", 0.5), ref, 1.0, HALVINGS, 1.0)
        assert len(HALVINGS) >= 6
        assert abs(first.slope - 1.0) <= 0.15, first.slope
        assert abs(second.slope - 2.0) <= 0.2, second.slope


def test_04_decomposition_roundtrip(criterion):
    with criterion(4, "1D decomposition reconstructs dirac1d and 20 random walks", limit=10.0):
        walks = [build_preset("dirac1d", mass=0.5, spacing=0.1, extents=32)]
        rng = np.random.default_rng(404)
        lat = Lattice((32,), 1.0)
        walks += [random_product_walk(lat, int(rng.integers(2, 4)), int(rng.integers(1, 4)), rng) for _ in range(20)]
        for walk in walks:
            dec = decompose_1d(walk)
            grid = walk.lattice.momentum_grid()
            assert np.max(np.abs(dec.symbol(grid[:, 0]) - walk.symbol(grid))) <= 1e-10


def test_05_canonicalization(criterion):
    with criterion(5, "weyl3d extraction, spin-1 flagged, gamma invariant under coin change"):
        h = continuum_hamiltonian(build_preset("weyl3d_right", extents=4))
        # exact up to rounding in the derivative extraction (a few ulps)
        for b, s in zip(h.B, (oracles.X, oracles.Y, oracles.Z)):
            np.testing.assert_allclose(b, s, atol=1e-14, rtol=0)
        assert np.all(h.M == 0)
        ok, dev = is_relativistic(continuum_hamiltonian(build_preset("spin1_3d", extents=4)))
        assert not ok and dev > 0
        walk = build_preset("weyl3d_right", extents=4)
        g0 = canonicalize(continuum_hamiltonian(walk)).gamma
        rng = np.random.default_rng(505)
        for _ in range(20):
            v = random_unitary(2, rng)
            rotated = CoinedWalk(walk.lattice, {q: v @ a @ v.conj().T for q, a in walk.terms.items()})
            np.testing.assert_allclose(canonicalize(continuum_hamiltonian(rotated)).gamma, g0, atol=1e-10)


def test_06_gauge_invariance(criterion):
    with criterion(6, "site probabilities gauge invariant on an 8-site ring over 20 steps"):
        rng = np.random.default_rng(606)
        walk = build_preset("dirac1d", mass=0.4, extents=8)
        for _ in range(10):
            field = GaugeField.random(walk.lattice, rng)
            lam = rng.uniform(0, 2 * PI, size=8)
            psi = WaveState.random(walk.lattice, 2, rng)
            moved = WaveState(walk.lattice, psi.amplitudes * np.exp(-1j * lam)[:, None])
            _, p1 = apply_gauge(walk, field).evolve(psi, 20)
            _, p2 = apply_gauge(walk, field.transformed(lam)).evolve(moved, 20)
            np.testing.assert_allclose(p1, p2, atol=1e-12, rtol=0)


def test_07_jordan_wigner(criterion):
    with criterion(7, "CCR exact on 8 modes; 50 random even line Hamiltonians map locally"):
        n = 8
        order = ModeOrdering.linear(n)
        a = [jordan_wigner(annihilation(j), order).to_dense(n) for j in range(n)]
        eye = np.eye(2**n)
        for i in range(n):
            for j in range(n):
                np.testing.assert_array_equal(a[i] @ a[j].conj().T + a[j].conj().T @ a[i], eye * (i == j))
                np.testing.assert_array_equal(a[i] @ a[j] + a[j] @ a[i], 0 * eye)
        rng = np.random.default_rng(707)
        site_modes = {s: [(s, k) for k in range(2)] for s in range(6)}
        lines = ModeOrdering.site_consecutive(site_modes)
        for _ in range(50):
            for _ in range(5):
                term, sites = random_even_line_term(rng, 6, 2)
                allowed = {lines.index(m) for s in sites for m in site_modes[s]}
                assert jordan_wigner(term, lines).support() <= allowed


def test_08_majorana_localization(criterion):
    with criterion(8, "2x2 Majorana localization: spectrum, locality, M = +1, circuit fidelity"):
        layout = MajoranaLayout.square(2, 2)
        modes, h = hopping_model(layout, np.random.default_rng(808))
        model = majorana_localize(h, layout)
        direct = np.linalg.eigvalsh(fock_operator(h, ModeOrdering(tuple(modes))).toarray())
        sector = invariant_sector_spectrum(model)
        reps = sector.size // direct.size
        np.testing.assert_allclose(sector, np.sort(np.repeat(direct, reps)), atol=1e-9)
        assert model.local
        order = layout.ordering()
        psi = invariant_state(layout)
        for u, v in layout.links:
            m_psi = fock_operator(layout.link_operator(u, v), order) @ psi
            assert np.vdot(psi, m_psi).real == pytest.approx(1.0, abs=1e-12)
            np.testing.assert_allclose(m_psi, psi, atol=1e-12)
        out = simulate_circuit(invariant_state_circuit(layout))
        fid = abs(np.vdot(np.kron(psi, np.eye(4)[0]), out)) ** 2
        assert fid >= 1 - 1e-10


def test_09_doubled_decomposition(criterion):
    with criterion(9, "doubled-system swap identity for shift and dirac1d up to 4 sites"):
        shift = np.roll(np.eye(3), 1, axis=0).astype(complex)
        rep = doubled_local_decomposition(unitary=shift)
        assert rep.passed and rep.residual <= 1e-10 and rep.localized
        for n in (2, 4):
            u = dense_operator(build_preset("dirac1d", mass=0.5, spacing=0.1, extents=n))
            rep = doubled_local_decomposition(unitary=u, site_of_mode=[j // 2 for j in range(2 * n)])
            assert rep.passed and rep.residual <= 1e-10 and rep.localized, (n, rep.residual)


def test_10_vacuum_convergence(criterion):
    with criterion(10, "discrete vacuum converges with exponent ~1; massless distance 0"):
        dist, slope = vacuum_convergence(0.5, 1.0, HALVINGS)
        assert np.all(np.diff(dist) < 0)
        assert abs(slope - 1.0) <= 0.2, slope
        assert discrete_vacuum(0.0, 0.1, 512, 1.0).distance == 0.0


def test_11_bound_dominance(criterion):
    with criterion(11, "100 random 6-spin instances: exact lhs <= rhs for both bounds", limit=300.0):
        seeds = np.random.SeedSequence(1111).spawn(100)
        worst = 0.0
        for i, ss in enumerate(seeds):
            rng = np.random.default_rng(ss)
            system = heisenberg_chain(6, seed=int(rng.integers(2**31)))
            psi = random_pure_state(64, rng)
            a = random_unit_observable(64, rng)
            for T in (1.0, 10.0, 100.0):
                for rep in (verify_bound(system, psi, T, observable=a), verify_bound(system, psi, T, subsystem_dim=2)):
                    assert rep.holds, (i, T, rep.kind, rep.lhs, rep.rhs)
                    worst = max(worst, rep.lhs / rep.rhs)
        assert worst <= 1


def test_12_closed_form_facts(criterion):
    with criterion(12, "equal superposition 1 - 1/d, eigenstate d_eff = 1, harmonic D_G = d_E - 1"):
        for d in (2, 5, 16):
            system = SpectralSystem.from_spectrum(np.log(np.arange(2, d + 2)))
            psi = np.ones(d) / np.sqrt(d)
            omega = time_average_state(psi, system)
            for t in (0.0, 1.3, 47.0):
                assert abs(trace_distance(evolve_state(psi, system, t)[:, 0], omega) - (1 - 1 / d)) <= 1e-12
        chain = heisenberg_chain(6, seed=12)
        for k in (0, 17, 63):
            assert effective_dimension(chain.vectors[:, k], chain) == pytest.approx(1.0, abs=1e-12)
        for d_E in (4, 12, 40):
            assert gap_stats(harmonic_system(d_E)).D_G == d_E - 1


def test_13_slow_equilibration(criterion):
    with criterion(13, "slow equilibration on d = 1024 with eps = 0.1, K = 20", limit=60.0):
        rng = np.random.default_rng(1313)
        system = random_hamiltonian_system(1024, rng)
        rep = slow_equilibration_construct(system, random_pure_state(1024, rng), K=20, eps=0.1, n_window=50)
        assert len(rep.times) >= 50
        assert rep.window_holds, (rep.distinguishability.min(), rep.lower_bound)
        assert rep.infinite_holds
        assert rep.sampled_infinite_average <= rep.infinite_average_bound


def test_14_gap_model(criterion):
    with criterion(14, "exponential gap model statistics over 10 seeds"):
        for seed in range(10):
            res = exponential_gap_model(1.0, 30.0, 2000, seed=seed, eps_list=[0.01])
            assert abs(res.mean_gap - 1.0) <= 0.10, (seed, res.mean_gap)
            assert abs(res.sigma_gap - 1.0) <= 0.15, (seed, res.sigma_gap)
            ratio = res.n_eps[0] / res.predicted_n_eps[0]
            assert abs(ratio - 1.0) <= 0.15, (seed, ratio)


def test_15_toy_model(criterion):
    with criterion(15, "toy model subsystem average maximally mixed for every coupling"):
        rng = np.random.default_rng(1515)
        for lam in (1e-6, 1e-2, 1.0):
            model = qubit_oscillator_model(1.0, lam, 12)
            for _ in range(10):
                psi = np.kron(random_pure_state(2, rng), model.environment_state(rng))
                assert abs(psi[model.index(0, 0)]) == 0
                np.testing.assert_allclose(model.subsystem_average(psi), np.eye(2) / 2, atol=1e-10, rtol=0)


def _body(text):
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


def test_16_cli_determinism(criterion):
    with criterion(16, "repeated CLI runs with one seed give byte-identical CSV bodies"):
        commands = [
            ["eq", "chain", "--spins", "6", "--seed", "42", "--T", "50", "--samples", "51"],
            ["eq", "bounds", "--spins", "4", "--seed", "7", "--instances", "5"],
            ["walk", "decompose", "--layers", "3", "--seed", "3"],
            ["fermi", "jw", "--modes", "4", "--seed", "9"],
            ["eq", "toy", "--seed", "5", "--states", "4"],
        ]
        for argv in commands:
            runs = [
                subprocess.run([sys.executable, "-m", "qwlab", *argv], capture_output=True, check=True).stdout
                for _ in range(2)
            ]
            assert _body(runs[0].decode()) and _body(runs[0].decode()).encode() == _body(runs[1].decode()).encode()
