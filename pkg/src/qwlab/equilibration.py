"""Exact-diagonalization checks of equilibration definitions and bounds.

Energies and states live in a :class:`SpectralSystem`.  Time averages over
``[0, T]`` are uniform; the bounds use

``B(eps, T) = (5 pi / 2) N(eps) [3/4 + 1/(eps T)]``

so that the expectation-value bound is ``B / d_eff``, the bound for a
measurement set is ``S(M) / (4 sqrt d_eff) sqrt(B)`` and the subsystem
bound is ``(1/2) sqrt(d_S^2 B / d_eff)``.  ``T = inf`` drops the
``1/(eps T)`` term.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike, NDArray
from scipy.sparse.csgraph import connected_components

from ._linalg import dagger, op_norm

__all__ = [
    "SpectralSystem",
    "GapStats",
    "MeasurementSet",
    "BoundReport",
    "SlowEquilibrationReport",
    "GapModelResult",
    "ToyModel",
    "heisenberg_chain",
    "harmonic_system",
    "random_hamiltonian_system",
    "random_pure_state",
    "random_unit_observable",
    "effective_dimension",
    "gap_stats",
    "time_average_state",
    "evolve_state",
    "evolve_expectation",
    "averaged_fluctuation",
    "time_average_quadrature",
    "trace_distance",
    "distinguishability",
    "partial_trace",
    "purify",
    "bound_expectation",
    "bound_system",
    "bound_subsystem",
    "verify_bound",
    "slow_equilibration_construct",
    "energy_filter",
    "exponential_gap_model",
    "qubit_oscillator_model",
    "MAX_DENSE_DIM",
]

MAX_DENSE_DIM = 4096
_PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


# ---------------------------------------------------------------------------
# Spectral data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralSystem:
    """Diagonalized Hamiltonian with energy levels grouped by a degeneracy tolerance.

    Attributes
    ----------
    hamiltonian : ndarray or None
        Dense Hamiltonian (``None`` for systems given only by a spectrum).
    energies : ndarray
        Eigenvalues, ascending.
    vectors : ndarray
        Orthonormal eigenvectors as columns.
    level_of : ndarray
        Index of the distinct energy level of each eigenvector.
    levels : ndarray
        Distinct energies (cluster means), ascending.
    """

    hamiltonian: NDArray[np.complex128] | None
    energies: NDArray[np.float64]
    vectors: NDArray[np.complex128]
    degeneracy_tol: float
    level_of: NDArray[np.int64] = field(repr=False)
    levels: NDArray[np.float64] = field(repr=False)
    info: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_hamiltonian(
        cls, h: ArrayLike, degeneracy_tol: float | None = None, info: dict | None = None
    ) -> "SpectralSystem":
        """Diagonalize ``h`` block by block (blocks = connected components of its sparsity graph)."""
        h = np.asarray(h, dtype=complex)
        d = h.shape[0]
        if h.shape != (d, d):
            raise ValueError("Hamiltonian must be square")
        if d > MAX_DENSE_DIM:
            raise ValueError(f"dimension {d} exceeds the dense budget {MAX_DENSE_DIM}")
        if op_norm(h - dagger(h)) > 1e-10 * max(1.0, op_norm(h)):
            raise ValueError("Hamiltonian is not Hermitian")
        h = 0.5 * (h + dagger(h))
        n_comp, labels = connected_components(sp.csr_matrix(np.abs(h) > 0), directed=False)
        energies = np.empty(d)
        vectors = np.zeros((d, d), dtype=complex)
        col = 0
        for c in range(n_comp):
            idx = np.flatnonzero(labels == c)
            w, v = np.linalg.eigh(h[np.ix_(idx, idx)])
            energies[col : col + len(idx)] = w
            vectors[idx, col : col + len(idx)] = v
            col += len(idx)
        order = np.argsort(energies, kind="stable")
        return cls._build(h, energies[order], vectors[:, order], degeneracy_tol, info)

    @classmethod
    def from_spectrum(cls, energies: ArrayLike, degeneracy_tol: float | None = None) -> "SpectralSystem":
        """Diagonal Hamiltonian with the given energies (eigenvectors = computational basis)."""
        e = np.sort(np.asarray(energies, dtype=float))
        return cls._build(None, e, np.eye(len(e), dtype=complex), degeneracy_tol, None)

    @classmethod
    def _build(cls, h, energies, vectors, tol, info) -> "SpectralSystem":
        scale = max(1.0, float(np.max(np.abs(energies)))) if len(energies) else 1.0
        tol = 1e-9 * scale if tol is None else float(tol)
        level_of = np.zeros(len(energies), dtype=np.int64)
        if len(energies):
            level_of[1:] = np.cumsum(np.diff(energies) > tol)
        levels = np.array([energies[level_of == k].mean() for k in range(level_of[-1] + 1)]) if len(energies) else energies
        return cls(h, energies, vectors, tol, level_of, levels, dict(info or {}))

    @property
    def dim(self) -> int:
        return len(self.energies)

    @property
    def d_E(self) -> int:
        return len(self.levels)

    def dense_hamiltonian(self) -> NDArray[np.complex128]:
        if self.hamiltonian is not None:
            return self.hamiltonian
        return (self.vectors * self.energies) @ dagger(self.vectors)

    def level_weights(self, psi: NDArray[np.complex128]) -> NDArray[np.float64]:
        """``|P_k psi|^2`` for every level ``k``."""
        c = dagger(self.vectors) @ psi
        return np.bincount(self.level_of, weights=np.abs(c) ** 2, minlength=self.d_E)

    def tensor_identity(self, r: int) -> "SpectralSystem":
        """``H (x) 1_r`` (used for purifications)."""
        e = np.repeat(self.energies, r)
        v = np.kron(self.vectors, np.eye(r))
        h = None if self.hamiltonian is None else np.kron(self.hamiltonian, np.eye(r))
        return SpectralSystem._build(h, e, v, self.degeneracy_tol, self.info)

    def eigen_residual(self) -> float:
        h = self.dense_hamiltonian()
        return op_norm(h @ self.vectors - self.vectors * self.energies)


def heisenberg_chain(
    n_spins: int, seed: int | None = None, couplings: ArrayLike | None = None
) -> SpectralSystem:
    """Open Heisenberg chain ``sum_i J_i (X_i X_{i+1} + Y_i Y_{i+1} + Z_i Z_{i+1})``.

    Couplings are drawn uniformly from ``[0, 1]`` with
    ``numpy.random.default_rng(seed)`` unless given explicitly.  Spin 0 is
    the most significant tensor factor.
    """
    if not 2 <= n_spins <= 12:
        raise ValueError(f"n_spins must be in [2, 12] for dense diagonalization, got {n_spins}")
    if couplings is None:
        if seed is None:
            raise ValueError("a seed is required for random couplings")
        j = np.random.default_rng(seed).uniform(0.0, 1.0, size=n_spins - 1)
    else:
        j = np.asarray(couplings, dtype=float)
        if j.shape != (n_spins - 1,):
            raise ValueError(f"need {n_spins - 1} couplings, got shape {j.shape}")
    dim = 1 << n_spins
    h = sp.csr_matrix((dim, dim), dtype=complex)
    for i in range(n_spins - 1):
        for p in "XYZ":
            ops = [sp.identity(1 << i, format="csr"), sp.csr_matrix(np.kron(_PAULI[p], _PAULI[p]))]
            ops.append(sp.identity(1 << (n_spins - i - 2), format="csr"))
            h = h + j[i] * sp.kron(sp.kron(ops[0], ops[1]), ops[2], format="csr")
    return SpectralSystem.from_hamiltonian(h.toarray(), info={"couplings": j, "n_spins": n_spins, "seed": seed})


def harmonic_system(d_E: int, spacing: float = 1.0) -> SpectralSystem:
    """Equally spaced spectrum ``0, w, 2w, ...``."""
    return SpectralSystem.from_spectrum(spacing * np.arange(d_E))


def random_hamiltonian_system(d: int, rng: np.random.Generator) -> SpectralSystem:
    """GUE-like random Hamiltonian normalized to operator norm 1."""
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    h = (z + dagger(z)) / 2
    return SpectralSystem.from_hamiltonian(h / op_norm(h))


def random_pure_state(d: int, rng: np.random.Generator) -> NDArray[np.complex128]:
    z = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return z / np.linalg.norm(z)


def random_unit_observable(d: int, rng: np.random.Generator) -> NDArray[np.complex128]:
    """Random Hermitian matrix with operator norm 1."""
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    a = (z + dagger(z)) / 2
    return a / op_norm(a)


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------


def _as_density(rho: ArrayLike) -> NDArray[np.complex128]:
    r = np.asarray(rho, dtype=complex)
    if r.ndim == 1:
        return np.outer(r, r.conj())
    return r


def _validate_state(rho: ArrayLike, d: int) -> NDArray[np.complex128]:
    r = np.asarray(rho, dtype=complex)
    if r.ndim == 1:
        if r.shape != (d,):
            raise ValueError(f"state vector must have dimension {d}")
        if abs(np.linalg.norm(r) - 1) > 1e-10:
            raise ValueError("state vector is not normalized")
        return r
    if r.shape != (d, d):
        raise ValueError(f"density operator must be {d} x {d}")
    if abs(np.trace(r) - 1) > 1e-10:
        raise ValueError("density operator does not have unit trace")
    if op_norm(r - dagger(r)) > 1e-10:
        raise ValueError("density operator is not Hermitian")
    if np.min(np.linalg.eigvalsh(0.5 * (r + dagger(r)))) < -1e-10:
        raise ValueError("density operator is not positive semidefinite")
    return r


def purify(rho: ArrayLike, tol: float = 1e-12) -> tuple[NDArray[np.complex128], int]:
    """Purification ``sum_i sqrt(p_i) |i> (x) |i>_anc`` with ancilla dimension equal to the rank."""
    r = np.asarray(rho, dtype=complex)
    w, v = np.linalg.eigh(0.5 * (r + dagger(r)))
    keep = w > tol
    w, v = w[keep], v[:, keep]
    k = len(w)
    psi = np.zeros((r.shape[0], k), dtype=complex)
    for i in range(k):
        psi[:, i] = np.sqrt(w[i]) * v[:, i]
    return psi.reshape(-1), k


def _pure_or_purified(
    rho: ArrayLike, system: SpectralSystem, extra_ops: Sequence[NDArray[np.complex128]] = ()
) -> tuple[NDArray[np.complex128], SpectralSystem, list[NDArray[np.complex128]]]:
    r = _validate_state(rho, system.dim)
    if r.ndim == 1:
        return r, system, list(extra_ops)
    w = np.linalg.eigvalsh(0.5 * (r + dagger(r)))
    if np.sum(w > 1e-12) == 1:
        vals, vecs = np.linalg.eigh(r)
        return vecs[:, -1], system, list(extra_ops)
    psi, k = purify(r)
    if system.dim * k > MAX_DENSE_DIM:
        raise ValueError("purification exceeds the dense dimension budget")
    return psi, system.tensor_identity(k), [np.kron(o, np.eye(k)) for o in extra_ops]


def effective_dimension(rho0: ArrayLike, system: SpectralSystem) -> float:
    """``1 / sum_k tr(P_k rho0)^2`` over the distinct energy levels."""
    r = _validate_state(rho0, system.dim)
    if r.ndim == 1:
        w = system.level_weights(r)
    else:
        diag = np.real(np.einsum("in,ij,jn->n", system.vectors.conj(), r, system.vectors))
        w = np.bincount(system.level_of, weights=diag, minlength=system.d_E)
    return float(1.0 / np.sum(w**2))


def time_average_state(rho0: ArrayLike, system: SpectralSystem, T: float = math.inf) -> NDArray[np.complex128]:
    """``omega`` (``T = inf``) or the uniform average of ``rho(t)`` over ``[0, T]``.

    In the eigenbasis element ``(i, j)`` is multiplied by
    ``(exp(-i G T) - 1) / (-i G T)`` with ``G = E_i - E_j``, or kept only
    when ``E_i`` and ``E_j`` belong to the same level for ``T = inf``.
    """
    r = _as_density(_validate_state(rho0, system.dim))
    v = system.vectors
    rp = dagger(v) @ r @ v
    g = system.energies[:, None] - system.energies[None, :]
    same = system.level_of[:, None] == system.level_of[None, :]
    if math.isinf(T):
        fac = same.astype(float)
    else:
        if T <= 0:
            raise ValueError("T must be positive")
        x = g * T
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(same | (x == 0), 1.0, (np.exp(-1j * x) - 1) / (-1j * np.where(x == 0, 1, x)))
    return v @ (rp * fac) @ dagger(v)


def evolve_state(psi: ArrayLike, system: SpectralSystem, times: ArrayLike) -> NDArray[np.complex128]:
    """``psi(t)`` as columns, one per time."""
    c = dagger(system.vectors) @ np.asarray(psi, dtype=complex)
    t = np.atleast_1d(np.asarray(times, dtype=float))
    phases = np.exp(-1j * np.outer(system.energies, t))
    return system.vectors @ (c[:, None] * phases)


def evolve_expectation(rho0: ArrayLike, system: SpectralSystem, A: ArrayLike, times: ArrayLike) -> NDArray[np.float64]:
    """``tr(rho(t) A)`` for each time."""
    a = np.asarray(A, dtype=complex)
    r = _validate_state(rho0, system.dim)
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if r.ndim == 1:
        psi_t = evolve_state(r, system, t)
        return np.real(np.einsum("it,ij,jt->t", psi_t.conj(), a, psi_t))
    v = system.vectors
    rp = dagger(v) @ r @ v
    ap = dagger(v) @ a @ v
    e = system.energies
    out = []
    for tt in t:
        ph = np.exp(-1j * e * tt)
        rt = (ph[:, None] * rp) * ph.conj()[None, :]
        out.append(np.real(np.sum(rt * ap.T)))
    return np.array(out)


def _level_vectors(psi: NDArray[np.complex128], system: SpectralSystem) -> tuple[NDArray[np.float64], NDArray[np.complex128], NDArray[np.float64]]:
    """Rotate each degenerate block to one vector: ``psi = sum_k c_k |e_k>``."""
    c = dagger(system.vectors) @ psi
    ks, cs, vs = [], [], []
    for k in range(system.d_E):
        sel = system.level_of == k
        block = system.vectors[:, sel] @ c[sel]
        nrm = np.linalg.norm(block)
        if nrm > 1e-14:
            ks.append(system.levels[k])
            cs.append(nrm)
            vs.append(block / nrm)
    return np.array(ks), np.array(vs).T, np.array(cs)


def _snap(values: NDArray[np.float64], tol: float) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    """Cluster sorted-able values within ``tol``; return cluster means and labels."""
    if len(values) == 0:
        return values, np.zeros(0, dtype=np.int64)
    order = np.argsort(values, kind="stable")
    s = values[order]
    lab_sorted = np.concatenate([[0], np.cumsum(np.diff(s) > tol)])
    labels = np.empty_like(lab_sorted)
    labels[order] = lab_sorted
    means = np.bincount(lab_sorted, weights=s) / np.bincount(lab_sorted)
    return means, labels


def averaged_fluctuation(rho0: ArrayLike, system: SpectralSystem, A: ArrayLike, T: float, chunk: int = 512) -> float:
    """Exact ``< |tr rho(t) A - tr omega A|^2 >_T`` (uniform average; ``T = inf`` allowed).

    With ``psi = sum_k c_k |e_k>`` (one vector per level) the deviation is
    ``sum_{k != l} v_(k,l) exp(i G_(k,l) t)`` with ``v_(k,l) = c_k c_l <e_k|A|e_l>``
    and ``G_(k,l) = E_k - E_l``.  Terms with equal gaps are merged, then
    ``sum v_a^* v_b <exp(i (G_b - G_a) t)>_T`` is evaluated in closed form.
    Mixed states are purified first.
    """
    a = np.asarray(A, dtype=complex)
    psi, sysp, (ap,) = _pure_or_purified(rho0, system, [a])
    e, vecs, c = _level_vectors(psi, sysp)
    n = len(e)
    if n < 2:
        return 0.0
    amat = dagger(vecs) @ ap @ vecs
    kk, ll = np.nonzero(~np.eye(n, dtype=bool))
    v = c[kk] * c[ll] * amat[kk, ll]
    g = e[kk] - e[ll]
    gv, lab = _snap(g, sysp.degeneracy_tol)
    vv = np.bincount(lab, weights=v.real, minlength=len(gv)) + 1j * np.bincount(lab, weights=v.imag, minlength=len(gv))
    if math.isinf(T):
        return float(np.sum(np.abs(vv) ** 2))
    total = 0.0 + 0.0j
    for s in range(0, len(gv), chunk):
        d = (gv[None, :] - gv[s : s + chunk, None]) * T
        with np.errstate(divide="ignore", invalid="ignore"):
            m = np.where(d == 0, 1.0, (np.exp(1j * d) - 1) / (1j * np.where(d == 0, 1, d)))
        total += np.conj(vv[s : s + chunk]) @ (m @ vv)
    return float(total.real)


def time_average_quadrature(
    f: Callable[[NDArray[np.float64]], NDArray[np.float64]], T: float, max_frequency: float, n_nodes: int = 256
) -> float:
    """Uniform average of ``f`` over ``[0, T]`` by composite Gauss-Legendre quadrature.

    Panels are chosen so each spans at most 16 periods of ``max_frequency``
    (angular), with ``n_nodes`` nodes per panel.
    """
    n_panels = max(1, int(math.ceil(max_frequency * T / (2 * math.pi * 16))))
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    edges = np.linspace(0.0, T, n_panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        t = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        total += 0.5 * (hi - lo) * float(np.sum(w * f(t)))
    return total / T


# ---------------------------------------------------------------------------
# Distances and measurements
# ---------------------------------------------------------------------------


def trace_distance(rho: ArrayLike, sigma: ArrayLike) -> float:
    d = _as_density(rho) - _as_density(sigma)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + dagger(d))))))


@dataclass(frozen=True)
class MeasurementSet:
    """Measurements given as complete families of orthogonal projectors."""

    measurements: tuple[tuple[NDArray[np.complex128], ...], ...]

    def __post_init__(self) -> None:
        if not self.measurements:
            raise ValueError("measurement set is empty")
        clean = []
        for meas in self.measurements:
            ps = tuple(np.asarray(p, dtype=complex) for p in meas)
            d = ps[0].shape[0]
            if op_norm(sum(ps) - np.eye(d)) > 1e-10:
                raise ValueError("projectors of a measurement do not sum to the identity")
            for p in ps:
                if op_norm(p - dagger(p)) > 1e-10 or op_norm(p @ p - p) > 1e-10:
                    raise ValueError("measurement element is not an orthogonal projector")
            clean.append(ps)
        object.__setattr__(self, "measurements", tuple(clean))

    @property
    def n_outcomes(self) -> int:
        """``S(M)``: total number of outcomes over all measurements."""
        return sum(len(m) for m in self.measurements)

    @classmethod
    def two_outcome(cls, projector: ArrayLike) -> "MeasurementSet":
        p = np.asarray(projector, dtype=complex)
        return cls(((p, np.eye(p.shape[0]) - p),))


def distinguishability(rho: ArrayLike, sigma: ArrayLike, measurements: MeasurementSet) -> float:
    """``max_M (1/2) sum_i |tr P_i (rho - sigma)|``."""
    d = _as_density(rho) - _as_density(sigma)
    return max(0.5 * sum(abs(np.trace(p @ d)) for p in meas) for meas in measurements.measurements)


def partial_trace(rho: ArrayLike, dims: tuple[int, int], keep: int = 0) -> NDArray[np.complex128]:
    """Reduced state of factor ``keep`` of a bipartite ``dims[0] x dims[1]`` system."""
    r = _as_density(rho).reshape(dims[0], dims[1], dims[0], dims[1])
    return np.einsum("ajbj->ab", r) if keep == 0 else np.einsum("iaib->ab", r)


# ---------------------------------------------------------------------------
# Bounds
# ---------------------------------------------------------------------------


def _bracket(n_eps: float, eps: float, T: float) -> float:
    for name, val in (("N(eps)", n_eps), ("eps", eps), ("T", T)):
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")
    return 2.5 * math.pi * n_eps * (0.75 + (0.0 if math.isinf(T) else 1.0 / (eps * T)))


def bound_expectation(d_eff: float, n_eps: float, eps: float, T: float) -> float:
    """``(N / d_eff)(5 pi / 2)[3/4 + 1/(eps T)]``."""
    if not d_eff > 0:
        raise ValueError("d_eff must be positive")
    return _bracket(n_eps, eps, T) / d_eff


def bound_system(n_outcomes: int, d_eff: float, n_eps: float, eps: float, T: float) -> float:
    """``S(M) / (4 sqrt d_eff) * sqrt((5 pi / 2) N [3/4 + 1/(eps T)])``."""
    if not (n_outcomes > 0 and d_eff > 0):
        raise ValueError("S(M) and d_eff must be positive")
    return n_outcomes / (4 * math.sqrt(d_eff)) * math.sqrt(_bracket(n_eps, eps, T))


def bound_subsystem(d_S: int, d_eff: float, n_eps: float, eps: float, T: float) -> float:
    """``(1/2) sqrt(d_S^2 / d_eff * (5 pi / 2) N [3/4 + 1/(eps T)])``."""
    if not (d_S > 0 and d_eff > 0):
        raise ValueError("d_S and d_eff must be positive")
    return 0.5 * math.sqrt(d_S**2 / d_eff * _bracket(n_eps, eps, T))


# ---------------------------------------------------------------------------
# Gap statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GapStats:
    gaps: NDArray[np.float64]
    eps: NDArray[np.float64]
    n_eps: NDArray[np.int64]
    D_G: int
    eps_min: float
    histogram: tuple[NDArray[np.int64], NDArray[np.float64]]

    def N(self, eps: float) -> int:
        return _window_count(self.gaps, eps)


def _window_count(sorted_gaps: NDArray[np.float64], eps: float) -> int:
    """``max_E #{G in [E, E + eps)}``; windows starting at a gap suffice."""
    if len(sorted_gaps) == 0:
        return 0
    hi = np.searchsorted(sorted_gaps, sorted_gaps + eps, side="left")
    return int(np.max(hi - np.arange(len(sorted_gaps))))


def gap_stats(
    system: SpectralSystem | ArrayLike, eps_list: Sequence[float] = (), degeneracy_tol: float | None = None, bins: int = 50
) -> GapStats:
    """Gap multiset ``{E_k - E_l : k != l}`` over distinct levels and its counting functions.

    Gaps within the tolerance are snapped to their cluster mean, so
    ``D_G`` is the largest cluster and ``eps_min`` the smallest spacing of
    distinct gap values; ``N(eps_min) = D_G``.
    """
    if isinstance(system, SpectralSystem):
        levels = system.levels
        tol = system.degeneracy_tol if degeneracy_tol is None else degeneracy_tol
    else:
        e = np.sort(np.asarray(system, dtype=float))
        scale = max(1.0, float(np.max(np.abs(e)))) if len(e) else 1.0
        tol = 1e-9 * scale if degeneracy_tol is None else degeneracy_tol
        levels, _ = _snap(e, tol)
    n = len(levels)
    g = (levels[:, None] - levels[None, :])[~np.eye(n, dtype=bool)]
    means, labels = _snap(g, tol)
    snapped = np.sort(means[labels])
    counts = np.bincount(labels)
    d_g = int(np.max(counts)) if len(counts) else 0
    eps_min = float(np.min(np.diff(means))) if len(means) > 1 else math.inf
    eps_arr = np.asarray(eps_list, dtype=float)
    if np.any(eps_arr <= 0):
        raise ValueError("eps values must be positive")
    n_eps = np.array([_window_count(snapped, x) for x in eps_arr], dtype=np.int64)
    hist = np.histogram(snapped, bins=bins) if len(snapped) else (np.zeros(0, dtype=np.int64), np.zeros(1))
    return GapStats(gaps=snapped, eps=eps_arr, n_eps=n_eps, D_G=d_g, eps_min=eps_min, histogram=hist)


# ---------------------------------------------------------------------------
# Bound verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    kind: str
    lhs: float
    rhs: float
    inputs: dict

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


def verify_bound(
    system: SpectralSystem,
    psi: ArrayLike,
    T: float,
    eps: float | None = None,
    observable: ArrayLike | None = None,
    subsystem_dim: int | None = None,
    measurements: MeasurementSet | None = None,
    n_nodes: int = 256,
) -> BoundReport:
    """Exact left-hand side against the bound for one pure state.

    Exactly one of ``observable`` (expectation-value bound, lhs divided by
    ``||A||^2``), ``subsystem_dim`` (trace distance of the first tensor
    factor of that dimension) or ``measurements`` must be given.  The
    latter two time averages use composite Gauss-Legendre quadrature with
    ``n_nodes`` nodes per panel.  ``eps`` defaults to ``eps_min``.
    """
    if sum(x is not None for x in (observable, subsystem_dim, measurements)) != 1:
        raise ValueError("give exactly one of observable, subsystem_dim, measurements")
    psi = _validate_state(psi, system.dim)
    if psi.ndim != 1:
        raise ValueError("verify_bound expects a pure state")
    stats = gap_stats(system)
    eps_v = stats.eps_min if eps is None else float(eps)
    n_eps = stats.N(eps_v)
    d_eff = effective_dimension(psi, system)
    inputs = {"d_eff": d_eff, "N_eps": n_eps, "eps": eps_v, "T": T}
    if observable is not None:
        a = np.asarray(observable, dtype=complex)
        norm_a = op_norm(a)
        lhs = averaged_fluctuation(psi, system, a, T) / norm_a**2 if norm_a > 0 else 0.0
        return BoundReport("expectation", lhs, bound_expectation(d_eff, n_eps, eps_v, T), inputs)
    if math.isinf(T):
        raise ValueError("quadrature bounds need a finite T")
    omega = time_average_state(psi, system)
    wmax = float(system.energies[-1] - system.energies[0])
    if subsystem_dim is not None:
        d_s = int(subsystem_dim)
        if system.dim % d_s:
            raise ValueError("subsystem dimension must divide the total dimension")
        dims = (d_s, system.dim // d_s)
        omega_s = partial_trace(omega, dims)

        def dist(t: NDArray[np.float64]) -> NDArray[np.float64]:
            ps = evolve_state(psi, system, t).T.reshape(len(t), dims[0], dims[1])
            rs = np.einsum("tai,tbi->tab", ps, ps.conj()) - omega_s[None]
            return 0.5 * np.sum(np.abs(np.linalg.eigvalsh(rs)), axis=-1)

        lhs = time_average_quadrature(dist, T, wmax, n_nodes)
        inputs["d_S"] = d_s
        return BoundReport("subsystem", lhs, bound_subsystem(d_s, d_eff, n_eps, eps_v, T), inputs)
    projs = [p for meas in measurements.measurements for p in meas]
    base = np.array([np.real(np.trace(p @ omega)) for p in projs])

    def dist_m(t: NDArray[np.float64]) -> NDArray[np.float64]:
        ps = evolve_state(psi, system, t)
        probs = np.array([np.real(np.einsum("it,ij,jt->t", ps.conj(), p, ps)) for p in projs])
        diffs = np.abs(probs - base[:, None])
        out, k = [], 0
        for meas in measurements.measurements:
            out.append(0.5 * diffs[k : k + len(meas)].sum(axis=0))
            k += len(meas)
        return np.max(np.array(out), axis=0)

    lhs = time_average_quadrature(dist_m, T, wmax, n_nodes)
    inputs["S_M"] = measurements.n_outcomes
    return BoundReport("system", lhs, bound_system(measurements.n_outcomes, d_eff, n_eps, eps_v, T), inputs)


# ---------------------------------------------------------------------------
# Slow equilibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlowEquilibrationReport:
    projector: NDArray[np.complex128]
    tau: float
    sigma_E: float
    d_eff: float
    times: NDArray[np.float64]
    distinguishability: NDArray[np.float64]
    lower_bound: float
    trace_p_omega: float
    sampled_infinite_average: float
    infinite_average_bound: float

    @property
    def window_holds(self) -> bool:
        return bool(np.all(self.distinguishability >= self.lower_bound))

    @property
    def infinite_holds(self) -> bool:
        return 2 * self.trace_p_omega <= self.infinite_average_bound


def slow_equilibration_construct(
    system: SpectralSystem,
    psi: ArrayLike,
    K: int,
    eps: float,
    n_window: int = 50,
    n_long: int = 2000,
    seed: int = 0,
) -> SlowEquilibrationReport:
    """Projector onto ``K`` snapshots ``psi((2j+1) tau)``, ``tau = eps / sigma_E``.

    Checks ``D_M(rho(t), omega) >= 1 - eps^2 - sqrt(K / d_eff)`` on
    ``n_window`` evenly spaced times in ``[0, 2 K tau]`` for ``M = {P, 1 - P}``.
    The infinite-time average satisfies
    ``<D_M>_inf <= <tr P rho(t)>_inf + tr P omega = 2 tr P omega <= 2 sqrt(K / d_eff)``;
    the report carries ``tr P omega`` and a sampled estimate of ``<D_M>_inf``
    over ``n_long`` random times.

    Raises
    ------
    ValueError
        If the state has zero energy variance.
    """
    psi = _validate_state(psi, system.dim)
    if psi.ndim != 1:
        raise ValueError("slow equilibration construction expects a pure state")
    c = dagger(system.vectors) @ psi
    p = np.abs(c) ** 2
    mean_e = float(np.sum(p * system.energies))
    sigma = float(np.sqrt(max(0.0, np.sum(p * (system.energies - mean_e) ** 2))))
    if sigma <= 1e-12 * max(1.0, float(np.max(np.abs(system.energies)))):
        raise ValueError("energy variance is zero (eigenstate input); tau is undefined")
    if K < 1:
        raise ValueError("K must be at least 1")
    tau = eps / sigma
    snaps = evolve_state(psi, system, (2 * np.arange(K) + 1) * tau)
    q, r = np.linalg.qr(snaps)
    q = q[:, np.abs(np.diag(r)) > 1e-12]
    proj = q @ dagger(q)
    omega = time_average_state(psi, system)
    tr_p_omega = float(np.real(np.trace(proj @ omega)))
    d_eff = effective_dimension(psi, system)
    times = np.linspace(0.0, 2 * K * tau, n_window)
    states = evolve_state(psi, system, times)
    overlap = np.sum(np.abs(dagger(q) @ states) ** 2, axis=0)
    dist = np.abs(overlap - tr_p_omega)
    rng = np.random.default_rng(seed)
    gaps = np.diff(system.levels)
    horizon = 1e4 / max(float(np.min(gaps)) if len(gaps) else 1.0, 1e-12)
    long_t = rng.uniform(0, horizon, size=n_long)
    long_states = evolve_state(psi, system, long_t)
    long_d = np.abs(np.sum(np.abs(dagger(q) @ long_states) ** 2, axis=0) - tr_p_omega)
    return SlowEquilibrationReport(
        projector=proj,
        tau=tau,
        sigma_E=sigma,
        d_eff=d_eff,
        times=times,
        distinguishability=dist,
        lower_bound=1 - eps**2 - math.sqrt(K / d_eff),
        trace_p_omega=tr_p_omega,
        sampled_infinite_average=float(np.mean(long_d)),
        infinite_average_bound=2 * math.sqrt(K / d_eff),
    )


# ---------------------------------------------------------------------------
# Energy filtering
# ---------------------------------------------------------------------------


def energy_filter(A: ArrayLike, system: SpectralSystem, weight: str = "top_hat", T: float = 1.0) -> NDArray[np.complex128]:
    """``int f(t) A(t) dt`` with ``A(t) = exp(iHt) A exp(-iHt)`` and a unit-normalized weight.

    ``top_hat`` is uniform on ``[0, T]`` (factor ``(exp(i G T) - 1)/(i G T)``);
    ``lorentzian`` is ``(1/pi) T / (T^2 + (t - T/2)^2)`` (factor
    ``exp(-|G| T) exp(i G T / 2)``), with ``G = E_i - E_j`` for element ``(i, j)``.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    v = system.vectors
    ap = dagger(v) @ np.asarray(A, dtype=complex) @ v
    g = system.energies[:, None] - system.energies[None, :]
    g = np.where(np.abs(g) <= system.degeneracy_tol, 0.0, g)
    if weight == "top_hat":
        x = g * T
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(x == 0, 1.0, (np.exp(1j * x) - 1) / (1j * np.where(x == 0, 1, x)))
    elif weight == "lorentzian":
        fac = np.exp(-np.abs(g) * T) * np.exp(1j * g * T / 2)
    else:
        raise ValueError(f"unknown weight {weight!r}")
    return v @ (ap * fac) @ dagger(v)


# ---------------------------------------------------------------------------
# Gap model and toy model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GapModelResult:
    energies: NDArray[np.float64]
    beta: float
    eps: NDArray[np.float64]
    mean_gap: float
    sigma_gap: float
    n_eps: NDArray[np.int64]
    predicted_mean_gap: float
    predicted_sigma_gap: float
    predicted_n_eps: NDArray[np.float64]


def exponential_gap_model(
    beta: float, delta: float, d_E: int, seed: int, eps_list: Sequence[float] = ()
) -> GapModelResult:
    """Sample ``d_E`` energies from density ``~ exp(beta E)`` on ``[0, delta]`` and compare gap statistics.

    Mean and standard deviation are over ``|E_k - E_l|``, ``k < l``; the
    predictions are ``1/beta``, ``1/beta`` and ``N(eps) = d_E^2 beta eps / 2``.
    """
    if beta <= 0 or delta <= 0 or d_E < 2:
        raise ValueError("need beta > 0, delta > 0 and d_E >= 2")
    if beta * delta < 10:
        warnings.warn("beta * delta is not large; predictions assume beta * delta >> 1", stacklevel=2)
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=d_E)
    e = np.sort(np.log1p(u * np.expm1(beta * delta)) / beta)
    iu = np.triu_indices(d_E, 1)
    g = np.abs(e[:, None] - e[None, :])[iu]
    stats = gap_stats(e, eps_list, degeneracy_tol=1e-12 * delta, bins=10)
    eps = np.asarray(eps_list, dtype=float)
    return GapModelResult(
        energies=e,
        beta=beta,
        eps=eps,
        mean_gap=float(np.mean(g)),
        sigma_gap=float(np.std(g)),
        n_eps=stats.n_eps,
        predicted_mean_gap=1 / beta,
        predicted_sigma_gap=1 / beta,
        predicted_n_eps=d_E**2 * beta * eps / 2,
    )


@dataclass(frozen=True)
class ToyModel:
    system: SpectralSystem
    nu: float
    lam: float
    n_max: int

    @property
    def dims(self) -> tuple[int, int]:
        return (2, self.n_max)

    def index(self, qubit: int, n: int) -> int:
        return qubit * self.n_max + n

    def environment_state(self, rng: np.random.Generator) -> NDArray[np.complex128]:
        """Random oscillator state on levels ``1 .. n_max - 2`` (avoids the ground and the unpaired top level)."""
        z = np.zeros(self.n_max, dtype=complex)
        z[1 : self.n_max - 1] = rng.standard_normal(self.n_max - 2) + 1j * rng.standard_normal(self.n_max - 2)
        return z / np.linalg.norm(z)

    def subsystem_average(self, psi: ArrayLike) -> NDArray[np.complex128]:
        """Qubit reduced state of the infinite-time average."""
        return partial_trace(time_average_state(psi, self.system), self.dims)


def qubit_oscillator_model(nu: float, lam: float, n_max: int) -> ToyModel:
    """Qubit (levels ``0``, ``nu``) and oscillator truncated to ``n_max`` levels, coupled by
    ``lam sum_n (|0,n+1><nu,n| + h.c.)``.

    The pairs ``|0,n+1>``, ``|nu,n>`` (``n = 0 .. n_max - 2``) form 2 x 2
    blocks with eigenvalues ``(n+1) nu +- lam``.

    Raises
    ------
    ValueError
        If ``lam == 0`` (every block stays degenerate) or ``n_max < 4``.
    """
    if lam == 0:
        raise ValueError("lam = 0 leaves degenerate pairs uncoupled")
    if n_max < 4:
        raise ValueError("n_max must be at least 4")
    d = 2 * n_max
    h = np.zeros((d, d), dtype=complex)
    for q in range(2):
        for n in range(n_max):
            h[q * n_max + n, q * n_max + n] = q * nu + n * nu
    for n in range(n_max - 1):
        i, j = 0 * n_max + n + 1, 1 * n_max + n
        h[i, j] = h[j, i] = lam
    return ToyModel(system=SpectralSystem.from_hamiltonian(h), nu=nu, lam=lam, n_max=n_max)
