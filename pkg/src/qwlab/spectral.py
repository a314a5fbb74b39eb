"""Quasi-energy spectra, fermion doubling, b.c.c. restriction and U(1) gauge coupling."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import minimize

from ._linalg import HADAMARD_MATRIX, SIGMA_X, SIGMA_Y, SIGMA_Z, dagger, op_norm
from .walk_core import (
    CoinedWalk,
    ConditionalShift,
    Lattice,
    WaveState,
    conditional_shift,
    dense_operator,
    momentum_symbol,
)

__all__ = [
    "DispersionData",
    "DoublerReport",
    "GaugeField",
    "GaugedWalk",
    "BccProjection",
    "BccLocalCheck",
    "quasi_energy",
    "dispersion",
    "trace_map",
    "find_doublers",
    "reduce_to_bcc_zone",
    "bcc_project",
    "reversed_order_walk",
    "apply_gauge",
    "bcc_local_decomposition_check",
    "naive_fermion_energy",
]


def _fold(theta: NDArray[np.float64]) -> NDArray[np.float64]:
    """Map phases into (-pi, pi]."""
    out = np.mod(theta + np.pi, 2 * np.pi) - np.pi
    return np.where(np.isclose(out, -np.pi, atol=1e-15, rtol=0), np.pi, out)


def quasi_energy(walk: CoinedWalk, p: ArrayLike) -> NDArray[np.float64]:
    """Sorted quasi-energies ``E`` with ``U(p)`` eigenvalues ``exp(-i E tau)``.

    Values lie in ``(-pi/tau, pi/tau]`` where ``tau`` is the walk's time
    step; ``p`` may carry batch axes, the bands go on the last axis.
    """
    lam = np.linalg.eigvals(momentum_symbol(walk, p))
    return np.sort(_fold(-np.angle(lam)) / walk.time_step, axis=-1)


def naive_fermion_energy(p: ArrayLike, mass: float, spacing: float) -> NDArray[np.float64]:
    """Positive branch of the naive lattice-fermion dispersion ``sqrt(sin^2(pa)/a^2 + m^2)``."""
    p = np.asarray(p, dtype=float)
    return np.sqrt(np.sin(p * spacing) ** 2 / spacing**2 + mass**2)


@dataclass(frozen=True)
class DispersionData:
    """Bands on a set of momenta; ``bands[k]`` is sorted ascending."""

    momenta: NDArray[np.float64]
    bands: NDArray[np.float64]
    time_step: float

    def max_modulus_defect(self, walk: CoinedWalk) -> float:
        lam = np.linalg.eigvals(momentum_symbol(walk, self.momenta))
        return float(np.max(np.abs(np.abs(lam) - 1)))


def _full_grid(lattice_dims: int, n: int, spacing: float) -> NDArray[np.float64]:
    k = np.arange(-n // 2 + 1, n // 2 + 1)
    axis = 2 * np.pi * k / (n * spacing)
    mesh = np.meshgrid(*([axis] * lattice_dims), indexing="ij")
    return np.stack(mesh, axis=-1)


def dispersion(walk: CoinedWalk, grid: ArrayLike | None = None) -> DispersionData:
    """Bands on ``grid`` (shape ``(n, dims)``), defaulting to the walk's lattice momenta."""
    if grid is None:
        grid = walk.lattice.momentum_grid()
    g = np.asarray(grid, dtype=float)
    if walk.lattice.dims == 1 and g.ndim == 1:
        g = g[:, None]
    return DispersionData(momenta=g, bands=quasi_energy(walk, g), time_step=walk.time_step)


def trace_map(walk: CoinedWalk, grid: ArrayLike) -> NDArray[np.complex128]:
    """``tr U(p)`` for every momentum in ``grid``."""
    return np.trace(momentum_symbol(walk, grid), axis1=-2, axis2=-1)


# ---------------------------------------------------------------------------
# Doubling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DoublerReport:
    momenta: NDArray[np.float64]
    min_quasi_energy: NDArray[np.float64]
    threshold: float
    n_grid: int
    candidates: int

    @property
    def count(self) -> int:
        return len(self.momenta)


def _wrap_momentum(p: NDArray[np.float64], spacing: float, snap: bool = True) -> NDArray[np.float64]:
    bz = np.pi / spacing
    out = np.mod(p + bz, 2 * bz) - bz
    if not snap:
        # exact translate by 2 pi / a only
        return np.where(out <= -bz, out + 2 * bz, out)
    return np.where(np.isclose(out, -bz, atol=1e-9 / spacing, rtol=0), bz, out)


def _lipschitz(walk: CoinedWalk) -> float:
    """Bound on ``|dE/dp|`` (operator-norm derivative of the symbol over the time step)."""
    a = walk.lattice.spacing
    return sum(np.linalg.norm(q) * op_norm(m) for q, m in walk.terms.items()) * a / walk.time_step


def _dedupe(points: list[NDArray[np.float64]], spacing: float, tol: float) -> list[int]:
    keep: list[int] = []
    period = 2 * np.pi / spacing
    for i, p in enumerate(points):
        dup = False
        for j in keep:
            d = p - points[j]
            d = d - period * np.round(d / period)
            if np.linalg.norm(d) < tol:
                dup = True
                break
        if not dup:
            keep.append(i)
    return keep


def find_doublers(walk: CoinedWalk, threshold: float | None = None, n_grid: int = 32) -> DoublerReport:
    """Momenta where the smallest ``|E|`` over the bands reaches (near) zero.

    The Brillouin zone is scanned on an ``n_grid``-per-axis grid.  Grid
    local minima of ``f(p) = min_band |E(p)|`` that could hide a zero
    (``f`` within the Lipschitz slack of the threshold) are refined by
    Nelder-Mead on ``f^2`` and kept if the refined value is below the
    threshold (default ``0.05 / a``).  Results are deduplicated modulo the
    reciprocal lattice.

    Raises
    ------
    RuntimeError
        If a refinement does not converge.
    """
    if n_grid < 16:
        raise ValueError("n_grid must be at least 16")
    a = walk.lattice.spacing
    dims = walk.lattice.dims
    thr = 0.05 / a if threshold is None else float(threshold)
    grid = _full_grid(dims, n_grid, a)
    f = np.min(np.abs(quasi_energy(walk, grid)), axis=-1)
    h = 2 * np.pi / (n_grid * a)
    slack = _lipschitz(walk) * h * np.sqrt(dims)
    is_min = f <= thr + slack
    for ax in range(dims):
        for sh in (1, -1):
            is_min &= f <= np.roll(f, sh, axis=ax)

    def objective(x: NDArray[np.float64]) -> float:
        return float(np.min(np.abs(quasi_energy(walk, x[None, :])))) ** 2

    found: list[NDArray[np.float64]] = []
    values: list[float] = []
    cands = np.argwhere(is_min)
    for idx in cands:
        x0 = grid[tuple(idx)]
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-26, "maxiter": 4000, "initial_simplex": x0 + 0.25 * h * np.vstack([np.zeros(dims), np.eye(dims)])},
        )
        val = float(np.sqrt(max(res.fun, 0.0)))
        if not res.success and val > thr:
            raise RuntimeError(f"doubler refinement from {x0} did not converge: {res.message}")
        if val <= thr:
            found.append(_wrap_momentum(res.x, a))
            values.append(val)
    keep = _dedupe(found, a, tol=0.5 * h)
    moms = np.array([found[i] for i in keep]).reshape(-1, dims)
    vals = np.array([values[i] for i in keep])
    order = np.lexsort(moms.T[::-1]) if len(moms) else np.array([], dtype=int)
    return DoublerReport(
        momenta=moms[order], min_quasi_energy=vals[order], threshold=thr, n_grid=n_grid, candidates=len(cands)
    )


# ---------------------------------------------------------------------------
# b.c.c. sublattice
# ---------------------------------------------------------------------------


def reduce_to_bcc_zone(p: ArrayLike, spacing: float) -> NDArray[np.float64]:
    """Representative of ``p`` in ``(-pi/a, pi/a] x (-pi/2a, pi/2a]^{dims-1}``.

    Uses the reciprocal vectors ``pi (e_0 + e_j) / a`` of the sublattice on
    which all coordinates share one parity, then wraps ``p_0`` by ``2 pi / a``.
    """
    p = np.array(p, dtype=float)
    half = np.pi / (2 * spacing)
    for j in range(1, p.shape[-1]):
        k = np.ceil((p[..., j] - half) / (2 * half) - 1e-12)
        p[..., j] -= 2 * half * k
        p[..., 0] -= 2 * half * k
    p[..., 0] = _wrap_momentum(p[..., 0], spacing, snap=False)
    return p


def _on_sublattice(walk: CoinedWalk) -> bool:
    for q in walk.offsets:
        if len({x % 2 for x in q}) > 1:
            return False
    return True


def reversed_order_walk(walk: CoinedWalk) -> CoinedWalk:
    """Walk with the factor order reversed (``T_x T_y T_z -> T_z T_y T_x``)."""
    if walk.factors is None:
        raise ValueError("walk has no recorded factors")
    return CoinedWalk.from_factors(walk.lattice, list(walk.factors)[::-1], time_step=walk.time_step)


@dataclass(frozen=True)
class BccProjection:
    walk: CoinedWalk
    doublers: DoublerReport
    second_step_symbols: tuple[NDArray[np.complex128], ...] = field(default=())

    def symbol(self, p: ArrayLike) -> NDArray[np.complex128]:
        """Symbol of the restricted walk at ``p`` (any representative)."""
        return momentum_symbol(self.walk, reduce_to_bcc_zone(p, self.walk.lattice.spacing))


def bcc_project(walk: CoinedWalk, threshold: float | None = None, n_grid: int = 32) -> BccProjection:
    """Restrict a walk to the sublattice on which all coordinates share one parity.

    Doublers of the full zone are mapped into the reduced zone and merged.
    When the walk has recorded factors, ``second_step_symbols`` holds the
    symbol of the reversed-order product at each non-origin doubler.

    Raises
    ------
    ValueError
        If an offset mixes parities (the walk leaves the sublattice) or the
        dimension is not 2 or 3.
    """
    a = walk.lattice.spacing
    if walk.lattice.dims not in (2, 3):
        raise ValueError("b.c.c. projection needs a 2D or 3D walk")
    if not _on_sublattice(walk):
        raise ValueError("walk has offsets of mixed parity and leaves the sublattice")
    full = find_doublers(walk, threshold=threshold, n_grid=n_grid)
    reduced = [reduce_to_bcc_zone(p, a) for p in full.momenta]
    h = 2 * np.pi / (n_grid * a)
    period_ok = []
    for i, p in enumerate(reduced):
        if all(_bcc_distance(p, reduced[j], a) >= 0.5 * h for j in period_ok):
            period_ok.append(i)
    moms = np.array([reduced[i] for i in period_ok]).reshape(-1, walk.lattice.dims)
    vals = full.min_quasi_energy[period_ok]
    report = DoublerReport(
        momenta=moms, min_quasi_energy=vals, threshold=full.threshold, n_grid=n_grid, candidates=full.candidates
    )
    second: tuple[NDArray[np.complex128], ...] = ()
    if walk.factors is not None:
        rev = reversed_order_walk(walk)
        second = tuple(momentum_symbol(rev, p) for p in moms if np.linalg.norm(p) > 0.5 * h)
    return BccProjection(walk=walk, doublers=report, second_step_symbols=second)


def _bcc_distance(p: NDArray[np.float64], q: NDArray[np.float64], spacing: float) -> float:
    """Distance modulo the sublattice reciprocal lattice (checked over neighbouring images)."""
    dims = p.size
    basis = [np.zeros(dims) for _ in range(dims)]
    basis[0][0] = 2 * np.pi / spacing
    for j in range(1, dims):
        basis[j][0] = basis[j][j] = np.pi / spacing
    best = np.inf
    for ks in itertools.product((-1, 0, 1), repeat=dims):
        shift = sum(k * b for k, b in zip(ks, basis))
        best = min(best, float(np.linalg.norm(p - q - shift)))
    return best


# ---------------------------------------------------------------------------
# Gauge coupling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaugeField:
    """Link phases ``A_b(n) a`` (mod 2 pi) on the link from ``n`` to ``n + e_b``.

    ``phases`` has shape ``(dims, *extents)``.
    """

    lattice: Lattice
    phases: NDArray[np.float64]

    def __post_init__(self) -> None:
        ph = np.mod(np.asarray(self.phases, dtype=float), 2 * np.pi)
        if ph.shape != (self.lattice.dims, *self.lattice.extents):
            raise ValueError(f"phases must have shape {(self.lattice.dims, *self.lattice.extents)}, got {ph.shape}")
        ph.setflags(write=False)
        object.__setattr__(self, "phases", ph)

    @classmethod
    def zero(cls, lattice: Lattice) -> "GaugeField":
        return cls(lattice, np.zeros((lattice.dims, *lattice.extents)))

    @classmethod
    def constant(cls, lattice: Lattice, value: Sequence[float] | float) -> "GaugeField":
        v = np.broadcast_to(np.asarray(value, dtype=float), (lattice.dims,))
        return cls(lattice, np.ones((lattice.dims, *lattice.extents)) * v.reshape((-1,) + (1,) * lattice.dims))

    @classmethod
    def random(cls, lattice: Lattice, rng: np.random.Generator) -> "GaugeField":
        return cls(lattice, rng.uniform(0, 2 * np.pi, size=(lattice.dims, *lattice.extents)))

    def transformed(self, lam: ArrayLike) -> "GaugeField":
        """Field after the gauge transformation ``A_b(n) a -> A_b(n) a + lam(n + e_b) - lam(n)``.

        The matching state transformation is ``psi(n) -> exp(-i lam(n)) psi(n)``.
        """
        lam = np.asarray(lam, dtype=float)
        if lam.shape != self.lattice.extents:
            raise ValueError("gauge function must be defined on every site")
        new = np.stack([self.phases[b] + np.roll(lam, -1, axis=b) - lam for b in range(self.lattice.dims)])
        return GaugeField(self.lattice, new)


def _axis_step(q: tuple[int, ...]) -> tuple[int, int] | None:
    """``(axis, +-1)`` for a unit axis shift, ``None`` for no shift."""
    nz = [(b, s) for b, s in enumerate(q) if s != 0]
    if not nz:
        return None
    if len(nz) > 1 or abs(nz[0][1]) != 1:
        raise ValueError(f"gauge coupling needs nearest-neighbour axis shifts, got offset {q}")
    return nz[0]


class GaugedWalk:
    """Walk whose conditional shifts pick up link phases.

    A hop from ``n`` to ``n + e_b`` multiplies by ``exp(-i A_b(n) a)``; the
    reverse hop from ``n`` to ``n - e_b`` multiplies by ``exp(+i A_b(n - e_b) a)``.
    """

    def __init__(self, walk: CoinedWalk, gauge: GaugeField) -> None:
        if walk.factors is None:
            raise ValueError("gauge coupling needs a walk built from coins and conditional shifts")
        if gauge.lattice.extents != walk.lattice.extents:
            raise ValueError("gauge field and walk live on different lattices")
        for f in walk.factors:
            if isinstance(f, ConditionalShift):
                for _, q in f.branches:
                    _axis_step(q)
        self.walk = walk
        self.gauge = gauge
        self._fwd = np.exp(-1j * gauge.phases)
        self._bwd = np.stack([np.exp(1j * np.roll(gauge.phases[b], 1, axis=b)) for b in range(walk.lattice.dims)])

    def _apply_shift(self, f: ConditionalShift, psi: NDArray[np.complex128]) -> NDArray[np.complex128]:
        out = np.zeros_like(psi)
        for proj, q in f.branches:
            comp = psi @ proj.T
            st = _axis_step(q)
            if st is None:
                out += comp
                continue
            b, s = st
            phase = self._fwd[b] if s > 0 else self._bwd[b]
            out += np.roll(comp * phase[..., None], s, axis=b)
        return out

    def step(self, state: WaveState) -> WaveState:
        psi = state.amplitudes
        for f in reversed(self.walk.factors):
            if isinstance(f, ConditionalShift):
                psi = self._apply_shift(f, psi)
            else:
                psi = psi @ np.asarray(f).T
        return WaveState(state.lattice, psi)

    def evolve(self, state: WaveState, n_steps: int) -> tuple[WaveState, NDArray[np.float64]]:
        rows = [state.probabilities()]
        cur = state
        for _ in range(n_steps):
            cur = self.step(cur)
            rows.append(cur.probabilities())
        return cur, np.array(rows)

    def dense(self) -> NDArray[np.complex128]:
        """Dense matrix (site-major, same layout as :func:`dense_operator`); at most 4096-dim."""
        lat = self.walk.lattice
        d = self.walk.coin_dim
        dim = lat.n_sites * d
        if dim > 1 << 12:
            raise ValueError("dense gauged operator limited to 4096 dimensions")
        cols = []
        for k in range(dim):
            e = np.zeros(dim, dtype=complex)
            e[k] = 1
            cols.append(self.step(WaveState(lat, e.reshape(*lat.extents, d))).amplitudes.reshape(-1))
        return np.stack(cols, axis=1)


def apply_gauge(walk: CoinedWalk, field: GaugeField) -> GaugedWalk:
    """Couple a factored walk to a U(1) link field."""
    return GaugedWalk(walk, field)


# ---------------------------------------------------------------------------
# Local implementation of the sublattice-restricted walk
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BccLocalCheck:
    passed: bool
    residual: float
    dimension: int
    n_local_gates: int


def _bcc_sites(extents: tuple[int, ...]) -> tuple[NDArray[np.int64], dict[tuple[int, ...], int]]:
    coords = [c for c in itertools.product(*[range(n) for n in extents]) if len({x % 2 for x in c}) == 1]
    return np.array(coords), {c: i for i, c in enumerate(coords)}


def bcc_local_decomposition_check(
    dims: int, extent: int = 4, model: str = "weyl", r2_phase_error: float = 0.0, tol: float = 1e-10
) -> BccLocalCheck:
    """Verify that the sublattice-restricted Weyl/Dirac walk factors into local gates.

    The restricted walk ``V = T_0 ... T_{dims-1}`` (axis 0 shifts in the
    ``sigma_x`` basis, the next axis in ``sigma_y`` (3D only), the last in
    ``sigma_z``) is compared with a product built only from gates acting on
    pairs of basis states at bounded distance:

    * ``R1``: swaps ``|z>|n> <-> |z_perp>|n + (1,...,1)>`` followed by ``X``
      on the coin, i.e. the diagonal conditional shift;
    * pair superposers on ``(|z>|m>, |z_perp>|m - 2 v>)`` with ``v`` a
      partial diagonal (``e_0`` in 2D; ``e_0 + e_1`` then ``e_0`` in 3D);
    * a final on-site coin rotation to the ``sigma_x`` eigenbasis.

    ``model="identity"`` checks the trivial walk against the identity
    gate sequence.  ``r2_phase_error`` puts a phase on one branch of the
    pair superposers (a negative control).
    """
    if dims not in (2, 3):
        raise ValueError("dims must be 2 or 3")
    if extent % 2 or extent < 4 or extent > 6:
        raise ValueError("extent must be 4 or 6")
    ext = (extent,) * dims
    coords, index = _bcc_sites(ext)
    n = len(coords)
    d = 2
    dim = n * d
    full_idx = np.array([np.ravel_multi_index(tuple(c), ext) for c in coords])
    sel = (full_idx[:, None] * d + np.arange(d)[None, :]).reshape(-1)
    eye = np.eye(dim, dtype=complex)

    if model == "identity":
        v = eye
        gates = [eye]
        n_gates = 0
    elif model == "weyl":
        gens = (SIGMA_X, SIGMA_Z) if dims == 2 else (SIGMA_X, SIGMA_Y, SIGMA_Z)
        lat = Lattice(ext, 1.0)
        walk = CoinedWalk.from_factors(lat, [conditional_shift(b, dims, g) for b, g in enumerate(gens)])
        v = dense_operator(walk)[np.ix_(sel, sel)]

        def site(c: NDArray[np.int64]) -> int:
            return index[tuple(np.mod(c, ext))]

        def coin_gate(c: NDArray[np.complex128]) -> NDArray[np.complex128]:
            return np.kron(np.eye(n), c)

        # R1: pairwise swaps then X on the coin
        swap = np.zeros((dim, dim), dtype=complex)
        diag = np.ones(dims, dtype=int)
        for i, c in enumerate(coords):
            j = site(c + diag)
            swap[2 * j + 1, 2 * i + 0] = 1
            swap[2 * i + 0, 2 * j + 1] = 1
        r1 = coin_gate(SIGMA_X) @ swap

        def pair_gate(g: NDArray[np.complex128], vec: NDArray[np.int64]) -> NDArray[np.complex128]:
            out = np.zeros((dim, dim), dtype=complex)
            for i, c in enumerate(coords):
                j = site(c - 2 * vec)
                out[2 * i, 2 * i] = g[0, 0]
                out[2 * j + 1, 2 * i] = g[1, 0]
                out[2 * i, 2 * j + 1] = g[0, 1]
                out[2 * j + 1, 2 * j + 1] = g[1, 1]
            return out

        basis_change = [_eigenbasis(g) for g in gens]  # columns: +1 then -1 eigenvector
        c_x = basis_change[0]
        e0 = np.eye(dims, dtype=int)[0]
        wrong = np.diag([1.0, np.exp(1j * r2_phase_error)])
        if dims == 2:
            r2 = pair_gate(wrong @ dagger(c_x), e0)
            gates = [r1, r2, coin_gate(c_x)]
        else:
            c_y = basis_change[1]
            e01 = e0 + np.eye(3, dtype=int)[1]
            g1 = pair_gate(wrong @ dagger(c_y), e01)
            g2 = pair_gate(dagger(c_x) @ c_y, e0)
            gates = [r1, g1, g2, coin_gate(c_x)]
        n_gates = n * len(gates)
    else:
        raise ValueError(f"unknown model {model!r}")
    prod = eye
    for g in gates:
        prod = g @ prod
    resid = op_norm(prod - v)
    return BccLocalCheck(passed=bool(resid <= tol), residual=resid, dimension=dim, n_local_gates=n_gates)


def _eigenbasis(g: NDArray[np.complex128]) -> NDArray[np.complex128]:
    """Unitary whose columns are the +1 and -1 eigenvectors of a Pauli matrix (Hadamard for X)."""
    if np.allclose(g, SIGMA_Z):
        return np.eye(2, dtype=complex)
    if np.allclose(g, SIGMA_X):
        return HADAMARD_MATRIX.copy()
    if np.allclose(g, SIGMA_Y):
        return np.array([[1, 1], [1j, -1j]], dtype=complex) / np.sqrt(2)
    raise ValueError("expected a Pauli matrix")
