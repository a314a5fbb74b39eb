"""Translation-invariant coined quantum walks on periodic cubic lattices.

A walk is stored as a finite map from integer offset vectors ``q`` to coin
matrices ``A_q`` so that ``U = sum_q A_q S_q``, where ``S_q`` translates by
``q`` lattice sites.  Units have hbar = c = 1 and lattice spacing ``a``.

Conventions used throughout the package
---------------------------------------
* ``S_q |n> = |n + q>`` and ``|p> = sum_n exp(i p.n a) |n>``, so ``S_q`` acts
  on ``|p>`` as ``exp(-i q.p a)``.  The momentum symbol is therefore
  ``U(p) = sum_q A_q exp(-i q.p a)``.
* The coin storage basis is the sigma_z eigenbasis; index 0 is ``|r>``
  (spin up along z) and index 1 is ``|l>``.  Conditional shifts along x or y
  diagonalize sigma_x or sigma_y internally.
* Momentum grids are ``p_k = 2 pi k / (N a)`` with ``k`` in ``(-N/2, N/2]``,
  so ``pi/a`` is always a grid point (extents are even).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ._linalg import (
    IDENTITY_2,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    dagger,
    expm_hermitian,
    op_norm,
)

__all__ = [
    "Lattice",
    "ConditionalShift",
    "CoinedWalk",
    "WaveState",
    "UnitarityReport",
    "MassDecomposition",
    "WalkDecomposition",
    "PRESETS",
    "build_preset",
    "preset_family",
    "momentum_symbol",
    "step",
    "evolve",
    "verify_unitarity",
    "mass_decompose",
    "decompose_1d",
    "dense_operator",
    "conditional_shift",
    "eigenprojector",
    "spin1_generators",
    "random_product_walk",
]

Offset = tuple[int, ...]
Factor = Union[NDArray[np.complex128], "ConditionalShift"]


# ---------------------------------------------------------------------------
# Lattice
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lattice:
    """Periodic cubic lattice with even extent along every axis.

    Parameters
    ----------
    extents : tuple of int
        Number of sites per axis (1 to 3 axes, each a positive even integer).
    spacing : float
        Lattice spacing ``a`` > 0.
    """

    extents: tuple[int, ...]
    spacing: float = 1.0

    def __post_init__(self) -> None:
        ext = tuple(int(n) for n in self.extents)
        if not 1 <= len(ext) <= 3:
            raise ValueError(f"lattice must have 1 to 3 axes, got {len(ext)}")
        for axis, n in enumerate(ext):
            if n <= 0 or n % 2:
                raise ValueError(f"extent along axis {axis} must be a positive even integer, got {n}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def cubic(cls, dims: int, extent: int, spacing: float = 1.0) -> "Lattice":
        return cls((extent,) * dims, spacing)

    @property
    def dims(self) -> int:
        return len(self.extents)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.extents))

    def axis_momenta(self, axis: int) -> NDArray[np.float64]:
        """Sorted grid momenta along ``axis``, in ``(-pi/a, pi/a]``."""
        n = self.extents[axis]
        k = np.arange(-n // 2 + 1, n // 2 + 1)
        return 2 * np.pi * k / (n * self.spacing)

    def fft_momenta(self, axis: int) -> NDArray[np.float64]:
        """Grid momenta in numpy FFT index order, folded into ``(-pi/a, pi/a]``."""
        n = self.extents[axis]
        k = np.fft.fftfreq(n, d=1.0 / n)
        k = np.where(k == -n // 2, n // 2, k)
        return 2 * np.pi * k / (n * self.spacing)

    def momentum_grid(self) -> NDArray[np.float64]:
        """All grid momenta as an array of shape ``(n_sites, dims)``."""
        axes = [self.axis_momenta(b) for b in range(self.dims)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def with_spacing(self, spacing: float) -> "Lattice":
        return Lattice(self.extents, spacing)


# ---------------------------------------------------------------------------
# Conditional shifts
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConditionalShift:
    """Projector-resolved shift ``sum_k P_k S_{q_k}``.

    The projectors must be mutually orthogonal and sum to the identity.  The
    common two-branch case ``P S_q + (1 - P) S_q'`` is built with
    :meth:`two_branch`.
    """

    branches: tuple[tuple[NDArray[np.complex128], Offset], ...]

    def __post_init__(self) -> None:
        if not self.branches:
            raise ValueError("a conditional shift needs at least one branch")
        clean = []
        dims = len(self.branches[0][1])
        for proj, shift in self.branches:
            p = np.array(proj, dtype=complex)
            p.setflags(write=False)
            q = tuple(int(x) for x in shift)
            if len(q) != dims:
                raise ValueError("all branch shifts must have the same dimension")
            clean.append((p, q))
        total = sum(p for p, _ in clean)
        d = total.shape[0]
        if op_norm(total - np.eye(d)) > 1e-9:
            raise ValueError("branch projectors do not sum to the identity")
        for p, _ in clean:
            if op_norm(p @ p - p) > 1e-9 or op_norm(p - dagger(p)) > 1e-9:
                raise ValueError("branch operator is not an orthogonal projector")
        object.__setattr__(self, "branches", tuple(clean))

    @classmethod
    def two_branch(
        cls, projector: ArrayLike, shift: Sequence[int], complement_shift: Sequence[int] | None = None
    ) -> "ConditionalShift":
        p = np.asarray(projector, dtype=complex)
        q = tuple(int(x) for x in shift)
        qc = tuple(0 for _ in q) if complement_shift is None else tuple(int(x) for x in complement_shift)
        comp = np.eye(p.shape[0]) - p
        branches = [(p, q)]
        if op_norm(comp) > 1e-12:
            branches.append((comp, qc))
        return cls(tuple(branches))

    @property
    def coin_dim(self) -> int:
        return self.branches[0][0].shape[0]

    @property
    def dims(self) -> int:
        return len(self.branches[0][1])

    @property
    def projector(self) -> NDArray[np.complex128]:
        """Projector of the first branch."""
        return self.branches[0][0]

    @property
    def shift(self) -> Offset:
        return self.branches[0][1]

    @property
    def complement_shift(self) -> Offset:
        if len(self.branches) == 1:
            return tuple(0 for _ in self.shift)
        return self.branches[1][1]

    def terms(self) -> dict[Offset, NDArray[np.complex128]]:
        out: dict[Offset, NDArray[np.complex128]] = {}
        for p, q in self.branches:
            out[q] = out.get(q, 0) + p
        return out

    def symbol(self, p: ArrayLike, spacing: float) -> NDArray[np.complex128]:
        return _symbol_from_terms(self.terms(), p, spacing)

    def inverse(self) -> "ConditionalShift":
        return ConditionalShift(tuple((p, tuple(-x for x in q)) for p, q in self.branches))


def eigenprojector(matrix: ArrayLike, eigenvalue: float, tol: float = 1e-9) -> NDArray[np.complex128]:
    """Projector onto the eigenspace of a Hermitian ``matrix`` for ``eigenvalue``."""
    w, v = np.linalg.eigh(np.asarray(matrix, dtype=complex))
    sel = v[:, np.abs(w - eigenvalue) < tol]
    return sel @ dagger(sel)


def conditional_shift(
    axis: int, dims: int, generator: ArrayLike, step_sign: int = 1
) -> ConditionalShift:
    """Conditional shift ``exp(-i step_sign * P_axis * G * a)`` for a generator ``G``.

    ``G`` must be Hermitian with integer eigenvalues; the eigenspace with
    eigenvalue ``k`` is shifted by ``step_sign * k`` sites along ``axis``.
    """
    g = np.asarray(generator, dtype=complex)
    w = np.linalg.eigvalsh(g)
    levels = sorted(set(int(round(x)) for x in w))
    if np.max(np.abs(w - np.round(w))) > 1e-9:
        raise ValueError("generator must have integer eigenvalues")
    branches = []
    for k in sorted(levels, reverse=True):
        shift = [0] * dims
        shift[axis] = step_sign * k
        branches.append((eigenprojector(g, k), tuple(shift)))
    return ConditionalShift(tuple(branches))


def spin1_generators() -> tuple[NDArray[np.complex128], ...]:
    """Spin-1 generators ``(J_i)_{jk} = -i eps_{ijk}`` in the Cartesian basis."""
    eps = np.zeros((3, 3, 3))
    for i, j, k in itertools.permutations(range(3)):
        eps[i, j, k] = np.linalg.det(np.eye(3)[[i, j, k]])
    return tuple(-1j * eps[i] for i in range(3))


# ---------------------------------------------------------------------------
# Walks
# ---------------------------------------------------------------------------


def _symbol_from_terms(
    terms: Mapping[Offset, NDArray[np.complex128]], p: ArrayLike, spacing: float
) -> NDArray[np.complex128]:
    p = np.asarray(p, dtype=float)
    if p.ndim == 0:
        p = p[None]
    batch = p.shape[:-1]
    d = next(iter(terms.values())).shape[0]
    out = np.zeros(batch + (d, d), dtype=complex)
    for q, a_q in terms.items():
        if len(q) != p.shape[-1]:
            raise ValueError(f"momentum has {p.shape[-1]} components, walk has {len(q)} dims")
        phase = np.exp(-1j * spacing * (p @ np.asarray(q, dtype=float)))
        out += phase[..., None, None] * a_q
    return out


def _compose_terms(
    left: Mapping[Offset, NDArray[np.complex128]], right: Mapping[Offset, NDArray[np.complex128]]
) -> dict[Offset, NDArray[np.complex128]]:
    out: dict[Offset, NDArray[np.complex128]] = {}
    for q1, a1 in left.items():
        for q2, a2 in right.items():
            q = tuple(x + y for x, y in zip(q1, q2))
            out[q] = out.get(q, 0) + a1 @ a2
    return out


def _prune(terms: Mapping[Offset, NDArray[np.complex128]], tol: float) -> dict[Offset, NDArray[np.complex128]]:
    return {q: a for q, a in terms.items() if np.max(np.abs(a)) > tol}


def _factor_terms(f: Factor, dims: int) -> dict[Offset, NDArray[np.complex128]]:
    if isinstance(f, ConditionalShift):
        if f.dims != dims:
            raise ValueError("conditional shift dimension does not match the lattice")
        return f.terms()
    return {(0,) * dims: np.asarray(f, dtype=complex)}


class CoinedWalk:
    """Translation-invariant walk ``U = sum_q A_q S_q`` on a periodic lattice.

    Instances are immutable.  ``time_step`` is the physical duration of one
    application of ``U`` (equal to the spacing unless a walk bundles several
    substeps).  When the walk was assembled from coins and conditional
    shifts, ``factors`` records them in operator order (the last factor acts
    first); gauge coupling needs this structure.
    """

    __slots__ = ("_lattice", "_terms", "_time_step", "_factors", "_name")

    def __init__(
        self,
        lattice: Lattice,
        terms: Mapping[Sequence[int], ArrayLike],
        *,
        time_step: float | None = None,
        factors: Sequence[Factor] | None = None,
        name: str | None = None,
        drop_tol: float = 0.0,
    ) -> None:
        if not terms:
            raise ValueError("a walk needs at least one term")
        clean: dict[Offset, NDArray[np.complex128]] = {}
        d = None
        for q, a in terms.items():
            q = tuple(int(x) for x in q)
            if len(q) != lattice.dims:
                raise ValueError(f"offset {q} does not match lattice dimension {lattice.dims}")
            arr = np.array(a, dtype=complex)
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise ValueError("coin matrices must be square")
            if d is None:
                d = arr.shape[0]
            elif arr.shape[0] != d:
                raise ValueError("all coin matrices must share one dimension")
            if drop_tol and np.max(np.abs(arr)) <= drop_tol:
                continue
            arr.setflags(write=False)
            clean[q] = arr
        if not clean:
            raise ValueError("all terms were dropped")
        self._lattice = lattice
        self._terms = dict(sorted(clean.items()))
        self._time_step = float(lattice.spacing if time_step is None else time_step)
        self._factors = None if factors is None else tuple(factors)
        self._name = name

    @classmethod
    def from_factors(
        cls,
        lattice: Lattice,
        factors: Sequence[Factor],
        *,
        time_step: float | None = None,
        name: str | None = None,
    ) -> "CoinedWalk":
        """Multiply coins and conditional shifts (operator order) into a walk."""
        terms = _factor_terms(factors[0], lattice.dims)
        for f in factors[1:]:
            terms = _compose_terms(terms, _factor_terms(f, lattice.dims))
        return cls(lattice, _prune(terms, 1e-14), time_step=time_step, factors=factors, name=name)

    # -- accessors ---------------------------------------------------------

    @property
    def lattice(self) -> Lattice:
        return self._lattice

    @property
    def terms(self) -> dict[Offset, NDArray[np.complex128]]:
        return dict(self._terms)

    @property
    def coin_dim(self) -> int:
        return next(iter(self._terms.values())).shape[0]

    @property
    def offsets(self) -> list[Offset]:
        return list(self._terms)

    @property
    def time_step(self) -> float:
        return self._time_step

    @property
    def factors(self) -> tuple[Factor, ...] | None:
        return self._factors

    @property
    def name(self) -> str | None:
        return self._name

    def __repr__(self) -> str:
        label = self._name or "CoinedWalk"
        return f"<{label}: d_C={self.coin_dim}, offsets={self.offsets}, lattice={self._lattice}>"

    # -- algebra -----------------------------------------------------------

    def symbol(self, p: ArrayLike) -> NDArray[np.complex128]:
        return _symbol_from_terms(self._terms, p, self._lattice.spacing)

    def compose(self, other: "CoinedWalk") -> "CoinedWalk":
        """Operator product ``self @ other`` (``other`` acts first)."""
        if other.lattice != self._lattice:
            raise ValueError("walks live on different lattices")
        factors = None
        if self._factors is not None and other._factors is not None:
            factors = self._factors + other._factors
        return CoinedWalk(
            self._lattice,
            _prune(_compose_terms(self._terms, other._terms), 1e-14),
            time_step=self._time_step + other._time_step,
            factors=factors,
        )

    __matmul__ = compose

    def on_lattice(self, lattice: Lattice) -> "CoinedWalk":
        """Same coin data on another lattice (spacing changes rescale nothing)."""
        ratio = lattice.spacing / self._lattice.spacing
        return CoinedWalk(
            lattice,
            self._terms,
            time_step=self._time_step * ratio,
            factors=self._factors,
            name=self._name,
        )


@dataclass
class WaveState:
    """Walker state with amplitudes of shape ``(*extents, d_C)``."""

    lattice: Lattice
    amplitudes: NDArray[np.complex128]

    def __post_init__(self) -> None:
        amp = np.asarray(self.amplitudes, dtype=complex)
        if amp.shape[:-1] != self.lattice.extents:
            raise ValueError(f"amplitude shape {amp.shape} does not match lattice {self.lattice.extents}")
        self.amplitudes = amp

    @property
    def coin_dim(self) -> int:
        return self.amplitudes.shape[-1]

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> NDArray[np.float64]:
        """Position distribution (coin populations summed)."""
        return np.sum(np.abs(self.amplitudes) ** 2, axis=-1)

    def copy(self) -> "WaveState":
        return WaveState(self.lattice, self.amplitudes.copy())

    @classmethod
    def localized(
        cls, lattice: Lattice, coin: ArrayLike, site: Sequence[int] | int = 0
    ) -> "WaveState":
        """State ``|coin> |site>``; ``coin`` is a normalized coin vector."""
        c = np.asarray(coin, dtype=complex)
        amp = np.zeros(lattice.extents + (c.size,), dtype=complex)
        site = (site,) if np.isscalar(site) else tuple(site)
        idx = tuple(int(s) % n for s, n in zip(site, lattice.extents))
        amp[idx] = c / np.linalg.norm(c)
        return cls(lattice, amp)

    @classmethod
    def plane_wave(cls, lattice: Lattice, coin: ArrayLike, p: Sequence[float] | float) -> "WaveState":
        """Normalized momentum eigenstate ``|p>|coin>`` (``p`` on the grid)."""
        c = np.asarray(coin, dtype=complex)
        p = np.atleast_1d(np.asarray(p, dtype=float))
        grids = np.meshgrid(*[np.arange(n) for n in lattice.extents], indexing="ij")
        phase = np.exp(1j * lattice.spacing * sum(pb * g for pb, g in zip(p, grids)))
        amp = phase[..., None] * (c / np.linalg.norm(c))
        return cls(lattice, amp / np.sqrt(lattice.n_sites))

    @classmethod
    def random(cls, lattice: Lattice, coin_dim: int, rng: np.random.Generator) -> "WaveState":
        shape = lattice.extents + (coin_dim,)
        amp = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return cls(lattice, amp / np.linalg.norm(amp))


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

PRESETS = (
    "hadamard1d",
    "dirac1d",
    "dirac2d",
    "weyl3d_right",
    "weyl3d_left",
    "dirac3d",
    "strang_dirac1d",
    "spin1_3d",
    "rotsym2d",
)

_PRESET_DIMS = {
    "hadamard1d": 1,
    "dirac1d": 1,
    "strang_dirac1d": 1,
    "dirac2d": 2,
    "rotsym2d": 2,
    "weyl3d_right": 3,
    "weyl3d_left": 3,
    "dirac3d": 3,
    "spin1_3d": 3,
}

_DEFAULT_EXTENT = {1: 64, 2: 16, 3: 8}

HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
P_R = np.diag([1.0, 0.0]).astype(complex)
P_L = np.diag([0.0, 1.0]).astype(complex)


def _weyl_factors(dims: int, sign: int) -> list[ConditionalShift]:
    return [conditional_shift(b, dims, (SIGMA_X, SIGMA_Y, SIGMA_Z)[b], sign) for b in range(dims)]


def build_preset(
    name: str,
    mass: float = 0.0,
    spacing: float = 1.0,
    extents: Sequence[int] | int | None = None,
) -> CoinedWalk:
    """Construct one of the named walks.

    Parameters
    ----------
    name : str
        One of :data:`PRESETS`.
    mass : float
        Mass ``m >= 0`` (ignored by massless presets).
    spacing : float
        Lattice spacing ``a``.
    extents : int or sequence of int, optional
        Lattice extents; an int is broadcast over all axes.

    Returns
    -------
    CoinedWalk
        Walk whose ``factors`` record the coin/shift product.

    Raises
    ------
    ValueError
        Unknown name, negative mass, odd extents or wrong number of axes.
    """
    if name not in _PRESET_DIMS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    if mass < 0:
        raise ValueError(f"mass must be non-negative, got {mass}")
    dims = _PRESET_DIMS[name]
    if extents is None:
        extents = (_DEFAULT_EXTENT[dims],) * dims
    elif np.isscalar(extents):
        extents = (int(extents),) * dims
    extents = tuple(int(n) for n in extents)
    if len(extents) != dims:
        raise ValueError(f"preset {name!r} needs {dims} lattice axes, got {len(extents)}")
    lat = Lattice(extents, spacing)
    a = lat.spacing
    m = float(mass)

    if name == "hadamard1d":
        factors: list[Factor] = [HADAMARD, conditional_shift(0, 1, SIGMA_Z)]
        return CoinedWalk.from_factors(lat, factors, name=name)
    if name == "dirac1d":
        factors = [expm_hermitian(m * SIGMA_X, a), conditional_shift(0, 1, SIGMA_Z)]
        return CoinedWalk.from_factors(lat, factors, name=name)
    if name == "strang_dirac1d":
        half = expm_hermitian(m * SIGMA_X, a)
        t = conditional_shift(0, 1, SIGMA_Z)
        # the even/odd substep pair bundled into one step of duration 2a
        return CoinedWalk.from_factors(lat, [half, t, t, half], time_step=2 * a, name=name)
    if name == "dirac2d":
        factors = [expm_hermitian(m * SIGMA_Z, a), *_weyl_factors(2, +1)]
        return CoinedWalk.from_factors(lat, factors, name=name)
    if name == "weyl3d_right":
        return CoinedWalk.from_factors(lat, _weyl_factors(3, +1), name=name)
    if name == "weyl3d_left":
        return CoinedWalk.from_factors(lat, _weyl_factors(3, -1), name=name)
    if name == "dirac3d":
        beta = np.kron(IDENTITY_2, SIGMA_X)
        chir = np.kron(IDENTITY_2, -SIGMA_Z)  # |l><l| - |r><r|
        alphas = [np.kron(s, IDENTITY_2) @ chir for s in (SIGMA_X, SIGMA_Y, SIGMA_Z)]
        factors = [expm_hermitian(m * beta, a)] + [conditional_shift(b, 3, alphas[b]) for b in range(3)]
        return CoinedWalk.from_factors(lat, factors, name=name)
    if name == "spin1_3d":
        js = spin1_generators()
        return CoinedWalk.from_factors(lat, [conditional_shift(b, 3, js[b]) for b in range(3)], name=name)
    # rotsym2d: coin H_S (x) H_H, index 2*s + h with h = 0 for |r>, 1 for |l>
    tx, ty = _weyl_factors(2, +1)

    def sectorwise(left: ConditionalShift, right: ConditionalShift) -> ConditionalShift:
        br = [(np.kron(p, P_L), q) for p, q in left.branches]
        br += [(np.kron(p, P_R), q) for p, q in right.branches]
        return ConditionalShift(tuple(br))

    factors = [sectorwise(tx, ty), sectorwise(ty, tx)]
    return CoinedWalk.from_factors(lat, factors, name=name)


def preset_family(name: str, mass: float = 0.0, physical_length: float = 16 * np.pi):
    """Return ``a -> walk`` keeping the physical ring length ``N a`` fixed.

    The extent is rounded to the nearest even integer.  Used by the
    convergence and vacuum studies, where the set of momenta below a
    cutoff must not change with the spacing.
    """

    def family(a: float) -> CoinedWalk:
        n = max(2, 2 * int(round(physical_length / (2 * a))))
        return build_preset(name, mass=mass, spacing=a, extents=n)

    return family


# ---------------------------------------------------------------------------
# Evaluation and evolution
# ---------------------------------------------------------------------------


def momentum_symbol(walk: CoinedWalk, p: ArrayLike) -> NDArray[np.complex128]:
    """Coin-space unitary ``U(p) = sum_q A_q exp(-i q.p a)``.

    ``p`` may carry leading batch axes; the last axis holds the components.
    For 1D walks a scalar or 1D array of momenta is accepted.
    """
    p = np.asarray(p, dtype=float)
    if walk.lattice.dims == 1 and (p.ndim == 0 or p.shape[-1] != 1):
        p = p[..., None]
    return walk.symbol(p)


def _check_state(walk: CoinedWalk, state: WaveState) -> None:
    if state.lattice.extents != walk.lattice.extents:
        raise ValueError("state and walk live on different lattices")
    if state.coin_dim != walk.coin_dim:
        raise ValueError(f"state coin dimension {state.coin_dim} != walk coin dimension {walk.coin_dim}")


def step(walk: CoinedWalk, state: WaveState, method: str = "position") -> WaveState:
    """Apply the walk once.

    ``method="position"`` rolls amplitudes for each term; ``"momentum"``
    multiplies by ``U(p)`` between forward and inverse FFTs.
    """
    _check_state(walk, state)
    psi = state.amplitudes
    axes = tuple(range(walk.lattice.dims))
    if method == "position":
        out = np.zeros_like(psi)
        for q, a_q in walk.terms.items():
            out += np.roll(psi @ a_q.T, shift=q, axis=axes)
        return WaveState(state.lattice, out)
    if method == "momentum":
        phi = np.fft.fftn(psi, axes=axes)
        grids = np.meshgrid(*[walk.lattice.fft_momenta(b) for b in axes], indexing="ij")
        u = walk.symbol(np.stack(grids, axis=-1))
        phi = np.einsum("...ij,...j->...i", u, phi)
        return WaveState(state.lattice, np.fft.ifftn(phi, axes=axes))
    raise ValueError(f"unknown method {method!r}")


def evolve(
    walk: CoinedWalk, state: WaveState, n_steps: int, record: bool = False, method: str = "position"
) -> tuple[WaveState, NDArray[np.float64] | None]:
    """Apply ``n_steps`` steps; optionally record the position distribution.

    Returns the final state and, if ``record``, an array of shape
    ``(n_steps + 1, *extents)`` whose first row is the initial distribution.
    """
    if n_steps < 0 or int(n_steps) != n_steps:
        raise ValueError(f"n_steps must be a non-negative integer, got {n_steps}")
    _check_state(walk, state)
    rows = [state.probabilities()] if record else None
    cur = state.copy()
    for _ in range(int(n_steps)):
        cur = step(walk, cur, method=method)
        if record:
            rows.append(cur.probabilities())
    return cur, (np.array(rows) if record else None)


def dense_operator(walk: CoinedWalk) -> NDArray[np.complex128]:
    """Full evolution matrix on ``C^{n_sites} (x) C^{d_C}`` (site-major order)."""
    lat = walk.lattice
    n = lat.n_sites
    d = walk.coin_dim
    if n * d > 1 << 13:
        raise ValueError("dense operator requested for a lattice larger than the 8192-dim budget")
    u = np.zeros((n * d, n * d), dtype=complex)
    coords = np.array(np.unravel_index(np.arange(n), lat.extents)).T
    for q, a_q in walk.terms.items():
        target = np.ravel_multi_index(tuple(((coords + q) % lat.extents).T), lat.extents)
        for src, dst in enumerate(target):
            u[dst * d : (dst + 1) * d, src * d : (src + 1) * d] += a_q
    return u


# ---------------------------------------------------------------------------
# Unitarity and mass
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UnitarityReport:
    """Deviations of the unitarity conditions on the coin matrices.

    ``normalization`` is ``||sum_q A_q^dag A_q - 1||``; ``cross`` maps each
    nonzero displacement ``d`` to ``||sum_{q-p=d} A_q^dag A_p||``;
    ``co_cross`` does the same for ``A_q A_p^dag`` (the ``U U^dag`` side).
    """

    normalization: float
    cross: dict[Offset, float]
    co_cross: dict[Offset, float]
    tol: float

    @property
    def max_cross(self) -> float:
        vals = list(self.cross.values()) + list(self.co_cross.values())
        return max(vals) if vals else 0.0

    @property
    def max_deviation(self) -> float:
        return max(self.normalization, self.max_cross)

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tol


def verify_unitarity(walk: CoinedWalk, tol: float = 1e-12) -> UnitarityReport:
    """Check unitarity of ``U`` directly on its coin matrices."""
    terms = walk.terms
    d = walk.coin_dim
    norm_sum = sum(dagger(a) @ a for a in terms.values())
    normalization = op_norm(norm_sum - np.eye(d))
    cross: dict[Offset, NDArray] = {}
    co: dict[Offset, NDArray] = {}
    for (q, aq), (p, ap) in itertools.product(terms.items(), repeat=2):
        if q == p:
            continue
        disp = tuple(x - y for x, y in zip(q, p))
        cross[disp] = cross.get(disp, 0) + dagger(aq) @ ap
        co[disp] = co.get(disp, 0) + aq @ dagger(ap)
    return UnitarityReport(
        normalization=normalization,
        cross={k: op_norm(v) for k, v in cross.items()},
        co_cross={k: op_norm(v) for k, v in co.items()},
        tol=tol,
    )


@dataclass(frozen=True)
class MassDecomposition:
    """``U = W sum_q A'_q S_q`` with ``sum_q A'_q = 1``."""

    W: NDArray[np.complex128]
    primed_terms: dict[Offset, NDArray[np.complex128]]
    massless: bool

    def reconstruct_terms(self) -> dict[Offset, NDArray[np.complex128]]:
        return {q: self.W @ a for q, a in self.primed_terms.items()}


def mass_decompose(walk: CoinedWalk, tol: float = 1e-10) -> MassDecomposition:
    """Split off the mass coin ``W = sum_q A_q``.

    Raises
    ------
    ValueError
        If the walk fails :func:`verify_unitarity` at tolerance ``tol``.
    """
    rep = verify_unitarity(walk, tol=max(tol, 1e-12))
    if not rep.passed:
        raise ValueError(f"walk is not unitary (max deviation {rep.max_deviation:.3e})")
    terms = walk.terms
    w = sum(terms.values())
    primed = {q: dagger(w) @ a for q, a in terms.items()}
    massless = op_norm(w - np.eye(walk.coin_dim)) <= tol
    return MassDecomposition(W=w, primed_terms=primed, massless=bool(massless))


# ---------------------------------------------------------------------------
# 1D decomposition into conditional shifts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WalkDecomposition:
    """``U = W * F_1 * F_2 * ... * F_k`` with conditional-shift factors ``F_i``."""

    factors: tuple[ConditionalShift, ...]
    W: NDArray[np.complex128]
    lattice: Lattice
    raw_projectors: tuple[NDArray[np.complex128], ...] = field(default=())

    def terms(self) -> dict[Offset, NDArray[np.complex128]]:
        out: dict[Offset, NDArray[np.complex128]] = {(0,): self.W}
        for f in self.factors:
            out = _compose_terms(out, f.terms())
        return _prune(out, 1e-14)

    def reconstruct(self) -> CoinedWalk:
        return CoinedWalk(self.lattice, self.terms())

    def symbol(self, p: ArrayLike) -> NDArray[np.complex128]:
        return _symbol_from_terms(self.terms(), np.asarray(p, dtype=float)[..., None], self.lattice.spacing)


def _support_projector(a: NDArray[np.complex128], rank_rtol: float) -> NDArray[np.complex128]:
    """Projector onto the orthogonal complement of ``ker a`` (row space)."""
    _, s, vh = np.linalg.svd(a)
    keep = vh[s > rank_rtol * s[0]]
    return dagger(keep) @ keep


def decompose_1d(
    walk: CoinedWalk, rank_rtol: float = 1e-9, drop_tol: float = 1e-11
) -> WalkDecomposition:
    """Factor a unitary 1D walk into a coin and conditional shifts.

    At each stage the projector ``P`` onto the row space of the coin matrix
    with the largest offset is extracted, and the walk is multiplied on the
    right by ``P S_{-1} + (1 - P)``.  Unitarity guarantees this lowers the
    largest offset without extending the smallest one, so the neighbourhood
    shrinks by one site per stage until a single term ``W S_{q0}`` remains.
    Consecutive factors with equal projectors are merged and ``S_{q0}`` is
    absorbed into the first factor.

    Parameters
    ----------
    walk : CoinedWalk
        Unitary walk on a 1D lattice.
    rank_rtol : float
        Singular values below ``rank_rtol * s_max`` count as zero.
    drop_tol : float
        Coin matrices with all entries below this are discarded between
        stages.

    Raises
    ------
    ValueError
        Non-1D or non-unitary input.
    RuntimeError
        The neighbourhood failed to shrink, which points to a misjudged
        numerical rank.
    """
    if walk.lattice.dims != 1:
        raise ValueError("decompose_1d needs a 1D walk")
    rep = verify_unitarity(walk, tol=1e-9)
    if not rep.passed:
        raise ValueError(f"walk is not unitary (max deviation {rep.max_deviation:.3e})")
    d = walk.coin_dim
    eye = np.eye(d, dtype=complex)
    cur = {q: a for q, a in walk.terms.items()}
    projectors: list[NDArray[np.complex128]] = []
    for _ in range(4 * (max(cur)[0] - min(cur)[0]) + 4):
        if len(cur) == 1:
            break
        q_hi, q_lo = max(cur)[0], min(cur)[0]
        p = _support_projector(cur[(q_hi,)], rank_rtol)
        f = {(-1,): p, (0,): eye - p}
        nxt = _prune(_compose_terms(cur, f), drop_tol)
        if max(nxt)[0] - min(nxt)[0] >= q_hi - q_lo:
            raise RuntimeError("neighbourhood did not shrink; numerical rank misjudged")
        projectors.append(p)
        cur = nxt
    else:
        raise RuntimeError("decomposition did not terminate")
    (q0,), w = next(iter(cur.items()))

    # U = W S_{q0} (P_k S + P_k^perp) ... (P_1 S + P_1^perp)
    merged: list[list] = []
    for p in reversed(projectors):
        if merged and op_norm(merged[-1][0] - p) < 1e-9:
            merged[-1][1] += 1
        else:
            merged.append([p, 1])
    factors = [ConditionalShift.two_branch(p, (k,), (0,)) for p, k in merged]
    if q0 != 0:
        if factors:
            first = factors[0]
            factors[0] = ConditionalShift(tuple((pr, (q[0] + q0,)) for pr, q in first.branches))
        else:
            factors = [ConditionalShift.two_branch(eye, (q0,))]
    return WalkDecomposition(
        factors=tuple(factors), W=w, lattice=walk.lattice, raw_projectors=tuple(projectors)
    )


def random_product_walk(
    lattice: Lattice, coin_dim: int, n_layers: int, rng: np.random.Generator
) -> CoinedWalk:
    """Product of random coins and random two-branch conditional shifts (1D)."""
    from ._linalg import random_unitary

    factors: list[Factor] = []
    for _ in range(n_layers):
        factors.append(random_unitary(coin_dim, rng))
        rank = int(rng.integers(1, coin_dim)) if coin_dim > 1 else 1
        basis = random_unitary(coin_dim, rng)[:, :rank]
        factors.append(ConditionalShift.two_branch(basis @ dagger(basis), (1,), (0,)))
    factors.append(random_unitary(coin_dim, rng))
    return CoinedWalk.from_factors(lattice, factors, name="random_product")
