"""Continuum limits of coined walks.

The continuum Hamiltonian of a walk ``U = W sum_q A'_q S_q`` is
``H(p) = sum_i B_i p_i + M`` with ``B_i = (a / tau) sum_q q_i A'_q`` and
``W = exp(-i M tau)``, where ``tau`` is the walk's time step.  This module
extracts it, brings two-dimensional-coin Hamiltonians to a relativistic
normal form, measures how fast the discrete evolution approaches the
continuum one, and tests lattice rotation symmetry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.transform import Rotation

from ._linalg import PAULIS, dagger, expm_hermitian, op_norm, polar_unitary, principal_log_unitary
from .walk_core import CoinedWalk, Lattice, WaveState, mass_decompose, momentum_symbol

__all__ = [
    "ContinuumHamiltonian",
    "CanonicalForm",
    "ConvergenceResult",
    "RotationReport",
    "continuum_hamiltonian",
    "canonicalize",
    "is_relativistic",
    "convergence_error",
    "embed_discrete_state",
    "lattice_rotation_invariance",
    "rotated_symbol",
    "sample_directions",
]


@dataclass(frozen=True)
class ContinuumHamiltonian:
    """Linear-in-momentum Hamiltonian ``H(p) = sum_i B_i p_i + M``."""

    B: tuple[NDArray[np.complex128], ...]
    M: NDArray[np.complex128]

    @property
    def dims(self) -> int:
        return len(self.B)

    @property
    def coin_dim(self) -> int:
        return self.M.shape[0]

    def symbol(self, p: ArrayLike) -> NDArray[np.complex128]:
        """``H(p)``; ``p`` has shape ``(..., dims)`` (scalars allowed in 1D)."""
        p = np.asarray(p, dtype=float)
        if self.dims == 1 and (p.ndim == 0 or p.shape[-1] != 1):
            p = p[..., None]
        out = np.broadcast_to(self.M, p.shape[:-1] + self.M.shape).astype(complex)
        for i, b in enumerate(self.B):
            out = out + p[..., i, None, None] * b
        return out

    def hermiticity_defect(self) -> float:
        mats = list(self.B) + [self.M]
        return max(op_norm(m - dagger(m)) for m in mats)

    def evolution(self, p: ArrayLike, t: float) -> NDArray[np.complex128]:
        """``exp(-i H(p) t)``."""
        h = self.symbol(p)
        return expm_hermitian(0.5 * (h + dagger(h)), t)


def continuum_hamiltonian(walk: CoinedWalk, tol: float = 1e-10) -> ContinuumHamiltonian:
    """Continuum Hamiltonian of a unitary walk.

    The mass term uses the principal logarithm of ``W`` (eigenphases in
    ``(-pi, pi]``); a ``W`` eigenvalue within 1e-8 of -1 raises
    ``ValueError`` because the branch is then ambiguous.
    """
    md = mass_decompose(walk, tol=tol)
    a = walk.lattice.spacing
    tau = walk.time_step
    dims = walk.lattice.dims
    d = walk.coin_dim
    bs = []
    for i in range(dims):
        b = np.zeros((d, d), dtype=complex)
        for q, ap in md.primed_terms.items():
            b += q[i] * ap
        bs.append(b * (a / tau))
    if md.massless:
        m = np.zeros((d, d), dtype=complex)
    else:
        m = principal_log_unitary(md.W) / tau
    return ContinuumHamiltonian(B=tuple(bs), M=m)


# ---------------------------------------------------------------------------
# Relativistic normal form
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CanonicalForm:
    """Normal form of a two-dimensional-coin continuum Hamiltonian.

    After removing the drift ``c.p + m0`` (reported, not discarded), the
    Hamiltonian is ``sum_j (N p + m)_j sigma_j`` with a real 3 x d matrix
    ``N = U diag(gamma) V^T``.  ``axis_rotation`` is the orthogonal map
    taking momenta to the rotated axes, ``coin_unitary`` realizes the
    rotation ``U`` on the coin (``V sigma_k V^dag = sum_j U_jk sigma_j``),
    ``momentum_offset`` is the part of the mass vector absorbed by a shift
    of the rescaled momenta and ``effective_mass`` the rest.
    """

    gamma: NDArray[np.float64]
    axis_rotation: NDArray[np.float64]
    coin_rotation: NDArray[np.float64]
    coin_unitary: NDArray[np.complex128]
    drift: NDArray[np.float64]
    mass_scalar: float
    mass_vector: NDArray[np.float64]
    momentum_offset: NDArray[np.float64]
    effective_mass: float
    rank: int
    classification: str
    square_deviation: float | None

    def as_text(self) -> str:
        g = np.concatenate([self.gamma, np.zeros(3 - self.gamma.size)])
        lines = [f"gamma{i + 1}={g[i]:.15g}" for i in range(3)]
        lines += [f"drift{i + 1}={c:.15g}" for i, c in enumerate(self.drift)]
        lines.append(f"effective_mass={self.effective_mass:.15g}")
        lines.append(f"classification={self.classification}")
        return "\n".join(lines)


_CLASS_BY_RANK = {0: "trivial", 1: "relativistic_1d", 2: "relativistic_2d", 3: "relativistic_3d"}


def _pauli_coefficients(m: NDArray[np.complex128]) -> tuple[float, NDArray[np.float64]]:
    c0 = float(np.real(np.trace(m)) / 2)
    vec = np.array([np.real(np.trace(s @ m)) / 2 for s in PAULIS])
    return c0, vec


def _su2_from_rotation(r: NDArray[np.float64]) -> NDArray[np.complex128]:
    """Unitary ``V`` with ``V sigma_k V^dag = sum_j r_jk sigma_j`` for ``r`` in SO(3)."""
    x, y, z, w = Rotation.from_matrix(r).as_quat()
    v = w * np.eye(2) - 1j * (x * PAULIS[0] + y * PAULIS[1] + z * PAULIS[2])
    test = v @ PAULIS[0] @ dagger(v)
    target = sum(r[j, 0] * PAULIS[j] for j in range(3))
    return v if op_norm(test - target) < 1e-8 else dagger(v)


def canonicalize(H: ContinuumHamiltonian, rank_tol: float = 1e-10, n_check: int = 64) -> CanonicalForm:
    """Relativistic normal form of a Hamiltonian with a two-dimensional coin.

    Raises
    ------
    ValueError
        If the coin dimension is not 2 (use :func:`is_relativistic` instead).
    """
    if H.coin_dim != 2:
        raise ValueError(f"canonical form needs a two-dimensional coin, got d_C = {H.coin_dim}")
    d = H.dims
    drift = np.zeros(d)
    n = np.zeros((3, d))
    for i, b in enumerate(H.B):
        drift[i], n[:, i] = _pauli_coefficients(b)
    m0, mvec = _pauli_coefficients(H.M)
    uc, s, vt = np.linalg.svd(n, full_matrices=True)
    rank = int(np.sum(s > rank_tol * max(1.0, s[0] if s.size else 0.0)))
    if np.linalg.det(uc) < 0:
        # flip an axis outside the rank (or the last one) to stay in SO(3)
        uc[:, -1] *= -1
        if rank == 3:
            vt[-1, :] *= -1
    gamma = np.zeros(3)
    gamma[: s.size] = s
    axis_rot = np.eye(3)
    axis_rot[:d, :d] = vt
    u_r = uc[:, :rank]
    m_par = u_r.T @ mvec
    m_perp = mvec - u_r @ m_par
    eff_mass = float(np.linalg.norm(m_perp))

    herm_ok = H.hermiticity_defect() <= 1e-10
    deviation = None
    if herm_ok and rank == d and d > 0:
        rng = np.random.default_rng(7)
        pp = rng.uniform(-2, 2, size=(n_check, d))  # rescaled, shifted momenta p''
        p = (vt.T @ ((pp - m_par[:d]) / s[:d]).T).T
        h = H.symbol(p) - (p @ drift + m0)[:, None, None] * np.eye(2)
        target = (np.sum(pp**2, axis=1) + eff_mass**2)[:, None, None] * np.eye(2)
        deviation = op_norm(h @ h - target)
    if not herm_ok:
        classification = "non_relativistic"
    else:
        classification = _CLASS_BY_RANK[rank]
    return CanonicalForm(
        gamma=gamma,
        axis_rotation=axis_rot,
        coin_rotation=uc,
        coin_unitary=_su2_from_rotation(uc),
        drift=drift,
        mass_scalar=m0,
        mass_vector=mvec,
        momentum_offset=m_par,
        effective_mass=eff_mass,
        rank=rank,
        classification=classification,
        square_deviation=deviation,
    )


def sample_directions(dims: int, n: int = 48) -> NDArray[np.float64]:
    """Deterministic, roughly uniform unit vectors in ``dims`` dimensions."""
    if dims == 1:
        return np.array([[1.0], [-1.0]])
    if dims == 2:
        ang = 2 * np.pi * (np.arange(n) + 0.5) / n
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    r = np.sqrt(1 - z**2)
    phi = np.pi * (1 + 5**0.5) * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def is_relativistic(H: ContinuumHamiltonian, tol: float = 1e-10) -> tuple[bool, float]:
    """Test ``H(p)^2 = (|p|^2 + m^2) 1`` after removing the scalar drift.

    ``m^2`` is fixed by ``H(0)^2`` (its average eigenvalue).  Momenta are
    sampled on spheres of radius 1/2 and 1.  Returns the verdict and the
    largest deviation in operator norm.
    """
    d_c = H.coin_dim
    eye = np.eye(d_c)
    b0 = tuple(b - np.trace(b) / d_c * eye for b in H.B)
    m0 = H.M - np.trace(H.M) / d_c * eye
    h0 = ContinuumHamiltonian(B=b0, M=m0)
    m_sq = float(np.real(np.trace(m0 @ m0)) / d_c)
    dirs = sample_directions(H.dims)
    p = np.concatenate([dirs, 0.5 * dirs])
    h = h0.symbol(p)
    target = (np.sum(p**2, axis=1) + m_sq)[:, None, None] * eye
    dev = op_norm(h @ h - target)
    return bool(dev <= tol), dev


# ---------------------------------------------------------------------------
# Convergence of discrete to continuum evolution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceResult:
    spacings: NDArray[np.float64]
    errors: NDArray[np.float64]
    slope: float
    n_momenta: tuple[int, ...]

    def rows(self) -> list[tuple[float, float]]:
        return list(zip(self.spacings.tolist(), self.errors.tolist()))


def _grid_within(lattice: Lattice, cutoff: float) -> NDArray[np.float64]:
    grid = lattice.momentum_grid()
    return grid[np.linalg.norm(grid, axis=1) <= cutoff + 1e-12]


def convergence_error(
    walk_family: Callable[[float], CoinedWalk],
    H: ContinuumHamiltonian,
    t: float,
    a_list: Sequence[float],
    cutoff: float,
    momenta: ArrayLike | None = None,
) -> ConvergenceResult:
    """Distance between ``U(p)^{t/tau}`` and ``exp(-i H(p) t)`` versus spacing.

    For each spacing the error is the largest operator-norm difference over
    the walk's grid momenta with ``|p| <= cutoff`` (or over ``momenta`` when
    given).  The slope is a least-squares fit of log error against log a;
    it is ``nan`` when any error vanishes.

    Raises
    ------
    ValueError
        If ``t`` is not an integer number of steps for some spacing, or the
        cutoff exceeds ``pi / max(a)``.
    """
    a_arr = np.asarray(a_list, dtype=float)
    if cutoff <= 0 or cutoff > np.pi / np.max(a_arr) + 1e-12:
        raise ValueError(f"cutoff {cutoff} must lie in (0, pi/max(a)] = (0, {np.pi / np.max(a_arr):.6g}]")
    errs = []
    counts = []
    for a in a_arr:
        walk = walk_family(float(a))
        n_steps = t / walk.time_step
        if abs(n_steps - round(n_steps)) > 1e-9 * max(1.0, n_steps):
            raise ValueError(f"t = {t} is not an integer number of steps for a = {a}")
        n_steps = int(round(n_steps))
        if momenta is None:
            ps = _grid_within(walk.lattice, cutoff)
        else:
            ps = np.asarray(momenta, dtype=float).reshape(-1, walk.lattice.dims)
        u = np.linalg.matrix_power(momentum_symbol(walk, ps), n_steps)
        exact = H.evolution(ps, t)
        errs.append(op_norm(u - exact))
        counts.append(len(ps))
    errs_arr = np.array(errs)
    if np.all(errs_arr > 0) and len(a_arr) >= 2:
        slope = float(np.polyfit(np.log(a_arr), np.log(errs_arr), 1)[0])
    else:
        slope = float("nan")
    return ConvergenceResult(spacings=a_arr, errors=errs_arr, slope=slope, n_momenta=tuple(counts))


# ---------------------------------------------------------------------------
# Continuum states on the lattice
# ---------------------------------------------------------------------------


def embed_discrete_state(
    psi: Callable[[NDArray[np.float64]], ArrayLike],
    lattice: Lattice,
    cutoff: float,
    mapping: str = "momentum",
    coin: ArrayLike | None = None,
) -> tuple[WaveState, float]:
    """Discretize a continuum momentum-space wavefunction (1D).

    ``psi(p)`` returns amplitudes normalized as ``int |psi|^2 dp / 2 pi = 1``
    (scalar, combined with ``coin``, or spinor-valued).  The discrete
    amplitude at grid momentum ``p_k`` is ``psi(p_k) sqrt(dp / 2 pi)``; the
    ``block`` mapping multiplies by ``sin(p a / 2) / (p a / 2)``, the
    momentum-space image of averaging over each lattice cell.  Modes above
    the cutoff are dropped.

    Returns
    -------
    state : WaveState
        Normalized position-space state.
    alpha : float
        Norm of the truncated discrete amplitudes before renormalization.
    """
    if lattice.dims != 1:
        raise ValueError("embed_discrete_state supports 1D lattices")
    if not 0 < cutoff <= np.pi / lattice.spacing + 1e-12:
        raise ValueError("cutoff must lie in (0, pi/a]")
    if mapping not in ("momentum", "block"):
        raise ValueError(f"unknown mapping {mapping!r}")
    a = lattice.spacing
    n = lattice.extents[0]
    p = lattice.fft_momenta(0)
    vals = np.asarray(psi(p), dtype=complex)
    if vals.ndim == 1:
        c = np.array([1.0, 0.0] if coin is None else coin, dtype=complex)
        vals = vals[:, None] * c[None, :]
    dp = 2 * np.pi / (n * a)
    amp = vals * np.sqrt(dp / (2 * np.pi))
    if mapping == "block":
        amp = amp * np.sinc(p * a / (2 * np.pi))[:, None]
    amp[np.abs(p) > cutoff + 1e-12] = 0
    alpha = float(np.linalg.norm(amp))
    if alpha == 0:
        raise ValueError("no amplitude below the cutoff; truncated state is zero")
    # amplitude in |p> = sum_n e^{ipna}|n> / sqrt(N) basis -> position amplitudes
    pos = np.fft.ifft(amp / alpha, axis=0) * np.sqrt(n)
    return WaveState(lattice, pos), alpha


# ---------------------------------------------------------------------------
# Lattice rotation symmetry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RotationReport:
    invariant: bool
    witness: NDArray[np.complex128] | None
    residual: float
    nullity: int


def rotated_symbol(walk: CoinedWalk, p: ArrayLike) -> NDArray[np.complex128]:
    """Symbol after a 90 degree lattice rotation (``S_x -> S_y``, ``S_y -> S_x^dag``)."""
    p = np.asarray(p, dtype=float)
    a = walk.lattice.spacing
    out = 0
    for (qx, qy), a_q in walk.terms.items():
        phase = np.exp(-1j * a * (p[..., 0] * (-qy) + p[..., 1] * qx))
        out = out + phase[..., None, None] * a_q
    return out


def lattice_rotation_invariance(
    walk: CoinedWalk, n_samples: int = 32, tol: float = 1e-8, seed: int = 0
) -> RotationReport:
    """Search for a coin unitary ``R`` with ``R^dag U_rot(p) R = U(p)`` for all p.

    The intertwining condition ``U_rot(p) R = R U(p)`` is linear in ``R``;
    it is stacked over ``n_samples`` momenta and its null space found by
    SVD.  A generic element of the null space is replaced by its unitary
    polar factor, which still intertwines when the symbols are unitary.
    """
    if walk.lattice.dims != 2:
        raise ValueError("rotation invariance is defined here for 2D walks")
    d = walk.coin_dim
    rng = np.random.default_rng(seed)
    a = walk.lattice.spacing
    ps = rng.uniform(-np.pi / a, np.pi / a, size=(n_samples, 2))
    u = walk.symbol(ps)
    ur = rotated_symbol(walk, ps)
    eye = np.eye(d)
    # column-major vec: vec(X R) = (I kron X) vec R, vec(R Y) = (Y^T kron I) vec R
    rows = [np.kron(eye, ur[k]) - np.kron(u[k].T, eye) for k in range(n_samples)]
    mat = np.concatenate(rows, axis=0)
    _, s, vh = np.linalg.svd(mat)
    null = vh[s < 1e-9 * max(1.0, s[0])].conj()
    if null.shape[0] == 0:
        return RotationReport(invariant=False, witness=None, residual=float(s[-1]), nullity=0)
    coef = rng.standard_normal(null.shape[0]) + 1j * rng.standard_normal(null.shape[0])
    r = (coef @ null).reshape(d, d, order="F")
    r = polar_unitary(r)
    check = rng.uniform(-np.pi / a, np.pi / a, size=(n_samples, 2))
    allp = np.concatenate([ps, check])
    resid = op_norm(dagger(r) @ rotated_symbol(walk, allp) @ r - walk.symbol(allp))
    invariant = resid < tol
    return RotationReport(
        invariant=bool(invariant), witness=r if invariant else None, residual=resid, nullity=null.shape[0]
    )
