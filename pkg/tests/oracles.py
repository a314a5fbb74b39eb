"""Independent reference computations used by the tests.

Nothing here imports from ``qwlab``: every oracle is a direct, dense
construction from the defining formulas, so agreement with the package is
a genuine cross-check.
"""

from __future__ import annotations

import itertools
from functools import reduce

import numpy as np
import scipy.integrate
import scipy.linalg

X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)


def kron_all(ops):
    return reduce(np.kron, ops, np.eye(1, dtype=complex))


# ---------------------------------------------------------------------------
# Walks
# ---------------------------------------------------------------------------


def shift_matrix(n: int, q: int) -> np.ndarray:
    """``S^q`` on a ring of ``n`` sites, ``S|k> = |k+1>``."""
    s = np.zeros((n, n), dtype=complex)
    for k in range(n):
        s[(k + q) % n, k] = 1
    return s


def dense_walk_1d(terms: dict[int, np.ndarray], n: int) -> np.ndarray:
    """``sum_q S^q (x) A_q`` in the site-major layout (index = site * d + coin)."""
    return sum(np.kron(shift_matrix(n, q), a) for q, a in terms.items())


def dense_walk_nd(terms: dict[tuple[int, ...], np.ndarray], extents: tuple[int, ...]) -> np.ndarray:
    out = 0
    for q, a in terms.items():
        out = out + np.kron(kron_all([shift_matrix(n, s) for n, s in zip(extents, q)]), a)
    return out


def dirac1d_terms(m: float, a: float) -> dict[int, np.ndarray]:
    """``A_{+1} = exp(-i m a sigma_x)|r><r|``, ``A_{-1} = exp(-i m a sigma_x)|l><l|``."""
    w = scipy.linalg.expm(-1j * m * a * X)
    return {1: w @ np.diag([1, 0]), -1: w @ np.diag([0, 1])}


def dirac1d_quasi_energies(m: float, a: float, p: np.ndarray) -> np.ndarray:
    """Closed form ``+-arccos(cos ma cos pa)/a``, sorted per momentum."""
    e = np.arccos(np.cos(m * a) * np.cos(np.asarray(p) * a)) / a
    return np.stack([-e, e], axis=-1)


def weyl_symbol(p: np.ndarray, a: float = 1.0, sign: int = 1) -> np.ndarray:
    """``exp(-i sigma_x p_x a) exp(-i sigma_y p_y a) exp(-i sigma_z p_z a)`` (sign flips the chirality)."""
    return reduce(np.matmul, [scipy.linalg.expm(-1j * sign * s * pi * a) for s, pi in zip((X, Y, Z), p)])


def naive_fermion_energy(p, m, a):
    return np.sqrt(np.sin(np.asarray(p) * a) ** 2 / a**2 + m**2)


# ---------------------------------------------------------------------------
# Fermions
# ---------------------------------------------------------------------------


def jw_annihilation(j: int, n: int) -> np.ndarray:
    """Dense ``a_j = Z ... Z |0><1| 1 ... 1`` with qubit 0 the most significant factor."""
    lower = np.array([[0, 1], [0, 0]], dtype=complex)
    return kron_all([Z] * j + [lower] + [I2] * (n - j - 1))


def pauli_string_matrix(paulis: dict[int, str], n: int) -> np.ndarray:
    table = {"X": X, "Y": Y, "Z": Z}
    return kron_all([table[paulis[k]] if k in paulis else I2 for k in range(n)])


def quadratic_fock(h: np.ndarray) -> np.ndarray:
    """``sum_jk h_jk a_j^dag a_k`` as a dense Fock matrix."""
    n = h.shape[0]
    a = [jw_annihilation(j, n) for j in range(n)]
    return sum(h[j, k] * a[j].conj().T @ a[k] for j in range(n) for k in range(n) if h[j, k] != 0)


# ---------------------------------------------------------------------------
# Spin chains and equilibration
# ---------------------------------------------------------------------------


def heisenberg_dense(couplings) -> np.ndarray:
    j = np.asarray(couplings, dtype=float)
    n = len(j) + 1
    h = np.zeros((2**n, 2**n), dtype=complex)
    for i, ji in enumerate(j):
        for p in (X, Y, Z):
            ops = [I2] * n
            ops[i] = p
            ops[i + 1] = p
            h += ji * kron_all(ops)
    return h


def grouped_levels(h: np.ndarray, tol: float = 1e-8):
    """Distinct eigenvalues and the eigenprojector for each (plain ``eigh`` on the full matrix)."""
    w, v = np.linalg.eigh(h)
    groups: list[list[int]] = []
    for i in range(len(w)):
        if groups and abs(w[i] - w[groups[-1][0]]) <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    levels = np.array([w[g].mean() for g in groups])
    projs = [v[:, g] @ v[:, g].conj().T for g in groups]
    return levels, projs


def effective_dimension(rho: np.ndarray, h: np.ndarray) -> float:
    _, projs = grouped_levels(h)
    return 1.0 / sum(np.real(np.trace(p @ rho)) ** 2 for p in projs)


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Half the nuclear norm, from singular values."""
    return 0.5 * float(np.sum(np.linalg.svd(rho - sigma, compute_uv=False)))


def dephased(rho: np.ndarray, h: np.ndarray) -> np.ndarray:
    _, projs = grouped_levels(h)
    return sum(p @ rho @ p for p in projs)


def fluctuation_quadrature(psi: np.ndarray, h: np.ndarray, a: np.ndarray, T: float) -> float:
    """``<|<A>(t) - tr(omega A)|^2>_T`` by adaptive quadrature with ``expm`` propagation."""
    rho = np.outer(psi, psi.conj())
    avg = np.real(np.trace(dephased(rho, h) @ a))

    def f(t):
        u = scipy.linalg.expm(-1j * h * t)
        phi = u @ psi
        return (np.real(np.vdot(phi, a @ phi)) - avg) ** 2

    val, _ = scipy.integrate.quad(f, 0.0, T, limit=4000, epsabs=1e-13, epsrel=1e-11)
    return val / T


def gap_window_count(levels: np.ndarray, eps: float, tol: float = 1e-9) -> int:
    """Brute-force ``max_E #{alpha : G_alpha in [E, E + eps)}`` with windows starting at each gap."""
    gaps = [x - y for x, y in itertools.permutations(levels, 2)]
    best = 0
    for start in gaps:
        best = max(best, sum(1 for g in gaps if start - tol <= g < start + eps - tol))
    return best


def vacuum_distance(m: float, a: float, n_sites: int, cutoff: float) -> float:
    """``sqrt(2 - 2 prod_p |<c_-(p)|w_+(p)>|)`` over ring momenta with ``|p| <= cutoff``.

    ``w_+`` is the eigenvector of ``U(p)`` whose eigenvalue has positive
    imaginary part; ``c_-`` is the negative eigenvector of ``p Z + m X``.
    """
    terms = dirac1d_terms(m, a)
    prod = 1.0
    for p in 2 * np.pi * np.fft.fftfreq(n_sites, a):
        if abs(p) > cutoff + 1e-12:
            continue
        u = sum(A * np.exp(-1j * q * p * a) for q, A in terms.items())
        lam, vec = np.linalg.eig(u)
        w = vec[:, int(np.argmax(lam.imag))]
        _, hvec = np.linalg.eigh(p * Z + m * X)
        prod *= abs(np.vdot(hvec[:, 0], w)) / np.linalg.norm(w)
    return float(np.sqrt(2 - 2 * prod))
