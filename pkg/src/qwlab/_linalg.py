"""Small dense linear-algebra helpers shared across modules."""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

ComplexArray = NDArray[np.complex128]

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)
HADAMARD_MATRIX = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)


def dagger(m: ComplexArray) -> ComplexArray:
    return np.conj(np.swapaxes(m, -1, -2))


def op_norm(m: ComplexArray) -> float:
    """Spectral norm of a matrix (or the max over a stack of matrices)."""
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    if m.ndim == 2:
        return float(np.linalg.norm(m, 2))
    return float(np.max(np.linalg.norm(m, 2, axis=(-2, -1))))


def unitarity_defect(u: ComplexArray) -> float:
    u = np.asarray(u, dtype=complex)
    return op_norm(dagger(u) @ u - np.eye(u.shape[-1]))


def expm_hermitian(h: ComplexArray, t: float = 1.0) -> ComplexArray:
    """Return exp(-i t h) for Hermitian h (stacks allowed) via eigendecomposition."""
    w, v = np.linalg.eigh(h)
    phase = np.exp(-1j * t * w)
    return (v * phase[..., None, :]) @ dagger(v)


def principal_log_unitary(u: ComplexArray, branch_tol: float = 1e-8) -> ComplexArray:
    """Hermitian ``M`` with ``u = exp(-i M)``, eigenphases of ``-M`` in (-pi, pi].

    Raises
    ------
    ValueError
        If an eigenvalue lies within ``branch_tol`` of -1, where the branch
        of the logarithm is ambiguous.
    """
    u = np.asarray(u, dtype=complex)
    # Schur form of a normal matrix is diagonal, which keeps eigenvectors
    # orthonormal even for degenerate eigenvalues.
    from scipy.linalg import schur

    t, z = schur(u, output="complex")
    lam = np.diag(t)
    if np.any(np.abs(lam + 1.0) < branch_tol):
        raise ValueError("unitary has an eigenvalue at -1; principal logarithm is ambiguous")
    theta = np.angle(lam)
    m = (z * (-theta)[None, :]) @ dagger(z)
    return 0.5 * (m + dagger(m))


def polar_unitary(m: ComplexArray) -> ComplexArray:
    """Closest unitary to ``m`` in Frobenius norm (unitary polar factor)."""
    u, _, vh = np.linalg.svd(m)
    return u @ vh


def projector_onto(vectors: ComplexArray, rtol: float = 1e-9) -> ComplexArray:
    """Orthogonal projector onto the column span of ``vectors``."""
    u, s, _ = np.linalg.svd(vectors, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((vectors.shape[0],) * 2, dtype=complex)
    keep = u[:, s > rtol * s[0]]
    return keep @ dagger(keep)


def random_unitary(d: int, rng: np.random.Generator) -> ComplexArray:
    """Haar-random unitary via QR with phase correction."""
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph[None, :]
