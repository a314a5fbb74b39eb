"""Fermionic operator algebra, Jordan-Wigner and Majorana encodings, doubled systems and vacua.

Mode labels are any hashable, orderable values (ints, or tuples such as
``("p", site)``).  Qubit 0 is the most significant bit of a computational
basis index, and occupation ``1`` of a mode is qubit state ``|1>``.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numpy.typing import ArrayLike, NDArray
from scipy.sparse.linalg import expm_multiply

from ._linalg import dagger, op_norm
from .walk_core import build_preset, momentum_symbol

__all__ = [
    "FermionPolynomial",
    "ModeOrdering",
    "PauliSum",
    "MajoranaLayout",
    "LocalizedModel",
    "Circuit",
    "DoubledReport",
    "VacuumReport",
    "EnergyBranch",
    "creation",
    "annihilation",
    "number",
    "majorana",
    "jordan_wigner",
    "fock_operator",
    "sparse_mode_operators",
    "fermionic_swap",
    "swap_generator",
    "quadratic_generator",
    "majorana_localize",
    "invariant_sector_spectrum",
    "invariant_state",
    "invariant_state_circuit",
    "simulate_circuit",
    "encode_qubit_ops",
    "doubled_local_decomposition",
    "discrete_vacuum",
    "vacuum_overlap",
    "vacuum_convergence",
    "DENSE_MODE_LIMIT",
]

DENSE_MODE_LIMIT = 12

Mode = Hashable
Op = tuple[Mode, bool]  # (mode, is_creation)
Monomial = tuple[Op, ...]


def _mode_key(m: Mode) -> tuple:
    if isinstance(m, (int, np.integer)):
        return (0, int(m), "")
    return (1, 0, repr(m))


def _op_key(op: Op) -> tuple:
    # creators first (ascending), then annihilators (ascending)
    return (0 if op[1] else 1, _mode_key(op[0]))


# ---------------------------------------------------------------------------
# Fermionic polynomials
# ---------------------------------------------------------------------------


class FermionPolynomial:
    """Finite sum of products of creation/annihilation operators.

    Stored as ``{monomial: coefficient}`` with each monomial an ordered
    tuple of ``(mode, is_creation)``.  Arithmetic does not reorder
    operators; :meth:`normal_ordered` brings a polynomial to the canonical
    form (creators before annihilators, each block sorted by mode) using
    the anticommutation relations.
    """

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[Monomial, complex] | None = None) -> None:
        self.terms: dict[Monomial, complex] = {}
        for mono, c in (terms or {}).items():
            if c != 0:
                key = tuple((m, bool(d)) for m, d in mono)
                self.terms[key] = self.terms.get(key, 0) + complex(c)

    @classmethod
    def scalar(cls, c: complex) -> "FermionPolynomial":
        return cls({(): c})

    def __add__(self, other: "FermionPolynomial | complex") -> "FermionPolynomial":
        if not isinstance(other, FermionPolynomial):
            other = FermionPolynomial.scalar(other)
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0) + v
        return FermionPolynomial(out)

    __radd__ = __add__

    def __neg__(self) -> "FermionPolynomial":
        return FermionPolynomial({k: -v for k, v in self.terms.items()})

    def __sub__(self, other: "FermionPolynomial | complex") -> "FermionPolynomial":
        return self + (-other if isinstance(other, FermionPolynomial) else -complex(other))

    def __rsub__(self, other: complex) -> "FermionPolynomial":
        return (-self) + other

    def __mul__(self, other: "FermionPolynomial | complex") -> "FermionPolynomial":
        if not isinstance(other, FermionPolynomial):
            return FermionPolynomial({k: v * other for k, v in self.terms.items()})
        out: dict[Monomial, complex] = {}
        for (k1, v1), (k2, v2) in itertools.product(self.terms.items(), other.terms.items()):
            k = k1 + k2
            out[k] = out.get(k, 0) + v1 * v2
        return FermionPolynomial(out)

    def __rmul__(self, other: complex) -> "FermionPolynomial":
        return FermionPolynomial({k: other * v for k, v in self.terms.items()})

    def __matmul__(self, other: "FermionPolynomial") -> "FermionPolynomial":
        return self * other

    def adjoint(self) -> "FermionPolynomial":
        return FermionPolynomial(
            {tuple((m, not d) for m, d in reversed(k)): np.conj(v) for k, v in self.terms.items()}
        )

    def modes(self) -> set[Mode]:
        return {m for k in self.terms for m, _ in k}

    def is_even(self) -> bool:
        return all(len(k) % 2 == 0 for k in self.terms)

    def is_odd(self) -> bool:
        return all(len(k) % 2 == 1 for k in self.terms)

    def normal_ordered(self, tol: float = 0.0) -> "FermionPolynomial":
        out: dict[Monomial, complex] = {}
        stack = list(self.terms.items())
        while stack:
            mono, c = stack.pop()
            ops = list(mono)
            done = True
            for i in range(len(ops) - 1):
                x, y = ops[i], ops[i + 1]
                if _op_key(x) > _op_key(y):
                    swapped = ops[:i] + [y, x] + ops[i + 2 :]
                    stack.append((tuple(swapped), -c))
                    if x[0] == y[0] and x[1] != y[1]:
                        stack.append((tuple(ops[:i] + ops[i + 2 :]), c))
                    done = False
                    break
                if x == y:
                    # a a = 0 and a^dag a^dag = 0
                    done = False
                    break
            if done:
                out[mono] = out.get(mono, 0) + c
        return FermionPolynomial({k: v for k, v in out.items() if abs(v) > tol})

    def is_zero(self, tol: float = 1e-12) -> bool:
        return all(abs(v) <= tol for v in self.normal_ordered().terms.values())

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return (self - self.adjoint()).is_zero(tol)

    def __repr__(self) -> str:
        if not self.terms:
            return "FermionPolynomial(0)"
        parts = []
        for k, v in self.terms.items():
            ops = " ".join(f"a{'+' if d else ''}[{m!r}]" for m, d in k) or "1"
            parts.append(f"({v:.6g}) {ops}")
        return " + ".join(parts)


def creation(mode: Mode) -> FermionPolynomial:
    return FermionPolynomial({((mode, True),): 1.0})


def annihilation(mode: Mode) -> FermionPolynomial:
    return FermionPolynomial({((mode, False),): 1.0})


def number(mode: Mode) -> FermionPolynomial:
    return creation(mode) * annihilation(mode)


def majorana(mode: Mode) -> FermionPolynomial:
    """``c = a + a^dag`` (squares to one)."""
    return annihilation(mode) + creation(mode)


def quadratic_generator(h: ArrayLike, modes: Sequence[Mode]) -> FermionPolynomial:
    """``sum_jk h_jk a^dag_j a_k``; for unitary ``u = exp(-i h)`` this generates its second quantization."""
    h = np.asarray(h, dtype=complex)
    out: dict[Monomial, complex] = {}
    for j, k in zip(*np.nonzero(np.abs(h) > 0)):
        out[((modes[j], True), (modes[k], False))] = h[j, k]
    return FermionPolynomial(out)


# ---------------------------------------------------------------------------
# Orderings and Pauli sums
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModeOrdering:
    """Bijection from modes to qubit positions ``0 .. N-1``."""

    modes: tuple[Mode, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        idx = {m: i for i, m in enumerate(self.modes)}
        if len(idx) != len(self.modes):
            raise ValueError("mode ordering must list each mode once")
        object.__setattr__(self, "_index", idx)

    @classmethod
    def linear(cls, n: int) -> "ModeOrdering":
        return cls(tuple(range(n)))

    @classmethod
    def site_consecutive(cls, site_modes: Mapping[Hashable, Sequence[Mode]]) -> "ModeOrdering":
        """Sites in the given order, each site's modes consecutive."""
        return cls(tuple(m for s in site_modes for m in site_modes[s]))

    def __len__(self) -> int:
        return len(self.modes)

    def index(self, mode: Mode) -> int:
        try:
            return self._index[mode]
        except KeyError:
            raise ValueError(f"mode {mode!r} is not in the ordering") from None


_PAULI_PRODUCT = {
    ("X", "X"): (1, None), ("Y", "Y"): (1, None), ("Z", "Z"): (1, None),
    ("X", "Y"): (1j, "Z"), ("Y", "X"): (-1j, "Z"),
    ("Y", "Z"): (1j, "X"), ("Z", "Y"): (-1j, "X"),
    ("Z", "X"): (1j, "Y"), ("X", "Z"): (-1j, "Y"),
}  # fmt: skip

_PAULI_DENSE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

PauliString = tuple[tuple[int, str], ...]


class PauliSum:
    """Sum of Pauli strings ``{((qubit, P), ...): coefficient}``; identity sites are omitted."""

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[PauliString, complex] | None = None) -> None:
        self.terms: dict[PauliString, complex] = {}
        for k, v in (terms or {}).items():
            key = tuple(sorted((int(q), p) for q, p in k if p != "I"))
            if len({q for q, _ in key}) != len(key):
                raise ValueError("a Pauli string lists a qubit twice")
            self.terms[key] = self.terms.get(key, 0) + complex(v)

    @classmethod
    def identity(cls, c: complex = 1.0) -> "PauliSum":
        return cls({(): c})

    def __add__(self, other: "PauliSum") -> "PauliSum":
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0) + v
        return PauliSum(out)

    def __sub__(self, other: "PauliSum") -> "PauliSum":
        return self + other * -1

    def __mul__(self, other: "PauliSum | complex") -> "PauliSum":
        if not isinstance(other, PauliSum):
            return PauliSum({k: v * other for k, v in self.terms.items()})
        out: dict[PauliString, complex] = {}
        for (k1, v1), (k2, v2) in itertools.product(self.terms.items(), other.terms.items()):
            phase, key = _multiply_strings(k1, k2)
            out[key] = out.get(key, 0) + phase * v1 * v2
        return PauliSum(out)

    __rmul__ = __mul__

    def simplified(self, tol: float = 1e-14) -> "PauliSum":
        return PauliSum({k: v for k, v in self.terms.items() if abs(v) > tol})

    def support(self, tol: float = 1e-14) -> set[int]:
        return {q for k, v in self.terms.items() if abs(v) > tol for q, _ in k}

    def adjoint(self) -> "PauliSum":
        return PauliSum({k: np.conj(v) for k, v in self.terms.items()})

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return all(abs(v.imag) <= tol for v in self.simplified().terms.values())

    def to_dense(self, n_qubits: int) -> NDArray[np.complex128]:
        if n_qubits > DENSE_MODE_LIMIT:
            raise ValueError(f"dense Pauli matrices are limited to {DENSE_MODE_LIMIT} qubits")
        return self.to_sparse(n_qubits).toarray()

    def to_sparse(self, n_qubits: int) -> sp.csr_matrix:
        dim = 1 << n_qubits
        out = sp.csr_matrix((dim, dim), dtype=complex)
        for k, v in self.terms.items():
            if v == 0:
                continue
            if any(q >= n_qubits for q, _ in k):
                raise ValueError("Pauli string acts on a qubit beyond n_qubits")
            ops = dict(k)
            mat = sp.identity(1, dtype=complex, format="csr")
            for q in range(n_qubits):
                mat = sp.kron(mat, _PAULI_DENSE[ops.get(q, "I")], format="csr")
            out = out + v * mat
        return out

    def to_lines(self) -> list[str]:
        """Serialize as ``coeff_re,coeff_im,site:P;site:P;...`` lines."""
        lines = []
        for k, v in sorted(self.simplified().terms.items()):
            lines.append(f"{v.real:.17g},{v.imag:.17g}," + ";".join(f"{q}:{p}" for q, p in k))
        return lines

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "PauliSum":
        terms = {}
        for line in lines:
            re_, im_, rest = line.strip().split(",", 2)
            key = tuple((int(q), p) for q, p in (t.split(":") for t in rest.split(";") if t))
            terms[key] = complex(float(re_), float(im_))
        return cls(terms)

    def __repr__(self) -> str:
        return f"PauliSum({len(self.terms)} terms)"


def _multiply_strings(k1: PauliString, k2: PauliString) -> tuple[complex, PauliString]:
    ops = dict(k1)
    phase: complex = 1.0
    for q, p in k2:
        if q in ops:
            ph, r = _PAULI_PRODUCT[(ops[q], p)]
            phase *= ph
            if r is None:
                del ops[q]
            else:
                ops[q] = r
        else:
            ops[q] = p
    return phase, tuple(sorted(ops.items()))


def _jw_single(mode: Mode, dag: bool, ordering: ModeOrdering) -> PauliSum:
    j = ordering.index(mode)
    z = tuple((k, "Z") for k in range(j))
    s = -0.5j if dag else 0.5j  # creation = (X - iY)/2 = |1><0|
    return PauliSum({z + ((j, "X"),): 0.5, z + ((j, "Y"),): s})


def jordan_wigner(op: FermionPolynomial, ordering: ModeOrdering, tol: float = 1e-14) -> PauliSum:
    """Jordan-Wigner image: ``a^dag_m -> sigma^-_m prod_{pi(k) < pi(m)} Z_k``.

    Raises
    ------
    ValueError
        If a mode is missing from the ordering.
    """
    cache: dict[Op, PauliSum] = {}
    out = PauliSum()
    for mono, c in op.terms.items():
        term = PauliSum.identity(c)
        for m, d in mono:
            if (m, d) not in cache:
                cache[(m, d)] = _jw_single(m, d, ordering)
            term = term * cache[(m, d)]
        out = out + term
    return out.simplified(tol)


# ---------------------------------------------------------------------------
# Sparse Fock-space matrices built directly from occupation bits
# ---------------------------------------------------------------------------


def sparse_mode_operators(n_modes: int) -> list[sp.csr_matrix]:
    """Annihilation operators ``a_j`` on ``2^n`` Fock space.

    ``a_j |n> = (-1)^{sum_{k<j} n_k} |n - e_j>`` when ``n_j = 1``, with mode
    ``j`` the bit of weight ``2^{n-1-j}``.
    """
    dim = 1 << n_modes
    idx = np.arange(dim)
    ops = []
    for j in range(n_modes):
        bit = 1 << (n_modes - 1 - j)
        occ = (idx & bit) != 0
        higher = idx >> (n_modes - j)  # bits of modes k < j
        parity = np.array([bin(x).count("1") & 1 for x in higher]) if j else np.zeros(dim, dtype=int)
        src = idx[occ]
        dst = src ^ bit
        vals = np.where(parity[occ] == 1, -1.0, 1.0).astype(complex)
        ops.append(sp.csr_matrix((vals, (dst, src)), shape=(dim, dim)))
    return ops


def fock_operator(
    op: FermionPolynomial, ordering: ModeOrdering, mode_ops: Sequence[sp.csr_matrix] | None = None
) -> sp.csr_matrix:
    """Sparse matrix of a polynomial using occupation-bit mode operators."""
    n = len(ordering)
    a = list(mode_ops) if mode_ops is not None else sparse_mode_operators(n)
    dim = 1 << n
    out = sp.csr_matrix((dim, dim), dtype=complex)
    adag = [x.conj().T.tocsr() for x in a]
    for mono, c in op.terms.items():
        mat = sp.identity(dim, dtype=complex, format="csr")
        for m, d in mono:
            j = ordering.index(m)
            mat = mat @ (adag[j] if d else a[j])
        out = out + c * mat
    return out.tocsr()


# ---------------------------------------------------------------------------
# Swaps and qubit encodings
# ---------------------------------------------------------------------------


def swap_generator(a: Mode, b: Mode) -> FermionPolynomial:
    """``G = (pi/2) (b^dag - a^dag)(b - a)`` with ``S = exp(i G)``."""
    if a == b:
        raise ValueError("a fermionic swap needs two distinct modes")
    return (np.pi / 2) * ((creation(b) - creation(a)) * (annihilation(b) - annihilation(a)))


def fermionic_swap(a: Mode, b: Mode, ordering: ModeOrdering | None = None) -> NDArray[np.complex128]:
    """Dense unitary ``exp[i pi/2 (b^dag - a^dag)(b - a)]`` with ``S a S^dag = b``."""
    gen = swap_generator(a, b)
    if ordering is None:
        ordering = ModeOrdering((a, b))
    if len(ordering) > DENSE_MODE_LIMIT:
        raise ValueError(f"dense swaps are limited to {DENSE_MODE_LIMIT} modes")
    g = fock_operator(gen, ordering).toarray()
    return scipy.linalg.expm(1j * g)


def encode_qubit_ops(a: Mode = 0, b: Mode = 1) -> dict[str, FermionPolynomial]:
    """Qubit operators on the even sector of two modes.

    ``|0>_Q = |0_F>`` and ``|1>_Q = a^dag b^dag |0_F>``;
    ``X = (a^dag - a)(b^dag + b)`` maps ``|0_F> -> a^dag b^dag |0_F>`` and back
    with sign ``+1`` both ways, and ``Z = a a^dag - a^dag a``.
    """
    x = (creation(a) - annihilation(a)) * (creation(b) + annihilation(b))
    z = annihilation(a) * creation(a) - creation(a) * annihilation(a)
    return {"I": FermionPolynomial.scalar(1.0), "X": x, "Z": z}


# ---------------------------------------------------------------------------
# Majorana-pair localization
# ---------------------------------------------------------------------------


class MajoranaLayout:
    """Sites, links and the auxiliary modes attached to each link end.

    Each link ``{n, m}`` carries modes ``("aux", n, m)`` (on site ``n``) and
    ``("aux", m, n)`` (on site ``m``) with Majoranas ``c_(n,m)``,
    ``c_(m,n)`` and link operator ``M_(n,m) = i c_(n,m) c_(m,n)``.
    """

    def __init__(
        self,
        sites: Sequence[Hashable],
        links: Iterable[tuple[Hashable, Hashable]],
        physical_modes: Mapping[Hashable, Sequence[Mode]] | None = None,
    ) -> None:
        self.sites = tuple(sites)
        site_set = set(self.sites)
        clean: list[tuple[Hashable, Hashable]] = []
        for n, m in links:
            if n not in site_set or m not in site_set or n == m:
                raise ValueError(f"invalid link ({n!r}, {m!r})")
            key = (n, m) if self.sites.index(n) < self.sites.index(m) else (m, n)
            if key not in clean:
                clean.append(key)
        self.links = tuple(clean)
        if physical_modes is None:
            physical_modes = {s: [("p", s)] for s in self.sites}
        self.physical_modes = {s: tuple(physical_modes.get(s, ())) for s in self.sites}
        self._nbrs: dict[Hashable, list[Hashable]] = {s: [] for s in self.sites}
        for n, m in self.links:
            self._nbrs[n].append(m)
            self._nbrs[m].append(n)

    @classmethod
    def square(cls, lx: int, ly: int) -> "MajoranaLayout":
        """Open ``lx x ly`` square lattice with nearest-neighbour links."""
        sites = [(x, y) for x in range(lx) for y in range(ly)]
        links = [((x, y), (x + 1, y)) for x in range(lx - 1) for y in range(ly)]
        links += [((x, y), (x, y + 1)) for x in range(lx) for y in range(ly - 1)]
        return cls(sites, links)

    @classmethod
    def line(cls, n: int) -> "MajoranaLayout":
        return cls(list(range(n)), [(i, i + 1) for i in range(n - 1)])

    def aux_modes(self, site: Hashable) -> tuple[Mode, ...]:
        out = []
        for n, m in self.links:
            if n == site:
                out.append(("aux", n, m))
            elif m == site:
                out.append(("aux", m, n))
        return tuple(out)

    def site_modes(self) -> dict[Hashable, tuple[Mode, ...]]:
        return {s: self.physical_modes[s] + self.aux_modes(s) for s in self.sites}

    def ordering(self) -> ModeOrdering:
        """Site-consecutive ordering: each site's physical modes, then its auxiliary modes."""
        return ModeOrdering.site_consecutive(self.site_modes())

    def physical_ordering(self) -> ModeOrdering:
        return ModeOrdering.site_consecutive(self.physical_modes)

    def site_of(self, mode: Mode) -> Hashable:
        for s, ms in self.site_modes().items():
            if mode in ms:
                return s
        raise ValueError(f"mode {mode!r} is not in the layout")

    def majorana(self, n: Hashable, m: Hashable) -> FermionPolynomial:
        return majorana(("aux", n, m))

    def link_operator(self, n: Hashable, m: Hashable) -> FermionPolynomial:
        """``M_(n,m) = i c_(n,m) c_(m,n)``."""
        if (n, m) not in self.links and (m, n) not in self.links:
            raise ValueError(f"no link between {n!r} and {m!r}")
        return 1j * self.majorana(n, m) * self.majorana(m, n)

    def path(self, n: Hashable, m: Hashable) -> list[Hashable]:
        """Lexicographically smallest shortest path of sites from ``n`` to ``m``."""
        dist = {m: 0}
        queue = deque([m])
        while queue:
            s = queue.popleft()
            for t in self._nbrs[s]:
                if t not in dist:
                    dist[t] = dist[s] + 1
                    queue.append(t)
        if n not in dist:
            raise ValueError(f"no path of links between {n!r} and {m!r}")
        path = [n]
        while path[-1] != m:
            cur = path[-1]
            nxt = sorted((t for t in self._nbrs[cur] if dist.get(t) == dist[cur] - 1), key=_mode_key)
            path.append(nxt[0])
        return path


@dataclass
class LocalizedModel:
    layout: MajoranaLayout
    polynomial: FermionPolynomial
    pauli: PauliSum
    term_supports: list[tuple[set[Hashable], set[int], bool]]

    @property
    def local(self) -> bool:
        return all(ok for _, _, ok in self.term_supports)

    @property
    def max_sites_per_term(self) -> int:
        return max((len(s) for s, _, _ in self.term_supports), default=0)


def majorana_localize(H: FermionPolynomial, layout: MajoranaLayout, tol: float = 1e-12) -> LocalizedModel:
    """Insert link operators so every term becomes local under Jordan-Wigner.

    Each monomial is split by site.  If every site's factor is even the
    monomial is kept.  If exactly two sites ``n, m`` carry odd factors the
    product of ``M`` along the path from ``n`` to ``m`` multiplies the term;
    these link operators are even and commute with physical modes, so on
    the joint ``+1`` eigenspace of all ``M`` the spectrum is unchanged.

    Raises
    ------
    ValueError
        Odd or non-Hermitian input, a term with more than two odd sites, or
        a pair of sites not connected by links.
    """
    if not H.is_even():
        raise ValueError("Hamiltonian must be even (parity superselection)")
    if not H.is_hermitian(tol):
        raise ValueError("Hamiltonian must be Hermitian")
    ordering = layout.ordering()
    site_of = {m: s for s, ms in layout.site_modes().items() for m in ms}
    new_terms = FermionPolynomial()
    supports: list[tuple[set[Hashable], set[int], bool]] = []
    total = PauliSum()
    for mono, c in H.terms.items():
        by_site: dict[Hashable, int] = {}
        for m, _ in mono:
            if m not in site_of:
                raise ValueError(f"mode {m!r} is not a physical mode of the layout")
            by_site[site_of[m]] = by_site.get(site_of[m], 0) + 1
        odd = [s for s, k in by_site.items() if k % 2]
        term = FermionPolynomial({mono: c})
        sites = set(by_site)
        if len(odd) == 2:
            n, m = sorted(odd, key=lambda s: layout.sites.index(s))
            path = layout.path(n, m)
            links = FermionPolynomial.scalar(1.0)
            for u, v in zip(path[:-1], path[1:]):
                # stored orientation: the sector is the +1 eigenspace of these M
                key = (u, v) if (u, v) in layout.links else (v, u)
                links = links * layout.link_operator(*key)
            term = links * term
            sites |= set(path)
        elif len(odd) > 2:
            raise ValueError(f"term {mono} has odd parts on more than two sites")
        image = jordan_wigner(term, ordering)
        allowed = {ordering.index(x) for s in sites for x in layout.site_modes()[s]}
        supp = image.support()
        supports.append((sites, supp, supp <= allowed))
        new_terms = new_terms + term
        total = total + image
    return LocalizedModel(layout=layout, polynomial=new_terms, pauli=total.simplified(), term_supports=supports)


def invariant_sector_spectrum(model: LocalizedModel) -> NDArray[np.float64]:
    """Eigenvalues of the encoded Hamiltonian on the joint ``+1`` eigenspace of all link operators."""
    layout = model.layout
    ordering = layout.ordering()
    n = len(ordering)
    if n > DENSE_MODE_LIMIT:
        raise ValueError(f"dense check limited to {DENSE_MODE_LIMIT} modes")
    dim = 1 << n
    h = model.pauli.to_sparse(n)
    proj = sp.identity(dim, dtype=complex, format="csr")
    for u, v in layout.links:
        m = jordan_wigner(layout.link_operator(u, v), ordering).to_sparse(n)
        proj = proj @ (0.5 * (sp.identity(dim, format="csr") + m))
    # link operators are commuting Pauli strings, so each column P|k> is zero
    # or the unique sector vector on the orbit of k; keep one per orbit
    proj = proj.tocsc()
    cols = []
    for k in range(dim):
        col = proj[:, k]
        if col.nnz and col.indices.min() == k and np.linalg.norm(col.data) > 1e-9:
            cols.append(col / np.linalg.norm(col.data))
    basis = sp.hstack(cols).toarray()
    if op_norm(dagger(basis) @ basis - np.eye(basis.shape[1])) > 1e-9:
        raise RuntimeError("sector basis is not orthonormal")
    return np.linalg.eigvalsh(dagger(basis) @ (h @ basis))


def invariant_state(layout: MajoranaLayout) -> NDArray[np.complex128]:
    """``prod_links (c_(n,m) - i c_(m,n)) / sqrt 2`` applied to the Fock vacuum (dense)."""
    ordering = layout.ordering()
    n = len(ordering)
    if n > DENSE_MODE_LIMIT:
        raise ValueError(f"dense states limited to {DENSE_MODE_LIMIT} modes")
    mode_ops = sparse_mode_operators(n)
    psi = np.zeros(1 << n, dtype=complex)
    psi[0] = 1
    for u, v in layout.links:
        f = (layout.majorana(u, v) - 1j * layout.majorana(v, u)) * (1 / np.sqrt(2))
        psi = fock_operator(f, ordering, mode_ops) @ psi
    return psi


@dataclass(frozen=True)
class Circuit:
    """Gate list on ``n_qubits`` qubits; entries are ``(name, qubits)``."""

    n_qubits: int
    gates: tuple[tuple[str, tuple[int, ...]], ...]

    @property
    def gate_count(self) -> int:
        return len(self.gates)


def invariant_state_circuit(layout: MajoranaLayout) -> Circuit:
    """Gate sequence preparing :func:`invariant_state` from ``|0...0>``.

    Qubits ``0 .. N-1`` are the modes in the layout's ordering, then one
    ancilla and one flag qubit.  For each link the ancilla is put in
    ``(|0> - i|1>)/sqrt 2``; ``c_(n,m)`` is applied controlled on ``|0>``
    and ``c_(m,n)`` controlled on ``|1>``, the Jordan-Wigner ``Z`` string
    being a controlled-Z on a flag qubit holding the parity of the earlier
    qubits.  A CNOT from the second mode back to the ancilla resets it.
    The gate count is ``O(N^2)``.
    """
    ordering = layout.ordering()
    n = len(ordering)
    anc, flag = n, n + 1
    gates: list[tuple[str, tuple[int, ...]]] = []
    prepared: list[int] = []

    def controlled_majorana(q: int) -> None:
        string = [k for k in prepared if k < q]
        for k in string:
            gates.append(("CNOT", (k, flag)))
        gates.append(("CZ", (anc, flag)))
        for k in reversed(string):
            gates.append(("CNOT", (k, flag)))
        gates.append(("CNOT", (anc, q)))

    for u, v in layout.links:
        q1 = ordering.index(("aux", u, v))
        q2 = ordering.index(("aux", v, u))
        gates += [("H", (anc,)), ("SDG", (anc,))]
        gates.append(("X", (anc,)))
        controlled_majorana(q1)
        gates.append(("X", (anc,)))
        prepared.append(q1)
        controlled_majorana(q2)
        prepared.append(q2)
        gates.append(("CNOT", (q2, anc)))
    return Circuit(n_qubits=n + 2, gates=tuple(gates))


_GATES_1Q = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "S": np.diag([1, 1j]),
    "SDG": np.diag([1, -1j]),
    "Z": np.diag([1.0, -1.0]).astype(complex),
}


def simulate_circuit(circuit: Circuit, initial: NDArray[np.complex128] | None = None) -> NDArray[np.complex128]:
    """Statevector simulation (qubit 0 most significant)."""
    n = circuit.n_qubits
    if initial is None:
        psi = np.zeros(1 << n, dtype=complex)
        psi[0] = 1
    else:
        psi = np.array(initial, dtype=complex)
    t = psi.reshape((2,) * n)
    for name, qs in circuit.gates:
        if name in _GATES_1Q:
            t = np.moveaxis(np.tensordot(_GATES_1Q[name], t, axes=([1], [qs[0]])), 0, qs[0])
        elif name == "CNOT":
            c, x = qs
            sel = [slice(None)] * n
            sel[c] = 1
            sub = t[tuple(sel)]
            axis = x if x < c else x - 1
            t[tuple(sel)] = np.flip(sub, axis=axis)
        elif name == "CZ":
            c, z = qs
            sel = [slice(None)] * n
            sel[c] = 1
            sel[z] = 1
            t[tuple(sel)] *= -1
        else:
            raise ValueError(f"unknown gate {name!r}")
    return t.reshape(-1)


# ---------------------------------------------------------------------------
# Doubled-system local decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DoubledReport:
    passed: bool
    residual: float
    method: str
    swap_supports: tuple[frozenset, ...]
    neighbourhoods: tuple[frozenset, ...]
    localized: bool


def _hermitian_log(u: NDArray[np.complex128]) -> NDArray[np.complex128]:
    """Hermitian ``h`` with ``u = exp(-i h)`` (any branch; -1 allowed)."""
    t, z = scipy.linalg.schur(u, output="complex")
    h = (z * (-np.angle(np.diag(t)))[None, :]) @ dagger(z)
    return 0.5 * (h + dagger(h))


class _FockUnitary:
    """``exp(i G)`` for a sparse Hermitian ``G``, applied densely or to vectors."""

    def __init__(self, generator: sp.csr_matrix, sign: float = 1.0, dense: bool = False) -> None:
        self.g = generator * (1j * sign)
        self._dense = scipy.linalg.expm(self.g.toarray()) if dense else None

    def __matmul__(self, v: NDArray[np.complex128]) -> NDArray[np.complex128]:
        if self._dense is not None:
            return self._dense @ v
        return expm_multiply(self.g, v)


def doubled_local_decomposition(
    unitary: ArrayLike | None = None,
    site_of_mode: Sequence[Hashable] | None = None,
    generator: FermionPolynomial | None = None,
    n_probe: int = 4,
    seed: int = 0,
    tol: float = 1e-10,
    swap_sign: float = 1.0,
) -> DoubledReport:
    """Check ``U_A U_B^dag = prod_n S_n prod_m U_B S_m U_B^dag`` on a doubled system.

    The evolution ``U_A`` is given either as a single-particle unitary
    ``unitary`` (second quantized as ``exp(-i sum h_jk a^dag_j a_k)`` with
    ``u = exp(-i h)``) or as an even Hermitian ``generator`` on modes
    ``0 .. N-1`` (``U_A = exp(-i G)``).  Copy ``B`` carries the same
    dynamics; ``S_n`` swaps all modes of site ``n`` between the copies.
    Modes are ordered site by site with copy ``A`` before copy ``B``.

    Up to 12 doubled modes both sides are dense matrices; beyond that the
    identity is checked on ``n_probe`` random vectors with sparse
    exponentials.  Each conjugated swap's support is audited: a site is in
    the support when some on-site quadratic operator there fails to
    commute with it.  ``swap_sign = -1`` replaces the swaps by their
    inverses with the sign of the generator flipped, which is a valid
    identity too; any other value breaks it (negative control).

    Raises
    ------
    ValueError
        Odd generator or inconsistent inputs.
    """
    if (unitary is None) == (generator is None):
        raise ValueError("give exactly one of unitary or generator")
    if unitary is not None:
        u = np.asarray(unitary, dtype=complex)
        n_modes = u.shape[0]
        h = _hermitian_log(u)
        gen = quadratic_generator(h, list(range(n_modes)))
    else:
        if not generator.is_even():
            raise ValueError("the generator must be even")
        if not generator.is_hermitian():
            raise ValueError("the generator must be Hermitian")
        gen = generator
        n_modes = 1 + max(int(m) for m in gen.modes()) if gen.terms and gen.modes() else 0
        u = None
    if site_of_mode is None:
        site_of_mode = list(range(n_modes))
    if len(site_of_mode) != n_modes:
        raise ValueError("site_of_mode must list a site for every mode")
    sites = list(dict.fromkeys(site_of_mode))
    modes_at = {s: [j for j in range(n_modes) if site_of_mode[j] == s] for s in sites}
    doubled = ModeOrdering(tuple((c, j) for s in sites for c in ("A", "B") for j in modes_at[s]))
    nd = len(doubled)
    dense = nd <= DENSE_MODE_LIMIT
    ops = sparse_mode_operators(nd)

    def relabel(p: FermionPolynomial, copy: str) -> FermionPolynomial:
        return FermionPolynomial({tuple(((copy, m), d) for m, d in k): v for k, v in p.terms.items()})

    g_a = fock_operator(relabel(gen, "A"), doubled, ops)
    g_b = fock_operator(relabel(gen, "B"), doubled, ops)
    ua = _FockUnitary(g_a, -1.0, dense)
    ub = _FockUnitary(g_b, -1.0, dense)
    ub_dag = _FockUnitary(g_b, +1.0, dense)
    swaps = []
    for s in sites:
        g = FermionPolynomial()
        for j in modes_at[s]:
            g = g + swap_generator(("A", j), ("B", j))
        swaps.append(_FockUnitary(fock_operator(g, doubled, ops), swap_sign, dense))

    def lhs(v: NDArray[np.complex128]) -> NDArray[np.complex128]:
        return ua @ (ub_dag @ v)

    def conj_swap(k: int, v: NDArray[np.complex128]) -> NDArray[np.complex128]:
        return ub @ (swaps[k] @ (ub_dag @ v))

    def rhs(v: NDArray[np.complex128]) -> NDArray[np.complex128]:
        for k in range(len(sites)):
            v = conj_swap(k, v)
        for k in range(len(sites)):
            v = swaps[k] @ v
        return v

    dim = 1 << nd
    rng = np.random.default_rng(seed)
    if dense:
        eye = np.eye(dim, dtype=complex)
        resid = op_norm(lhs(eye) - rhs(eye))
        probes = eye
    else:
        probes = rng.standard_normal((dim, n_probe)) + 1j * rng.standard_normal((dim, n_probe))
        probes /= np.linalg.norm(probes, axis=0)
        resid = float(np.max(np.linalg.norm(lhs(probes) - rhs(probes), axis=0)))

    # neighbourhood of each site: sites coupled to it by the single-particle unitary
    if u is None:
        u_sp = None
    else:
        u_sp = u
    nbhd = []
    for s in sites:
        if u_sp is not None:
            near = {site_of_mode[i] for i in range(n_modes) for j in modes_at[s] if abs(u_sp[i, j]) > 1e-12}
        else:
            near = set(sites)
        nbhd.append(frozenset(near | {s}))

    # a generic combination of on-site quadratic operators commutes with V
    # only if every one of them does
    adag = [x.conj().T.tocsr() for x in ops]
    site_ops = []
    for t in sites:
        idx = [doubled.index((c, j)) for c in ("A", "B") for j in modes_at[t]]
        o = sp.csr_matrix((dim, dim), dtype=complex)
        for i in idx:
            for j in idx:
                o = o + complex(rng.standard_normal(), rng.standard_normal()) * (adag[i] @ ops[j])
                if i < j:
                    o = o + rng.standard_normal() * (ops[i] @ ops[j] + adag[j] @ adag[i])
        site_ops.append(o)
    audit_probes = probes if dense else probes[:, :1]
    supports = []
    for k in range(len(sites)):
        v_probe = conj_swap(k, audit_probes)
        supp = set()
        for t, o in zip(sites, site_ops):
            comm = conj_swap(k, o @ audit_probes) - o @ v_probe
            if np.max(np.abs(comm)) > 1e-9:
                supp.add(t)
        supports.append(frozenset(supp))
    localized = all(sup <= nb for sup, nb in zip(supports, nbhd))
    return DoubledReport(
        passed=bool(resid <= tol),
        residual=resid,
        method="dense" if dense else "probe",
        swap_supports=tuple(supports),
        neighbourhoods=tuple(nbhd),
        localized=localized,
    )


# ---------------------------------------------------------------------------
# Discrete Dirac vacuum
# ---------------------------------------------------------------------------


class EnergyBranch:
    """Branch labels: ``NEGATIVE`` is the eigenvalue with positive imaginary part."""

    NEGATIVE = "lambda_plus"
    POSITIVE = "lambda_minus"


@dataclass(frozen=True)
class VacuumReport:
    momenta: NDArray[np.float64]
    lambda_plus: NDArray[np.complex128]
    lambda_minus: NDArray[np.complex128]
    w_plus: NDArray[np.complex128]
    w_minus: NDArray[np.complex128]
    continuum_negative: NDArray[np.complex128]
    overlaps: NDArray[np.float64]
    distance: float
    negative_branch: str = EnergyBranch.NEGATIVE

    def rows(self) -> list[tuple[float, float, float, float]]:
        return [
            (float(p), float(l.real), float(l.imag), float(o))
            for p, l, o in zip(self.momenta, self.lambda_plus, self.overlaps)
        ]


def _dirac_h(p: float, m: float) -> NDArray[np.complex128]:
    return np.array([[p, m], [m, -p]], dtype=complex)


def discrete_vacuum(m: float, a: float, n_sites: int, cutoff: float | None = None) -> VacuumReport:
    """Negative-energy modes of the 1D Dirac walk versus the continuum Dirac equation.

    For each ring momentum with ``|p| <= cutoff`` (default ``pi/a``) the
    eigenvalue ``lambda_+`` of ``U(p)`` with positive imaginary part marks
    the negative-energy mode ``w_+``; it is compared with the negative
    eigenvector of ``h(p) = p sigma_z + m sigma_x``.  Phases are chosen so
    each overlap is real and non-negative; the vacua are Slater
    determinants, so their inner product is the product of the overlaps
    and ``distance = sqrt(2 - 2 prod overlaps)``, evaluated from the
    per-mode ``sin^2`` of the overlap angles to avoid cancellation.  Where ``U(p)`` is
    degenerate the continuum eigenvector is used for the discrete mode.

    Raises
    ------
    ValueError
        If ``m a >= pi/2`` or the cutoff exceeds ``pi/a``.
    """
    if m < 0:
        raise ValueError("mass must be non-negative")
    if m * a >= np.pi / 2:
        raise ValueError("m a must be below pi/2 to separate the energy branches")
    if cutoff is None:
        cutoff = np.pi / a
    if cutoff > np.pi / a + 1e-12:
        raise ValueError("cutoff must not exceed pi/a")
    walk = build_preset("dirac1d", mass=m, spacing=a, extents=n_sites)
    p_all = walk.lattice.axis_momenta(0)
    ps = p_all[np.abs(p_all) <= cutoff + 1e-12]
    lp, lm, wp, wm, vc, ov, sin2 = [], [], [], [], [], [], []
    for p in ps:
        u = momentum_symbol(walk, float(p))
        lam, vec = np.linalg.eig(u)
        hv, hvec = np.linalg.eigh(_dirac_h(p, m))
        c_neg = hvec[:, 0]
        if abs(lam[0] - lam[1]) < 1e-12:
            w_neg = c_neg.copy()
            w_pos = hvec[:, 1].copy()
            i_neg = 0
        else:
            i_neg = int(np.argmax(lam.imag))
            w_neg = vec[:, i_neg] / np.linalg.norm(vec[:, i_neg])
            w_pos = vec[:, 1 - i_neg] / np.linalg.norm(vec[:, 1 - i_neg])
        o = np.vdot(c_neg, w_neg)
        if abs(o) > 0:
            w_neg = w_neg * np.conj(o) / abs(o)
        lp.append(lam[i_neg])
        lm.append(lam[1 - i_neg])
        wp.append(w_neg)
        wm.append(w_pos)
        vc.append(c_neg)
        ov.append(min(1.0, abs(np.vdot(c_neg, w_neg))))
        # sin^2 of the angle from the orthogonal residual, free of cancellation
        sin2.append(min(1.0, float(np.linalg.norm(w_neg - np.vdot(c_neg, w_neg) * c_neg) ** 2)))
    ov_arr = np.array(ov)
    # 2 - 2 prod cos(theta_k) = -2 expm1(sum log cos(theta_k))
    log_prod = 0.5 * float(np.sum(np.log1p(-np.minimum(np.array(sin2), 1.0 - 1e-300))))
    dist = float(np.sqrt(max(0.0, -2.0 * np.expm1(log_prod))))
    return VacuumReport(
        momenta=ps,
        lambda_plus=np.array(lp),
        lambda_minus=np.array(lm),
        w_plus=np.array(wp),
        w_minus=np.array(wm),
        continuum_negative=np.array(vc),
        overlaps=ov_arr,
        distance=dist,
    )


def vacuum_overlap(m: float, a: float, cutoff: float, physical_length: float = 16 * np.pi) -> float:
    """Vacuum distance below ``cutoff`` on a ring of fixed physical length."""
    n = max(2, 2 * int(round(physical_length / (2 * a))))
    return discrete_vacuum(m, a, n, cutoff).distance


def vacuum_convergence(
    m: float, cutoff: float, a_list: Sequence[float], physical_length: float = 16 * np.pi
) -> tuple[NDArray[np.float64], float]:
    """Distances for each spacing and the fitted log-log slope (``nan`` if any distance is 0)."""
    a_arr = np.asarray(a_list, dtype=float)
    d = np.array([vacuum_overlap(m, a, cutoff, physical_length) for a in a_arr])
    if np.all(d > 0) and len(a_arr) >= 2:
        slope = float(np.polyfit(np.log(a_arr), np.log(d), 1)[0])
    else:
        slope = float("nan")
    return d, slope
