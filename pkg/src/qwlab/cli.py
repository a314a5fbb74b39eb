"""Batch command-line front end: ``qwlab <group> <command> [flags]``.

Every run writes comment lines (tool version, command, normalized config,
seed) followed by a CSV or key-value body.  Parameters come from defaults,
then an optional flat ``key = value`` config file, then flags (flags win).

Exit codes: 0 success, 2 validation failure, 3 numerical-check failure.
"""

from __future__ import annotations

import argparse
import io
import math
import sys
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_CHECK_FAILED = 3


class ValidationError(ValueError):
    """A configuration value violates a precondition."""


class CheckFailed(RuntimeError):
    """A numerical check (bound, identity, ...) did not hold."""


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in str(text).split(",") if x.strip())


@dataclass(frozen=True)
class Param:
    type: Callable[[str], Any]
    default: Any
    help: str


PARAMS: dict[str, Param] = {
    "preset": Param(str, "dirac1d", "walk preset name"),
    "mass": Param(float, 0.0, "mass m"),
    "spacing": Param(float, 1.0, "lattice spacing a"),
    "extent": Param(int, 0, "sites per axis (0: preset default)"),
    "steps": Param(int, 10, "number of walk steps"),
    "coin": Param(str, "sym", "initial coin state: r, l or sym"),
    "n_grid": Param(int, 32, "momentum grid points per axis"),
    "threshold": Param(float, 0.0, "doubler threshold (0: 0.05/a)"),
    "cutoff": Param(float, 1.0, "momentum cutoff Lambda"),
    "t": Param(float, 1.0, "evolution time"),
    "a0": Param(float, 0.1, "largest spacing of a halving sequence"),
    "halvings": Param(int, 5, "number of halvings after a0"),
    "seed": Param(int, None, "master seed for randomized commands"),
    "layers": Param(int, 3, "random walk layers (0: use preset)"),
    "modes": Param(int, 4, "number of fermionic modes"),
    "lx": Param(int, 2, "lattice width"),
    "ly": Param(int, 2, "lattice height"),
    "sites": Param(int, 2, "number of lattice sites"),
    "model": Param(str, "dirac1d", "shift or dirac1d"),
    "spins": Param(int, 6, "Heisenberg chain length"),
    "T": Param(float, 100.0, "averaging time"),
    "samples": Param(int, 201, "number of time samples"),
    "eps": Param(_float_list, (0.01,), "comma-separated eps values"),
    "instances": Param(int, 100, "number of random instances"),
    "kind": Param(str, "expectation", "expectation or subsystem"),
    "qubits": Param(int, 10, "log2 of the Hilbert-space dimension"),
    "K": Param(int, 20, "number of snapshots"),
    "weight": Param(str, "top_hat", "top_hat or lorentzian"),
    "beta": Param(float, 1.0, "inverse energy scale beta"),
    "delta": Param(float, 30.0, "spectrum width Delta"),
    "levels": Param(int, 2000, "number of energy levels"),
    "nu": Param(float, 1.0, "qubit frequency nu"),
    "lam": Param(float, 0.01, "coupling lambda"),
    "n_max": Param(int, 12, "oscillator truncation"),
    "states": Param(int, 10, "number of random initial states"),
}


@dataclass
class RunConfig:
    """Normalized configuration of a single run."""

    group: str
    command: str
    params: dict[str, Any] = field(default_factory=dict)
    output: str | None = None

    @property
    def seed(self) -> int | None:
        return self.params.get("seed")

    def to_text(self) -> str:
        lines = [f"command = {self.group} {self.command}"]
        if self.output:
            lines.append(f"output = {self.output}")
        for k in sorted(self.params):
            lines.append(f"{k} = {_format_value(self.params[k])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        raw = parse_config_text(text)
        if "command" not in raw:
            raise ValidationError("config: missing 'command'")
        parts = raw.pop("command").split()
        if len(parts) != 2:
            raise ValidationError("config: 'command' must be '<group> <command>'")
        output = raw.pop("output", None)
        params = {k: _convert(k, v) for k, v in raw.items()}
        return cls(parts[0], parts[1], params, output)


def _format_value(v: Any) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(_num(x) for x in v)
    if isinstance(v, float):
        return _num(v)
    return str(v)


def _convert(key: str, value: str) -> Any:
    if key not in PARAMS:
        raise ValidationError(f"config: unknown key '{key}'")
    if value.strip().lower() == "none":
        return None
    try:
        return PARAMS[key].type(value.strip())
    except ValueError as exc:
        raise ValidationError(f"config: bad value for '{key}': {value!r}") from exc


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ValidationError(f"config line {lineno}: empty key")
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _num(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.15g}"


@dataclass
class Output:
    """A CSV table (``header`` + ``rows``) and/or trailing key-value lines."""

    header: Sequence[str] | None = None
    rows: list[Sequence[Any]] = field(default_factory=list)
    values: list[tuple[str, Any]] = field(default_factory=list)
    lines: list[str] = field(default_factory=list)

    def body(self) -> str:
        buf = io.StringIO()
        if self.header is not None:
            buf.write(",".join(self.header) + "\n")
            for row in self.rows:
                buf.write(",".join(_num(x) if not isinstance(x, str) else x for x in row) + "\n")
        for k, v in self.values:
            buf.write(f"{k},{v if isinstance(v, str) else _num(v)}\n")
        for line in self.lines:
            buf.write(line + "\n")
        return buf.getvalue()


def _preamble(cfg: RunConfig) -> str:
    conf = ";".join(f"{k}={_format_value(cfg.params[k])}" for k in sorted(cfg.params))
    return (
        f"# qwlab {__version__}\n"
        f"# command: {cfg.group} {cfg.command}\n"
        f"# config: {conf}\n"
        f"# seed: {_format_value(cfg.seed)}\n"
    )


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------


def _require_seed(p: dict) -> int:
    if p.get("seed") is None:
        raise ValidationError("seed: this command is randomized and needs --seed")
    return int(p["seed"])


def _positive(p: dict, *names: str) -> None:
    for n in names:
        if not p[n] > 0:
            raise ValidationError(f"{n}: must be positive, got {p[n]}")


def _extent(p: dict, dims: int) -> int | None:
    e = p["extent"]
    if e == 0:
        return None
    if e < 2 or e % 2:
        raise ValidationError(f"extent: must be an even integer >= 2, got {e}")
    return e


def _cutoff(p: dict, spacing: float) -> float:
    if not 0 < p["cutoff"] <= math.pi / spacing:
        raise ValidationError(
            f"cutoff: must lie in (0, pi/a] = (0, {math.pi / spacing:.6g}] (Brillouin zone), got {p['cutoff']}"
        )
    return p["cutoff"]


def _choice(p: dict, name: str, options: Sequence[str]) -> str:
    if p[name] not in options:
        raise ValidationError(f"{name}: must be one of {', '.join(options)}, got {p[name]!r}")
    return p[name]


def _preset(p: dict) -> str:
    from .walk_core import PRESETS

    return _choice(p, "preset", PRESETS)


def _walk(p: dict):
    from .walk_core import build_preset

    name = _preset(p)
    _positive(p, "spacing")
    from .walk_core import _PRESET_DIMS

    return build_preset(name, mass=p["mass"], spacing=p["spacing"], extents=_extent(p, _PRESET_DIMS[name]))


def _halving_list(p: dict) -> list[float]:
    _positive(p, "a0")
    if p["halvings"] < 4:
        raise ValidationError(f"halvings: need at least 4 for a slope fit, got {p['halvings']}")
    return [p["a0"] * 2.0**-k for k in range(p["halvings"] + 1)]


def _spins(p: dict, limit: int = 12) -> int:
    if not 2 <= p["spins"] <= limit:
        raise ValidationError(f"spins: must be in [2, {limit}] (dense diagonalization budget), got {p['spins']}")
    return p["spins"]


# ---------------------------------------------------------------------------
# walk drivers
# ---------------------------------------------------------------------------


def _walk_evolve(p: dict) -> Output:
    from .walk_core import WaveState, evolve

    walk = _walk(p)
    coins = {"r": [1, 0], "l": [0, 1], "sym": [1 / math.sqrt(2), 1j / math.sqrt(2)]}
    coin = np.array(coins[_choice(p, "coin", tuple(coins))], dtype=complex)
    if walk.coin_dim != 2:
        coin = np.eye(walk.coin_dim)[0]
    if p["steps"] < 0:
        raise ValidationError("steps: must be non-negative")
    state = WaveState.localized(walk.lattice, coin, (0,) * walk.lattice.dims)
    _, probs = evolve(walk, state, p["steps"], record=True)
    dims = walk.lattice.dims
    names = ["site"] if dims == 1 else ["nx", "ny", "nz"][:dims]
    out = Output(header=["t", *names, "prob"])
    for t, frame in enumerate(probs):
        for idx in np.ndindex(*frame.shape):
            out.rows.append((t, *idx, float(frame[idx])))
    return out


def _walk_spectrum(p: dict) -> Output:
    from .spectral import dispersion

    walk = _walk(p)
    n = p["n_grid"]
    if n < 2:
        raise ValidationError("n_grid: must be >= 2")
    a = walk.lattice.spacing
    axis = -np.pi / a + 2 * np.pi / a * (np.arange(n) + 0.5) / n
    grid = np.stack(np.meshgrid(*([axis] * walk.lattice.dims), indexing="ij"), axis=-1).reshape(-1, walk.lattice.dims)
    data = dispersion(walk, grid)
    names = ["p"] if walk.lattice.dims == 1 else ["px", "py", "pz"][: walk.lattice.dims]
    out = Output(header=[*names, *[f"band{k + 1}" for k in range(data.bands.shape[1])]])
    for q, e in zip(data.momenta, data.bands):
        out.rows.append((*q, *e))
    return out


def _walk_doublers(p: dict) -> Output:
    from .spectral import find_doublers

    walk = _walk(p)
    thr = p["threshold"] if p["threshold"] > 0 else None
    rep = find_doublers(walk, threshold=thr, n_grid=p["n_grid"])
    names = ["px", "py", "pz"][: walk.lattice.dims]
    out = Output(header=[*names, "min_quasi_energy"])
    for q, e in zip(rep.momenta, rep.min_quasi_energy):
        out.rows.append((*q, e))
    return out


def _walk_converge(p: dict) -> Output:
    from .continuum import continuum_hamiltonian, convergence_error
    from .walk_core import build_preset, preset_family

    name = _preset(p)
    a_list = _halving_list(p)
    cutoff = _cutoff(p, a_list[0])
    # The Strang walk converges to the same Dirac Hamiltonian as dirac1d; its
    # own extraction carries O(a) corrections to B.
    ref = "dirac1d" if name == "strang_dirac1d" else name
    h = continuum_hamiltonian(build_preset(ref, mass=p["mass"]))
    res = convergence_error(preset_family(name, p["mass"]), h, p["t"], a_list, cutoff)
    out = Output(header=["a", "error"], rows=[tuple(r) for r in res.rows()])
    out.values.append(("slope", res.slope))
    return out


def _walk_decompose(p: dict) -> Output:
    from .walk_core import Lattice, decompose_1d, random_product_walk

    if p["layers"] > 0:
        rng = np.random.default_rng(_require_seed(p))
        lat = Lattice((_extent(p, 1) or 16,), p["spacing"])
        walk = random_product_walk(lat, 2, p["layers"], rng)
    else:
        walk = _walk(p)
        if walk.lattice.dims != 1:
            raise ValidationError("preset: decomposition needs a 1D walk")
    dec = decompose_1d(walk)
    grid = walk.lattice.momentum_grid()
    residual = max(float(np.max(np.abs(dec.symbol(q) - walk.symbol(q)))) for q in grid)
    values = [("n_factors", len(dec.factors)), ("residual", residual)]
    if residual > 1e-10:
        raise CheckFailed(f"decomposition residual {residual:.3e}")
    return Output(values=values)


def _walk_canonical(p: dict) -> Output:
    from .continuum import canonicalize, continuum_hamiltonian, is_relativistic

    walk = _walk(p)
    h = continuum_hamiltonian(walk)
    rel, dev = is_relativistic(h)
    out = Output(values=[("relativistic", rel), ("square_deviation", dev)])
    if h.coin_dim == 2:
        for line in canonicalize(h).as_text().splitlines():
            k, _, v = line.partition("=")
            out.values.append((k.strip(), v.strip()))
    return out


def _walk_rotsym(p: dict) -> Output:
    from .continuum import lattice_rotation_invariance

    walk = _walk(p)
    if walk.lattice.dims != 2:
        raise ValidationError("preset: rotation symmetry check needs a 2D walk")
    rep = lattice_rotation_invariance(walk, seed=p["seed"] or 0)
    return Output(values=[("invariant", rep.invariant), ("residual", rep.residual), ("nullity", rep.nullity)])


# ---------------------------------------------------------------------------
# fermi drivers
# ---------------------------------------------------------------------------


def _fermi_jw(p: dict) -> Output:
    from .fermions import ModeOrdering, jordan_wigner, quadratic_generator

    n = p["modes"]
    if not 2 <= n <= 12:
        raise ValidationError(f"modes: must be in [2, 12], got {n}")
    rng = np.random.default_rng(_require_seed(p))
    h = np.zeros((n, n), dtype=complex)
    for j in range(n - 1):
        h[j, j + 1] = rng.standard_normal() + 1j * rng.standard_normal()
        h[j + 1, j] = np.conj(h[j, j + 1])
    h[np.diag_indices(n)] = rng.standard_normal(n)
    ps = jordan_wigner(quadratic_generator(h, list(range(n))), ModeOrdering.linear(n))
    return Output(lines=ps.to_lines())


def _fermi_localize(p: dict) -> Output:
    from .fermions import (
        FermionPolynomial,
        MajoranaLayout,
        creation,
        annihilation,
        invariant_sector_spectrum,
        invariant_state,
        invariant_state_circuit,
        majorana_localize,
        simulate_circuit,
    )

    lx, ly = p["lx"], p["ly"]
    if not (1 <= lx and 1 <= ly and lx * ly <= 4):
        raise ValidationError("lx, ly: lattice must have at most 4 sites (dense budget)")
    rng = np.random.default_rng(_require_seed(p))
    layout = MajoranaLayout.square(lx, ly)
    sites = [m for s in layout.sites for m in layout.physical_modes[s]]
    h = FermionPolynomial({})
    for i, m in enumerate(sites):
        for n in sites[i + 1 :]:
            c = rng.standard_normal() + 1j * rng.standard_normal()
            h = h + c * (creation(m) * annihilation(n)) + np.conj(c) * (creation(n) * annihilation(m))
    model = majorana_localize(h, layout)
    energies = invariant_sector_spectrum(model)
    state = invariant_state(layout)
    circ = invariant_state_circuit(layout)
    out_state = simulate_circuit(circ)
    ancilla = np.zeros(out_state.size // state.size)
    ancilla[0] = 1.0
    fid = float(abs(np.vdot(np.kron(state, ancilla), out_state)) ** 2)
    return Output(
        values=[
            ("local", model.local),
            ("max_sites_per_term", model.max_sites_per_term),
            ("invariant_sector_min_energy", float(np.min(energies))),
            ("circuit_gates", circ.gate_count),
            ("circuit_fidelity", fid),
        ]
    )


def _fermi_swapcheck(p: dict) -> Output:
    from .fermions import ModeOrdering, fermionic_swap, fock_operator, annihilation, sparse_mode_operators

    n = p["modes"]
    if not 2 <= n <= 8:
        raise ValidationError(f"modes: must be in [2, 8], got {n}")
    order = ModeOrdering.linear(n)
    ops = sparse_mode_operators(n)
    worst = 0.0
    for a in range(n):
        for b in range(a + 1, n):
            s = fermionic_swap(a, b, order)
            fa = fock_operator(annihilation(a), order, ops).toarray()
            fb = fock_operator(annihilation(b), order, ops).toarray()
            worst = max(worst, float(np.max(np.abs(s @ fa @ s.conj().T - fb))))
    if worst > 1e-10:
        raise CheckFailed(f"swap residual {worst:.3e}")
    return Output(values=[("pairs", n * (n - 1) // 2), ("max_residual", worst)])


def _fermi_doubledcheck(p: dict) -> Output:
    from .fermions import doubled_local_decomposition
    from .walk_core import build_preset, dense_operator

    model = _choice(p, "model", ("shift", "dirac1d"))
    n = p["sites"]
    if not 2 <= n <= 4:
        raise ValidationError(f"sites: must be in [2, 4], got {n}")
    if model == "shift":
        u = np.roll(np.eye(n), 1, axis=0).astype(complex)
        site_of = list(range(n))
    else:
        u = dense_operator(build_preset("dirac1d", mass=p["mass"], spacing=p["spacing"], extents=n))
        site_of = [j // 2 for j in range(2 * n)]
    rep = doubled_local_decomposition(unitary=u, site_of_mode=site_of, seed=p["seed"] or 0)
    out = Output(values=[("passed", rep.passed), ("residual", rep.residual), ("method", rep.method), ("localized", rep.localized)])
    if not (rep.passed and rep.localized):
        raise CheckFailed(out.body())
    return out


def _fermi_vacuum(p: dict) -> Output:
    from .fermions import discrete_vacuum

    _positive(p, "spacing")
    n = p["sites"]
    if n < 2 or n % 2:
        raise ValidationError(f"sites: must be an even integer >= 2, got {n}")
    rep = discrete_vacuum(p["mass"], p["spacing"], n, _cutoff(p, p["spacing"]))
    out = Output(header=["p", "lambda_plus_re", "lambda_plus_im", "overlap"], rows=[tuple(r) for r in rep.rows()])
    out.values.append(("distance", rep.distance))
    return out


# ---------------------------------------------------------------------------
# eq drivers
# ---------------------------------------------------------------------------


def _rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _eq_chain(p: dict) -> Output:
    from .equilibration import evolve_expectation, heisenberg_chain, time_average_state

    n = _spins(p, 10)
    seed = _require_seed(p)
    _positive(p, "T")
    system = heisenberg_chain(n, seed=seed)
    up_x = np.array([1, 1], dtype=complex) / math.sqrt(2)
    pair = np.kron(up_x, up_x)
    proj = np.kron(np.outer(pair, pair.conj()), np.eye(1 << (n - 2)))
    rho0 = proj / np.trace(proj).real
    times = np.linspace(0.0, p["T"], p["samples"])
    series = evolve_expectation(rho0, system, proj, times)
    avg = float(np.real(np.trace(time_average_state(rho0, system) @ proj)))
    return Output(header=["t", "expectation", "time_average"], rows=[(t, e, avg) for t, e in zip(times, series)])


def _eq_deff(p: dict) -> Output:
    from .equilibration import effective_dimension, heisenberg_chain, random_pure_state

    n = _spins(p)
    rng = np.random.default_rng(_require_seed(p))
    system = heisenberg_chain(n, seed=p["seed"])
    psi = random_pure_state(system.dim, rng)
    return Output(values=[("dimension", system.dim), ("d_E", system.d_E), ("d_eff", effective_dimension(psi, system))])


def _eq_gaps(p: dict) -> Output:
    from .equilibration import gap_stats, heisenberg_chain

    system = heisenberg_chain(_spins(p), seed=_require_seed(p))
    if any(e <= 0 for e in p["eps"]):
        raise ValidationError("eps: values must be positive")
    st = gap_stats(system, p["eps"])
    out = Output(header=["eps", "N_eps"], rows=list(zip(st.eps, st.n_eps)))
    out.values += [("D_G", st.D_G), ("eps_min", st.eps_min)]
    return out


def _eq_bounds(p: dict) -> Output:
    from .equilibration import heisenberg_chain, random_pure_state, random_unit_observable, verify_bound

    n = _spins(p, 8)
    kind = _choice(p, "kind", ("expectation", "subsystem"))
    _positive(p, "T", "instances")
    out = Output(header=["instance", "lhs", "rhs", "holds"])
    for i, rng in enumerate(_rngs(_require_seed(p), p["instances"])):
        system = heisenberg_chain(n, seed=int(rng.integers(2**31)))
        psi = random_pure_state(system.dim, rng)
        if kind == "expectation":
            rep = verify_bound(system, psi, p["T"], observable=random_unit_observable(system.dim, rng))
        else:
            rep = verify_bound(system, psi, p["T"], subsystem_dim=2)
        out.rows.append((i, rep.lhs, rep.rhs, rep.holds))
    if not all(r[3] for r in out.rows):
        raise CheckFailed("bound violated\n" + out.body())
    return out


def _eq_slow(p: dict) -> Output:
    from .equilibration import random_hamiltonian_system, random_pure_state, slow_equilibration_construct

    q = p["qubits"]
    if not 2 <= q <= 12:
        raise ValidationError(f"qubits: must be in [2, 12], got {q}")
    rng = np.random.default_rng(_require_seed(p))
    system = random_hamiltonian_system(1 << q, rng)
    psi = random_pure_state(system.dim, rng)
    eps = p["eps"][0]
    rep = slow_equilibration_construct(system, psi, p["K"], eps, seed=p["seed"])
    out = Output(header=["t", "distinguishability", "lower_bound"])
    out.rows = [(t, d, rep.lower_bound) for t, d in zip(rep.times, rep.distinguishability)]
    out.values += [
        ("d_eff", rep.d_eff),
        ("two_trace_p_omega", 2 * rep.trace_p_omega),
        ("infinite_average_bound", rep.infinite_average_bound),
    ]
    if not (rep.window_holds and rep.infinite_holds):
        raise CheckFailed("slow-equilibration inequality violated\n" + out.body())
    return out


def _eq_filter(p: dict) -> Output:
    from .equilibration import energy_filter, heisenberg_chain, random_unit_observable

    system = heisenberg_chain(_spins(p, 8), seed=_require_seed(p))
    weight = _choice(p, "weight", ("top_hat", "lorentzian"))
    _positive(p, "T")
    a = random_unit_observable(system.dim, np.random.default_rng(p["seed"]))
    f = energy_filter(a, system, weight, p["T"])
    fe = system.vectors.conj().T @ f @ system.vectors
    same = system.level_of[:, None] == system.level_of[None, :]
    off = float(np.linalg.norm(np.where(same, 0, fe), 2))
    return Output(values=[("weight", weight), ("T", p["T"]), ("off_block_norm", off)])


def _eq_gapmodel(p: dict) -> Output:
    from .equilibration import exponential_gap_model

    _positive(p, "beta", "delta")
    if p["levels"] < 2:
        raise ValidationError("levels: must be >= 2")
    r = exponential_gap_model(p["beta"], p["delta"], p["levels"], _require_seed(p), p["eps"])
    out = Output(
        values=[
            ("mean_gap", r.mean_gap),
            ("predicted_mean_gap", r.predicted_mean_gap),
            ("sigma_gap", r.sigma_gap),
            ("predicted_sigma_gap", r.predicted_sigma_gap),
        ]
    )
    for e, n, pred in zip(r.eps, r.n_eps, r.predicted_n_eps):
        out.values.append((f"N_eps[{_num(e)}]", f"{n},{_num(pred)}"))
    return out


def _eq_toy(p: dict) -> Output:
    from .equilibration import qubit_oscillator_model, random_pure_state

    if p["lam"] == 0:
        raise ValidationError("lam: must be nonzero")
    if p["n_max"] < 4:
        raise ValidationError("n_max: must be >= 4")
    model = qubit_oscillator_model(p["nu"], p["lam"], p["n_max"])
    rng = np.random.default_rng(_require_seed(p))
    env = model.environment_state(rng)
    out = Output(header=["state", "max_deviation"])
    for i in range(p["states"]):
        omega_s = model.subsystem_average(np.kron(random_pure_state(2, rng), env))
        out.rows.append((i, float(np.max(np.abs(omega_s - np.eye(2) / 2)))))
    return out


_WALK = ["preset", "mass", "spacing", "extent"]

COMMANDS: dict[tuple[str, str], tuple[Callable[[dict], Output], list[str]]] = {
    ("walk", "evolve"): (_walk_evolve, _WALK + ["steps", "coin"]),
    ("walk", "spectrum"): (_walk_spectrum, _WALK + ["n_grid"]),
    ("walk", "doublers"): (_walk_doublers, _WALK + ["n_grid", "threshold"]),
    ("walk", "converge"): (_walk_converge, ["preset", "mass", "cutoff", "t", "a0", "halvings"]),
    ("walk", "decompose"): (_walk_decompose, _WALK + ["layers", "seed"]),
    ("walk", "canonical"): (_walk_canonical, _WALK),
    ("walk", "rotsym"): (_walk_rotsym, _WALK + ["seed"]),
    ("fermi", "jw"): (_fermi_jw, ["modes", "seed"]),
    ("fermi", "localize"): (_fermi_localize, ["lx", "ly", "seed"]),
    ("fermi", "swapcheck"): (_fermi_swapcheck, ["modes"]),
    ("fermi", "doubledcheck"): (_fermi_doubledcheck, ["model", "sites", "mass", "spacing", "seed"]),
    ("fermi", "vacuum"): (_fermi_vacuum, ["mass", "spacing", "sites", "cutoff"]),
    ("eq", "chain"): (_eq_chain, ["spins", "seed", "T", "samples"]),
    ("eq", "deff"): (_eq_deff, ["spins", "seed"]),
    ("eq", "gaps"): (_eq_gaps, ["spins", "seed", "eps"]),
    ("eq", "bounds"): (_eq_bounds, ["spins", "seed", "T", "instances", "kind"]),
    ("eq", "slow"): (_eq_slow, ["qubits", "seed", "K", "eps"]),
    ("eq", "filter"): (_eq_filter, ["spins", "seed", "T", "weight"]),
    ("eq", "gapmodel"): (_eq_gapmodel, ["beta", "delta", "levels", "seed", "eps"]),
    ("eq", "toy"): (_eq_toy, ["nu", "lam", "n_max", "seed", "states"]),
}

_COMMAND_DEFAULTS = {
    ("walk", "decompose"): {"layers": 0},
    ("eq", "slow"): {"eps": (0.1,)},
    ("fermi", "vacuum"): {"sites": 64, "spacing": 0.1, "mass": 0.5},
}


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qwlab", description="Quantum walk and equilibration laboratory")
    parser.add_argument("--version", action="version", version=f"qwlab {__version__}")
    groups = parser.add_subparsers(dest="group", required=True)
    subs: dict[str, argparse._SubParsersAction] = {}
    for (group, command), (_, names) in COMMANDS.items():
        if group not in subs:
            subs[group] = groups.add_parser(group).add_subparsers(dest="command", required=True)
        sp_ = subs[group].add_parser(command)
        sp_.add_argument("--config", help="flat key = value config file (flags override it)")
        sp_.add_argument("--out", help="output path (default: stdout)")
        for name in names:
            prm = PARAMS[name]
            sp_.add_argument(f"--{name.replace('_', '-')}", dest=name, type=prm.type, default=None, help=prm.help)
    return parser


def validate(cfg: RunConfig) -> RunConfig:
    """Check the command, fill defaults and drop unrelated keys."""
    key = (cfg.group, cfg.command)
    if key not in COMMANDS:
        raise ValidationError(f"command: unknown '{cfg.group} {cfg.command}'")
    _, names = COMMANDS[key]
    unknown = set(cfg.params) - set(names)
    if unknown:
        raise ValidationError(f"config: keys not used by {cfg.group} {cfg.command}: {', '.join(sorted(unknown))}")
    params = {n: PARAMS[n].default for n in names}
    params.update({k: v for k, v in _COMMAND_DEFAULTS.get(key, {}).items() if k in params})
    params.update({k: v for k, v in cfg.params.items() if v is not None})
    return RunConfig(cfg.group, cfg.command, params, cfg.output)


def execute(cfg: RunConfig) -> str:
    """Run a validated config and return the full output text."""
    fn, _ = COMMANDS[(cfg.group, cfg.command)]
    return _preamble(cfg) + fn(dict(cfg.params)).body()


def run(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    """Parse ``argv``, run the command, write the output; return the exit code."""
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_INVALID
    flags = {k: v for k, v in vars(ns).items() if k not in ("group", "command", "config", "out") and v is not None}
    try:
        params: dict[str, Any] = {}
        output = ns.out
        if ns.config:
            try:
                with open(ns.config, encoding="utf-8") as fh:
                    raw = parse_config_text(fh.read())
            except OSError as exc:
                raise ValidationError(f"config: cannot read {ns.config}: {exc}") from exc
            raw.pop("command", None)
            output = output or raw.pop("output", None)
            params.update({k: _convert(k, v) for k, v in raw.items()})
        params.update(flags)
        cfg = validate(RunConfig(ns.group, ns.command, params, output))
        text = execute(cfg)
    except ValidationError as exc:
        print(f"qwlab: validation error: {exc}", file=stderr)
        return EXIT_INVALID
    except CheckFailed as exc:
        print(f"qwlab: check failed: {exc}", file=stderr)
        return EXIT_CHECK_FAILED
    except ValueError as exc:
        print(f"qwlab: validation error: {exc}", file=stderr)
        return EXIT_INVALID
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    return EXIT_OK


def main() -> None:
    sys.exit(run())
