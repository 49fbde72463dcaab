"""Hamiltonian instances, special marginal families, and exact diagonalization."""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.optimize as so
import scipy.sparse.linalg as spla

from .quantum import (
    DensityMatrix,
    HermitianOperator,
    LanczosError,
    SiteSystem,
    dense_min_eigenvalue,
    embed,
    entropy_of_spectrum,
    lanczos_min,
)

__all__ = [
    "SX",
    "SY",
    "SZ",
    "PSI_MINUS",
    "LocalHamiltonian",
    "TIChainTerm",
    "ghz_vector",
    "build_three_site_epr",
    "build_quantum_maxcut",
    "build_ghz_hyper",
    "build_xxz",
    "ring_hamiltonian",
    "ring_operator",
    "ring_ground_state",
    "ti_ground_energy_density",
    "extrapolate_energy_density",
    "xy_ring_energy",
    "XY_ENERGY_DENSITY",
    "gibbs_free_energy",
    "binary_entropy",
    "werner_state",
    "MarginalAssignment",
    "build_wm_not_med_marginals",
    "solve_wm_not_med_lambda",
    "build_med_not_wm_marginals",
]

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PSI_MINUS = np.array([0, 1, -1, 0], dtype=complex) / np.sqrt(2)

XY_ENERGY_DENSITY = -4.0 / math.pi


def ghz_vector(k: int) -> np.ndarray:
    v = np.zeros(2**k, dtype=complex)
    v[0] = v[-1] = 1 / np.sqrt(2)
    return v


@dataclass(frozen=True)
class LocalHamiltonian:
    """A sum of Hermitian terms, each acting on a few sites of ``system``."""

    system: SiteSystem
    terms: tuple[HermitianOperator, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            if not t.sites:
                raise ValueError("term with empty support")
            if not set(t.sites) <= self.system.sites:
                raise ValueError(f"term support {t.sites} not inside {self.system.site_ids}")
            for s, d in zip(t.sites, t.system.local_dims):
                if self.system.local_dims[self.system.positions([s])[0]] != d:
                    raise ValueError(f"local dimension mismatch on site {s}")

    @property
    def supports(self) -> list[tuple[int, ...]]:
        return [t.sites for t in self.terms]

    def to_dense(self) -> HermitianOperator:
        dims = self.system.local_dims
        out = np.zeros((self.system.dim, self.system.dim), dtype=complex)
        for t in self.terms:
            out += embed(t.entries, dims, self.system.positions(t.sites))
        return HermitianOperator(out, self.system)

    def as_linear_operator(self) -> spla.LinearOperator:
        """Matrix-free application of the sum of terms."""
        dims = self.system.local_dims
        n = len(dims)
        is_real = all(np.allclose(t.entries.imag, 0) for t in self.terms)
        dtype = float if is_real else complex
        plan = []
        for t in self.terms:
            pos = self.system.positions(t.sites)
            k = len(pos)
            op = t.entries.real if is_real else t.entries
            plan.append((op.reshape([dims[p] for p in pos] * 2), pos, k))

        def matvec(v):
            psi = np.asarray(v, dtype=dtype).reshape(dims)
            out = np.zeros_like(psi)
            for op, pos, k in plan:
                r = np.tensordot(op, psi, axes=(list(range(k, 2 * k)), pos))
                out += np.moveaxis(r, list(range(k)), pos)
            return out.reshape(-1)

        d = self.system.dim
        return spla.LinearOperator((d, d), matvec=matvec, dtype=dtype)

    def min_eigenvalue(self, tol: float = 1e-8) -> float:
        if self.system.dim <= 1024:
            return dense_min_eigenvalue(self.to_dense().entries)
        return lanczos_min(self.as_linear_operator(), tol=tol)[0]


def _pair_term(mat: np.ndarray, sites: Sequence[int], dims=2) -> HermitianOperator:
    return HermitianOperator(mat, list(sites), dims)


def build_three_site_epr() -> LocalHamiltonian:
    """``H = h12 + h23`` with ``h = -1/2 |psi-><psi-|`` on each pair."""
    h = -0.5 * np.outer(PSI_MINUS, PSI_MINUS.conj())
    return LocalHamiltonian(SiteSystem([1, 2, 3]), (_pair_term(h, (1, 2)), _pair_term(h, (2, 3))))


def _normalize_edges(edges: Iterable[Sequence[int]]) -> list[tuple[int, int]]:
    seen = set()
    out = []
    for e in edges:
        i, j = (int(x) for x in e)
        if i == j:
            raise ValueError(f"self-loop on node {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ValueError(f"duplicate edge {key}")
        seen.add(key)
        out.append(key)
    return out


def is_connected(nodes: Iterable[int], edges: Sequence[tuple[int, int]]) -> bool:
    nodes = set(nodes)
    if not nodes:
        return False
    adj: dict[int, set[int]] = {v: set() for v in nodes}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    start = next(iter(nodes))
    seen = {start}
    stack = [start]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen == nodes


def build_quantum_maxcut(edges: Iterable[Sequence[int]]) -> LocalHamiltonian:
    """One ``-|psi-><psi-|`` term per edge of a connected simple graph."""
    edges = _normalize_edges(edges)
    if not edges:
        raise ValueError("graph has no edges")
    nodes = sorted({v for e in edges for v in e})
    if not is_connected(nodes, edges):
        raise ValueError("graph is not connected")
    h = -np.outer(PSI_MINUS, PSI_MINUS.conj())
    return LocalHamiltonian(SiteSystem(nodes), tuple(_pair_term(h, e) for e in edges))


def build_ghz_hyper(l: int) -> LocalHamiltonian:
    """``-|GHZ_l><GHZ_l|`` on hyperedges ``1..l`` and ``l..2l-1``."""
    if l < 2:
        raise ValueError("l must be >= 2")
    g = ghz_vector(l)
    h = -np.outer(g, g.conj())
    system = SiteSystem(range(1, 2 * l))
    e = HermitianOperator(h, list(range(1, l + 1)))
    f = HermitianOperator(h, list(range(l, 2 * l)))
    return LocalHamiltonian(system, (e, f))


@dataclass(frozen=True)
class TIChainTerm:
    """Nearest-neighbour term ``h`` of a translation-invariant chain."""

    h: HermitianOperator
    local_dim: int = 2
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.h.system.local_dims != (self.local_dim, self.local_dim):
            raise ValueError("term must act on two sites of dimension local_dim")

    @classmethod
    def from_matrix(cls, mat, local_dim: int = 2, label: str = "") -> "TIChainTerm":
        return cls(HermitianOperator(mat, [1, 2], local_dim), local_dim, label)

    @property
    def matrix(self) -> np.ndarray:
        return self.h.entries


def build_xxz(delta: float) -> TIChainTerm:
    """``h = -XX - YY - delta ZZ``; ``delta = 0`` is the XY chain."""
    h = -(np.kron(SX, SX) + np.kron(SY, SY) + delta * np.kron(SZ, SZ))
    return TIChainTerm.from_matrix(h, 2, label=f"xxz(delta={delta:g})")


# --------------------------------------------------------------------------- #
# Rings and exact diagonalization
# --------------------------------------------------------------------------- #


def ring_hamiltonian(term: TIChainTerm, m: int) -> LocalHamiltonian:
    """Periodic ring of ``m`` sites (labelled 1..m) with ``term`` on each bond."""
    if m < 2:
        raise ValueError("ring needs at least 2 sites")
    d = term.local_dim
    terms = [HermitianOperator(term.matrix, [i, i % m + 1], d) for i in range(1, m + 1)]
    return LocalHamiltonian(SiteSystem(range(1, m + 1), d), tuple(terms))


def ring_operator(term: TIChainTerm, m: int) -> spla.LinearOperator:
    """Matrix-free periodic-ring Hamiltonian, usable beyond the dense budget."""
    d = term.local_dim
    h = term.matrix
    dtype = float if np.allclose(h.imag, 0) else complex
    h = h.real.astype(float) if dtype is float else h
    n = d**m

    def matvec(v):
        v = np.asarray(v, dtype=dtype).reshape(-1)
        out = np.zeros_like(v)
        for i in range(m - 1):
            v3 = v.reshape(d**i, d * d, d ** (m - i - 2))
            out += np.matmul(h, v3).reshape(-1)
        # bond (m, 1): first leg of h is the last site
        v3 = v.reshape(d, d ** (m - 2), d).transpose(1, 2, 0).reshape(d ** (m - 2), d * d)
        w = (v3 @ h.T).reshape(d ** (m - 2), d, d).transpose(2, 0, 1)
        out += w.reshape(-1)
        return out

    return spla.LinearOperator((n, n), matvec=matvec, dtype=dtype)


@functools.lru_cache(maxsize=64)
def _ring_ground(key: bytes, shape: tuple, dtype: str, d: int, m: int):
    h = np.frombuffer(key, dtype=dtype).reshape(shape)
    term = TIChainTerm.from_matrix(h, d)
    if d**m <= 256:
        w, v = np.linalg.eigh(ring_hamiltonian(term, m).to_dense().entries)
        return float(w[0]), v[:, 0]
    return lanczos_min(ring_operator(term, m), tol=1e-8)


def ring_ground_state(term: TIChainTerm, m: int) -> tuple[float, np.ndarray]:
    """Ground energy and a ground vector of the periodic ring."""
    h = np.ascontiguousarray(term.matrix)
    e, v = _ring_ground(h.tobytes(), h.shape, h.dtype.str, term.local_dim, m)
    return e, v.copy()


def ti_ground_energy_density(term: TIChainTerm, m: int) -> float:
    """``lambda_min(H_ring(m)) / m`` with periodic boundary conditions."""
    if not 2 <= m <= 24:
        raise ValueError("ring size must be in [2, 24]")
    return ring_ground_state(term, m)[0] / m


def extrapolate_energy_density(term: TIChainTerm, sizes: Sequence[int] = (12, 16, 20),
                               powers: Sequence[int] = (2, 4)) -> float:
    """Infinite-chain energy density from finite rings.

    Fits ``e(m) = e_inf + sum_k c_k / m**k`` over ``powers`` exactly
    (least squares if there are more sizes than unknowns) and returns
    ``e_inf``. Gapless periodic chains approach the limit as ``1/m**2``,
    hence the default. This is an estimate, not an exact value.
    """
    sizes = list(sizes)
    if len(sizes) < len(powers) + 1:
        raise ValueError("need more ring sizes than fitted powers")
    e = np.array([ti_ground_energy_density(term, m) for m in sizes])
    a = np.array([[1.0] + [1.0 / m**k for k in powers] for m in sizes])
    return float(np.linalg.lstsq(a, e, rcond=None)[0][0])


def xy_ring_energy(m: int) -> float:
    """Exact ground energy of the periodic XY ring ``-sum XX + YY`` by free fermions.

    After a Jordan-Wigner transform the ring is a hopping model with
    single-particle energies ``-4 cos k``; the fermion parity fixes
    periodic (odd particle number) or antiperiodic (even) momenta.
    """
    best = math.inf
    for parity in (0, 1):
        shift = 0.0 if parity == 1 else 0.5
        eps = sorted(-4.0 * math.cos(2 * math.pi * (j + shift) / m) for j in range(m))
        for count in range(m + 1):
            if count % 2 != parity:
                continue
            best = min(best, sum(eps[:count]))
    return best


def gibbs_free_energy(energies: np.ndarray, temperature: float) -> float:
    """``min_rho Tr[H rho] - T S(rho)`` with entropy in bits, from the spectrum of H."""
    e = np.asarray(energies, dtype=float)
    if temperature == 0:
        return float(e.min())
    x = -(e - e.min()) / temperature
    return float(e.min() - temperature * np.log2(np.sum(np.exp2(x))))


# --------------------------------------------------------------------------- #
# Marginal families separating weak monotonicity from MED
# --------------------------------------------------------------------------- #


def binary_entropy(p: float) -> float:
    return entropy_of_spectrum(np.array([p, 1.0 - p]))


def werner_state(lam: float) -> np.ndarray:
    """``lam |psi-><psi-| + (1 - lam) I/4``."""
    return lam * np.outer(PSI_MINUS, PSI_MINUS.conj()) + (1 - lam) * np.eye(4) / 4


@dataclass(frozen=True)
class MarginalAssignment:
    """Two-body marginals ``rho_ij`` for ``i < j``, keyed by site pair."""

    n: int
    marginals: dict
    lam: float

    def __getitem__(self, pair) -> DensityMatrix:
        i, j = pair
        if i < j:
            return self.marginals[(i, j)]
        m = self.marginals[(j, i)]
        return DensityMatrix(m.entries, m.system)

    def pairs(self):
        return sorted(self.marginals)

    def entropy(self, sites) -> float:
        """Entropy in bits of the one- or two-site marginal on ``sites``."""
        from .quantum import partial_trace, von_neumann_entropy

        sites = sorted(set(sites))
        if len(sites) == 2:
            return von_neumann_entropy(self.marginals[tuple(sites)])
        (s,) = sites
        other = 1 if s != 1 else 2
        pair = tuple(sorted((s, other)))
        return von_neumann_entropy(partial_trace(self.marginals[pair], [s]))

    def conditional(self, a: int, b: int | None) -> float:
        if b is None:
            return self.entropy([a])
        return self.entropy([a, b]) - self.entropy([b])

    def med_sum(self, plan) -> float:
        """``sum_i S(i | shield_i)`` along a plan whose shields have at most one site."""
        total = 0.0
        for s in plan.order:
            shield = plan.shields[s]
            if len(shield) > 1:
                raise ValueError("two-body marginals only support shields of size <= 1")
            total += self.conditional(s, shield[0] if shield else None)
        return total

    def consistency_residual(self) -> float:
        """Largest mismatch between one-site marginals computed from different pairs."""
        from .quantum import partial_trace

        worst = 0.0
        for s in range(1, self.n + 1):
            refs = [partial_trace(m, [s]).entries for p, m in self.marginals.items() if s in p]
            for r in refs[1:]:
                worst = max(worst, float(np.abs(r - refs[0]).max()))
        return worst


def _wm_not_med_pairs(lam: float, n: int) -> dict:
    psi = np.outer(PSI_MINUS, PSI_MINUS.conj())
    ket0 = np.diag([1.0, 0.0])
    rho_1i = lam * psi + (1 - lam) * np.kron(np.eye(2) / 2, ket0)
    single = lam * np.eye(2) / 2 + (1 - lam) * ket0
    rho_ij = np.kron(single, single)
    out = {}
    for i, j in itertools.combinations(range(1, n + 1), 2):
        mat = rho_1i if i == 1 else rho_ij
        out[(i, j)] = DensityMatrix(mat, [i, j])
    return out


def solve_wm_not_med_lambda(tol: float = 1e-10) -> float:
    """Root in (0, 1) of ``2 S(1i) - 2 h(1 - lam/2)``, where ``S(1|i) + S(1|j) = 0``."""

    def f(lam):
        w = np.linalg.eigvalsh(_wm_not_med_pairs(lam, 2)[(1, 2)].entries)
        return 2 * entropy_of_spectrum(w) - 2 * binary_entropy(1 - lam / 2)

    return float(so.bisect(f, 1e-9, 1 - 1e-9, xtol=tol))


def build_wm_not_med_marginals(lam: float | None = None, n: int = 8) -> MarginalAssignment:
    """Locally consistent two-body marginals that pass weak monotonicity but fail MED.

    Site 1 shares a noisy singlet with every other site; all other pairs
    are product states. With ``lam=None`` the mixing parameter is solved
    so that ``S(1|i) + S(1|j) = 0``.
    """
    if n < 3:
        raise ValueError("n must be >= 3")
    if lam is None:
        lam = solve_wm_not_med_lambda()
    if not 0 < lam < 1:
        raise ValueError("lam must lie in (0, 1)")
    return MarginalAssignment(n, _wm_not_med_pairs(lam, n), lam)


def build_med_not_wm_marginals(target: float = -0.25, tol: float = 1e-10) -> MarginalAssignment:
    """Three identical Werner marginals with ``S(i|j) = target`` (default -1/4).

    They satisfy every three-site MED inequality and violate weak
    monotonicity whenever ``-1/2 <= target < 0``.
    """

    def f(lam):
        return entropy_of_spectrum(np.linalg.eigvalsh(werner_state(lam))) - 1.0 - target

    lam = float(so.bisect(f, 0.0, 1.0, xtol=tol))
    rho = werner_state(lam)
    marginals = {p: DensityMatrix(rho, list(p)) for p in itertools.combinations((1, 2, 3), 2)}
    return MarginalAssignment(3, marginals, lam)
