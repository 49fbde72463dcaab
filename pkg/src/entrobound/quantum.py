"""Dense Hermitian linear algebra on small multi-site systems.

Operators are stored as dense matrices over an ordered set of sites. The
canonical leg order is ascending site id; operators built from an
arbitrary site order are permuted into canonical order on construction.

Entropies are reported in bits. The quoted values that this library
reproduces (conditional entropy -1 for a Bell pair, binary entropies)
only make sense in base 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

__all__ = [
    "MAX_DENSE_DIM",
    "EIG_FLOOR",
    "DimensionBudgetError",
    "LanczosError",
    "SiteSystem",
    "HermitianOperator",
    "DensityMatrix",
    "Bipartition",
    "tensor",
    "partial_trace",
    "von_neumann_entropy",
    "conditional_entropy",
    "conditional_entropy_gradient",
    "gibbs_state",
    "min_eigenvalue",
    "ptrace",
    "embed",
    "permute_legs",
    "entropy_of_spectrum",
    "gibbs_matrix",
    "hermitian_log",
]

MAX_DENSE_DIM = 2**14
LANCZOS_THRESHOLD = 2**12
EIG_FLOOR = 1e-12
HERMITICITY_RTOL = 1e-12
PSD_TOL = 1e-10
TRACE_TOL = 1e-10


class DimensionBudgetError(ValueError):
    """Total Hilbert-space dimension exceeds the dense-matrix budget."""


class LanczosError(RuntimeError):
    """Iterative eigensolver failed to converge to the requested residual."""


# --------------------------------------------------------------------------- #
# Array-level kernels. These work on raw ndarrays and are what the solver
# uses in its inner loops.
# --------------------------------------------------------------------------- #


def ptrace(mat: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Partial trace of ``mat`` keeping the legs at positions ``keep``.

    The output legs follow the order given in ``keep``, so this also
    permutes when ``keep`` is not increasing.
    """
    n = len(dims)
    keep = list(keep)
    if len(set(keep)) != len(keep) or any(k < 0 or k >= n for k in keep):
        raise ValueError(f"invalid leg positions {keep} for {n} legs")
    t = mat.reshape(tuple(dims) * 2)
    row = list(range(n))
    col = [n + i for i in range(n)]
    for i in range(n):
        if i not in keep:
            col[i] = row[i]
    out_idx = keep + [n + k for k in keep]
    out = np.einsum(t, row + col, out_idx)
    dk = int(np.prod([dims[k] for k in keep], dtype=np.int64))
    return out.reshape(dk, dk)


def embed(op: np.ndarray, dims: Sequence[int], positions: Sequence[int]) -> np.ndarray:
    """Place ``op`` on the legs ``positions`` of a system with ``dims``.

    This is the adjoint of :func:`ptrace` with the same ``keep``:
    ``Tr[embed(Y) X] == Tr[Y ptrace(X)]``.
    """
    n = len(dims)
    positions = list(positions)
    rest = [i for i in range(n) if i not in positions]
    dk = [dims[p] for p in positions]
    dr = int(np.prod([dims[r] for r in rest], dtype=np.int64))
    full = np.kron(op.reshape(int(np.prod(dk)), -1), np.eye(dr, dtype=op.dtype))
    # legs are currently ordered positions + rest
    order = positions + rest
    return permute_legs(full, [dims[i] for i in order], np.argsort(order))


def permute_legs(mat: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder tensor legs: new leg ``i`` is old leg ``perm[i]``."""
    n = len(dims)
    perm = list(perm)
    if perm == list(range(n)):
        return mat
    t = mat.reshape(tuple(dims) * 2)
    t = t.transpose(perm + [n + p for p in perm])
    d = mat.shape[0]
    return t.reshape(d, d)


def entropy_of_spectrum(evals: np.ndarray) -> float:
    """Shannon entropy in bits of an eigenvalue list, with 0 log 0 = 0."""
    p = np.asarray(evals, dtype=float)
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def hermitian_log(mat: np.ndarray, floor: float = EIG_FLOOR, base: float = 2.0) -> np.ndarray:
    """Matrix logarithm of a PSD matrix with eigenvalues clamped at ``floor``."""
    w, v = np.linalg.eigh(mat)
    lw = np.log(np.maximum(w, floor)) / np.log(base)
    return (v * lw) @ v.conj().T


def gibbs_matrix(k: np.ndarray) -> np.ndarray:
    """``exp(k) / Tr exp(k)`` computed with a max-eigenvalue shift."""
    w, v = np.linalg.eigh(k)
    e = np.exp(w - w[-1])
    e /= e.sum()
    out = (v * e) @ v.conj().T
    return 0.5 * (out + out.conj().T)


# --------------------------------------------------------------------------- #
# Typed values
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class SiteSystem:
    """Ordered sites with their local dimensions.

    Sites are always kept in ascending order; pass them in any order and
    they are sorted together with their dimensions.
    """

    site_ids: tuple[int, ...]
    local_dims: tuple[int, ...]

    def __init__(self, site_ids: Iterable[int], local_dims: Iterable[int] | int = 2):
        ids = tuple(int(s) for s in site_ids)
        if isinstance(local_dims, (int, np.integer)):
            dims = (int(local_dims),) * len(ids)
        else:
            dims = tuple(int(d) for d in local_dims)
        if len(dims) != len(ids):
            raise ValueError("one local dimension per site is required")
        if len(set(ids)) != len(ids):
            raise ValueError(f"site ids must be distinct, got {ids}")
        if any(d < 2 for d in dims):
            raise ValueError(f"local dimensions must be >= 2, got {dims}")
        order = sorted(range(len(ids)), key=ids.__getitem__)
        object.__setattr__(self, "site_ids", tuple(ids[i] for i in order))
        object.__setattr__(self, "local_dims", tuple(dims[i] for i in order))
        if self.dim > MAX_DENSE_DIM:
            raise DimensionBudgetError(
                f"total dimension {self.dim} exceeds dense budget {MAX_DENSE_DIM}"
            )

    @property
    def dim(self) -> int:
        return int(np.prod(self.local_dims, dtype=np.int64))

    @property
    def sites(self) -> frozenset[int]:
        return frozenset(self.site_ids)

    def __len__(self) -> int:
        return len(self.site_ids)

    def positions(self, sites: Iterable[int]) -> list[int]:
        """Leg positions of ``sites`` (in the order given)."""
        index = {s: i for i, s in enumerate(self.site_ids)}
        try:
            return [index[s] for s in sites]
        except KeyError as exc:
            raise ValueError(f"site {exc.args[0]} not in system {self.site_ids}") from None

    def subsystem(self, sites: Iterable[int]) -> "SiteSystem":
        sites = sorted(set(sites))
        pos = self.positions(sites)
        return SiteSystem(sites, [self.local_dims[p] for p in pos])

    def dim_of(self, sites: Iterable[int]) -> int:
        return int(np.prod([self.local_dims[p] for p in self.positions(sites)], dtype=np.int64))


class HermitianOperator:
    """Dense Hermitian matrix acting on a :class:`SiteSystem`.

    Parameters
    ----------
    entries : array_like
        Square matrix, with legs ordered as ``sites``.
    sites : SiteSystem or sequence of int
        Sites the legs refer to. If the ids are not ascending the matrix
        is permuted into canonical order.
    dims : int or sequence of int
        Local dimensions when ``sites`` is a plain sequence.
    """

    __slots__ = ("system", "entries")

    def __init__(self, entries, sites, dims=2):
        if isinstance(sites, SiteSystem):
            raw_ids = list(sites.site_ids)
            raw_dims = list(sites.local_dims)
        else:
            raw_ids = [int(s) for s in sites]
            raw_dims = [int(dims)] * len(raw_ids) if np.isscalar(dims) else [int(d) for d in dims]
        system = SiteSystem(raw_ids, raw_dims)
        m = np.array(entries, dtype=complex)
        if m.shape != (system.dim, system.dim):
            raise ValueError(f"matrix shape {m.shape} does not match dimension {system.dim}")
        scale = float(np.max(np.abs(m))) if m.size else 0.0
        dev = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
        if dev > HERMITICITY_RTOL * max(scale, 1e-300) and dev > 0:
            raise ValueError(f"matrix is not Hermitian (deviation {dev:.3e})")
        m = 0.5 * (m + m.conj().T)
        perm = sorted(range(len(raw_ids)), key=raw_ids.__getitem__)
        m = permute_legs(m, raw_dims, perm)
        m.flags.writeable = False
        object.__setattr__(self, "system", system)
        object.__setattr__(self, "entries", m)

    def __setattr__(self, name, value):
        raise AttributeError("HermitianOperator is immutable")

    @property
    def dim(self) -> int:
        return self.system.dim

    @property
    def sites(self) -> tuple[int, ...]:
        return self.system.site_ids

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    def expectation(self, other: "HermitianOperator") -> float:
        """``Tr[self @ other]`` for operators on the same system."""
        if other.system != self.system:
            raise ValueError("operators act on different systems")
        return float(np.sum(self.entries * other.entries.T).real)

    def __add__(self, other: "HermitianOperator") -> "HermitianOperator":
        if other.system != self.system:
            raise ValueError("operators act on different systems")
        return HermitianOperator(self.entries + other.entries, self.system)

    def __mul__(self, c: float) -> "HermitianOperator":
        return HermitianOperator(float(c) * self.entries, self.system)

    __rmul__ = __mul__

    def __neg__(self) -> "HermitianOperator":
        return self * -1.0

    def extend(self, system: SiteSystem) -> "HermitianOperator":
        """Tensor with the identity on the remaining sites of ``system``."""
        pos = system.positions(self.sites)
        return HermitianOperator(embed(self.entries, system.local_dims, pos), system)

    def __eq__(self, other) -> bool:
        if not isinstance(other, HermitianOperator):
            return NotImplemented
        return self.system == other.system and np.array_equal(self.entries, other.entries)

    def __hash__(self) -> int:
        return hash((self.system, self.entries.tobytes()))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(sites={self.sites}, dim={self.dim})"


class DensityMatrix(HermitianOperator):
    """Positive semidefinite unit-trace operator.

    Eigenvalues down to ``-PSD_TOL`` and a trace within ``TRACE_TOL`` of 1
    are accepted, which is loose enough for projected solver iterates.
    """

    __slots__ = ()

    def __init__(self, entries, sites, dims=2):
        super().__init__(entries, sites, dims)
        tr = np.trace(self.entries).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"trace {tr} is not 1")
        lo = np.linalg.eigvalsh(self.entries)[0]
        if lo < -PSD_TOL:
            raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {lo:.3e})")

    @classmethod
    def from_operator(cls, op: HermitianOperator) -> "DensityMatrix":
        if isinstance(op, DensityMatrix):
            return op
        return cls(op.entries, op.system)

    @classmethod
    def from_vector(cls, psi, sites, dims=2) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex).ravel()
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()), sites, dims)

    @classmethod
    def maximally_mixed(cls, system: SiteSystem) -> "DensityMatrix":
        return cls(np.eye(system.dim) / system.dim, system)


@dataclass(frozen=True)
class Bipartition:
    """Split of a set of sites into a conditioned part A and a conditioning part B."""

    part_a: frozenset[int]
    part_b: frozenset[int]

    def __init__(self, part_a: Iterable[int], part_b: Iterable[int] = ()):
        a = frozenset(int(s) for s in part_a)
        b = frozenset(int(s) for s in part_b)
        if not a:
            raise ValueError("part_a must be nonempty")
        if a & b:
            raise ValueError(f"parts overlap on {sorted(a & b)}")
        object.__setattr__(self, "part_a", a)
        object.__setattr__(self, "part_b", b)

    @property
    def sites(self) -> frozenset[int]:
        return self.part_a | self.part_b

    def __repr__(self) -> str:
        return f"S({','.join(map(str, sorted(self.part_a)))}|{','.join(map(str, sorted(self.part_b)))})"


# --------------------------------------------------------------------------- #
# Operations
# --------------------------------------------------------------------------- #


def tensor(a: HermitianOperator, b: HermitianOperator) -> HermitianOperator:
    """Tensor product of operators on disjoint site sets."""
    overlap = set(a.sites) & set(b.sites)
    if overlap:
        raise ValueError(f"site sets overlap on {sorted(overlap)}")
    ids = list(a.sites) + list(b.sites)
    dims = list(a.system.local_dims) + list(b.system.local_dims)
    return HermitianOperator(np.kron(a.entries, b.entries), ids, dims)


def partial_trace(rho: HermitianOperator, keep: Iterable[int]) -> HermitianOperator:
    """Trace out every site of ``rho`` not in ``keep``."""
    keep = sorted(set(keep))
    missing = set(keep) - set(rho.sites)
    if missing:
        raise ValueError(f"sites {sorted(missing)} are not in {rho.sites}")
    sub = rho.system.subsystem(keep)
    out = ptrace(rho.entries, rho.system.local_dims, rho.system.positions(keep))
    cls = DensityMatrix if isinstance(rho, DensityMatrix) else HermitianOperator
    return cls(out, sub)


def von_neumann_entropy(rho: HermitianOperator) -> float:
    """Von Neumann entropy in bits."""
    w = np.linalg.eigvalsh(rho.entries)
    if w[0] < -PSD_TOL:
        raise ValueError(f"state is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    return entropy_of_spectrum(w)


def _check_partition(rho: HermitianOperator, part: Bipartition) -> None:
    if part.sites != frozenset(rho.sites):
        raise ValueError(f"{part} does not partition sites {rho.sites}")


def conditional_entropy(rho: HermitianOperator, part: Bipartition) -> float:
    """``S(A|B) = S(AB) - S(B)`` in bits."""
    _check_partition(rho, part)
    s_ab = von_neumann_entropy(rho)
    if not part.part_b:
        return s_ab
    return s_ab - von_neumann_entropy(partial_trace(rho, part.part_b))


def conditional_entropy_gradient(
    rho: HermitianOperator,
    part: Bipartition,
    floor: float = EIG_FLOOR,
    clamp: bool = True,
) -> HermitianOperator:
    """Gradient of ``rho -> S(A|B)`` in bits, as an operator on ``rho``'s sites.

    Equal to ``-log2(rho_AB) + I_A (x) log2(rho_B)``. The constant terms of
    the two entropy derivatives cancel, so the result pairs correctly with
    any direction, not just traceless ones; by homogeneity
    ``Tr[G rho] == S(A|B)``.

    Eigenvalues below ``floor`` are clamped to it. Clamping changes each
    entropy by at most ``dim * floor * log2(1/floor)``. With ``clamp=False``
    a state below the floor raises instead.
    """
    _check_partition(rho, part)
    m = rho.entries
    w = np.linalg.eigvalsh(m)
    if w[0] < floor and not clamp:
        raise ValueError(f"state has eigenvalue {w[0]:.3e} below floor {floor}")
    g = -hermitian_log(m, floor)
    if part.part_b:
        rho_b = ptrace(m, rho.system.local_dims, rho.system.positions(sorted(part.part_b)))
        w_b = np.linalg.eigvalsh(rho_b)
        if w_b[0] < floor and not clamp:
            raise ValueError(f"marginal has eigenvalue {w_b[0]:.3e} below floor {floor}")
        g = g + embed(
            hermitian_log(rho_b, floor),
            rho.system.local_dims,
            rho.system.positions(sorted(part.part_b)),
        )
    return HermitianOperator(g, rho.system)


def gibbs_state(k: HermitianOperator) -> DensityMatrix:
    """``exp(k) / Tr exp(k)``, evaluated with the largest eigenvalue shifted to 0."""
    return DensityMatrix(gibbs_matrix(k.entries), k.system)


def min_eigenvalue(h, tol: float = 1e-8, maxiter: int | None = None) -> float:
    """Smallest eigenvalue of a Hermitian operator.

    Dense ``eigvalsh`` up to dimension 4096. Larger inputs (or any
    ``scipy.sparse.linalg.LinearOperator``) go through Lanczos, and the
    result is accepted only if the residual ``||Hv - lambda v||`` is at
    most ``tol``; otherwise :class:`LanczosError` is raised.
    """
    if isinstance(h, HermitianOperator):
        h = h.entries
    if isinstance(h, np.ndarray):
        if h.shape[0] <= LANCZOS_THRESHOLD:
            return dense_min_eigenvalue(h)
        h = spla.aslinearoperator(h.real if not np.any(h.imag) else h)
    return lanczos_min(h, tol=tol, maxiter=maxiter)[0]


def lanczos_min(op, tol: float = 1e-8, maxiter: int | None = None, v0=None):
    """Lowest eigenpair of a Hermitian linear operator with a residual check."""
    n = op.shape[0]
    if v0 is None:
        rng = np.random.default_rng(1234)
        v0 = rng.standard_normal(n).astype(op.dtype)
    maxiter = maxiter or max(1000, 20 * int(np.log2(n) + 1))
    try:
        w, v = spla.eigsh(op, k=1, which="SA", tol=tol * 1e-3, maxiter=maxiter, v0=v0, ncv=24)
    except spla.ArpackNoConvergence as exc:
        raise LanczosError(f"Lanczos did not converge in {maxiter} iterations") from exc
    lam = float(w[0])
    vec = v[:, 0]
    vec = vec / np.linalg.norm(vec)
    resid = float(np.linalg.norm(op.matvec(vec) - lam * vec))
    if resid > tol * max(1.0, abs(lam)):
        raise LanczosError(f"Lanczos residual {resid:.2e} exceeds tolerance {tol:.1e}")
    return lam, vec


def dense_min_eigenvalue(mat: np.ndarray) -> float:
    if np.iscomplexobj(mat) and not np.any(mat.imag):
        mat = mat.real
    if mat.shape[0] <= 64:
        return float(np.linalg.eigvalsh(mat)[0])
    return float(sla.eigh(mat, eigvals_only=True, subset_by_index=[0, 0], driver="evr")[0])
