"""Builders for marginal relaxations with and without entropy constraints.

A :class:`RelaxationSpec` is a list of density-matrix variables, each on a
small set of sites, tied together by partial-trace consistency
constraints. Entropy constraints are conical combinations of conditional
entropies of those variables, required to be nonnegative. The objective is
linear (``sum_v Tr[h_v rho_v]``) plus an optional concave part
``-sum c S(A|B)`` used for free-energy bounds.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .hamiltonians import LocalHamiltonian, TIChainTerm, SX, SY, SZ
from .quantum import Bipartition, HermitianOperator, SiteSystem

__all__ = [
    "SCHEMA",
    "Variable",
    "Consistency",
    "EntropyTerm",
    "EntropyConstraint",
    "ObjectiveTerm",
    "RelaxationSpec",
    "MarkovShieldPlan",
    "build_loc",
    "loc_supports",
    "build_loc_for",
    "build_wm",
    "wm_triples",
    "build_med_constraints",
    "build_loc_ti",
    "build_wm_ti",
    "build_med_free_energy",
    "with_objective",
    "slice_functional",
    "slice_support_scan",
]

SCHEMA = "entrobound-spec-v1"
DEFAULT_TRIPLE_CAP = 5000

Sites = tuple[int, ...]


def _sites(s: Iterable[int]) -> Sites:
    return tuple(sorted(int(x) for x in s))


@dataclass(frozen=True)
class Variable:
    label: str
    support: Sites

    def __post_init__(self):
        object.__setattr__(self, "support", _sites(self.support))
        if not self.support:
            raise ValueError("variable with empty support")


@dataclass(frozen=True)
class Consistency:
    """``Tr_{rest}(rho_left)`` on ``left_sites`` equals ``Tr_{rest}(rho_right)`` on ``right_sites``.

    The site lists are matched position by position, which lets one
    variable be compared with a shifted copy of itself.
    """

    left: str
    left_sites: Sites
    right: str
    right_sites: Sites

    def __post_init__(self):
        object.__setattr__(self, "left_sites", tuple(int(s) for s in self.left_sites))
        object.__setattr__(self, "right_sites", tuple(int(s) for s in self.right_sites))
        if len(self.left_sites) != len(self.right_sites) or not self.left_sites:
            raise ValueError("consistency maps must target nonempty sets of equal size")


@dataclass(frozen=True)
class EntropyTerm:
    label: str
    part: Bipartition
    coeff: float = 1.0

    def __post_init__(self):
        if not self.coeff > 0:
            raise ValueError("entropy coefficients must be positive")


@dataclass(frozen=True)
class EntropyConstraint:
    """``sum_k coeff_k S(A_k|B_k) >= 0``."""

    terms: tuple[EntropyTerm, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise ValueError("empty entropy constraint")


@dataclass(frozen=True)
class ObjectiveTerm:
    label: str
    op: HermitianOperator


@dataclass(frozen=True)
class RelaxationSpec:
    """Variables, linear consistency constraints, entropy constraints, objective.

    ``entropy_objective`` terms enter the objective as ``-coeff * S(A|B)``.
    """

    system: SiteSystem
    variables: tuple[Variable, ...]
    consistency: tuple[Consistency, ...] = ()
    entropy_constraints: tuple[EntropyConstraint, ...] = ()
    objective: tuple[ObjectiveTerm, ...] = ()
    entropy_objective: tuple[EntropyTerm, ...] = ()
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for attr in ("variables", "consistency", "entropy_constraints", "objective", "entropy_objective"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        self.validate()

    # ------------------------------------------------------------------ #

    def variable(self, label: str) -> Variable:
        for v in self.variables:
            if v.label == label:
                return v
        raise KeyError(label)

    def variable_system(self, label: str) -> SiteSystem:
        return self.system.subsystem(self.variable(label).support)

    def validate(self) -> None:
        labels = [v.label for v in self.variables]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate variable labels")
        if not self.variables:
            raise ValueError("relaxation has no variables")
        supports = {v.label: set(v.support) for v in self.variables}
        for v in self.variables:
            if not set(v.support) <= self.system.sites:
                raise ValueError(f"variable {v.label} uses sites outside the system")
        for c in self.consistency:
            for lab, sites in ((c.left, c.left_sites), (c.right, c.right_sites)):
                if lab not in supports:
                    raise ValueError(f"unknown variable {lab}")
                if not set(sites) <= supports[lab]:
                    raise ValueError(f"partial trace of {lab} targets sites outside its support")
            ldims = [self.system.local_dims[p] for p in self.system.positions(c.left_sites)]
            rdims = [self.system.local_dims[p] for p in self.system.positions(c.right_sites)]
            if ldims != rdims:
                raise ValueError("consistency between legs of different dimension")
        terms = [t for ec in self.entropy_constraints for t in ec.terms] + list(self.entropy_objective)
        for t in terms:
            if t.label not in supports:
                raise ValueError(f"unknown variable {t.label}")
            if not t.part.sites <= supports[t.label]:
                raise ValueError(f"{t.part} is not inside variable {t.label}")
        for o in self.objective:
            if o.label not in supports:
                raise ValueError(f"unknown variable {o.label}")
            if not set(o.op.sites) <= supports[o.label]:
                raise ValueError(f"objective term on {o.op.sites} outside variable {o.label}")

    # ------------------------------------------------------------------ #

    def objective_value(self, marginals: dict) -> float:
        """Objective at marginals given as ``{label: HermitianOperator}``."""
        from .quantum import conditional_entropy, partial_trace

        val = 0.0
        for o in self.objective:
            rho = partial_trace(marginals[o.label], o.op.sites)
            val += o.op.expectation(rho)
        for t in self.entropy_objective:
            rho = partial_trace(marginals[t.label], t.part.sites)
            val -= t.coeff * conditional_entropy(rho, t.part)
        return val

    def entropy_slacks(self, marginals: dict) -> list[float]:
        from .quantum import conditional_entropy, partial_trace

        out = []
        for ec in self.entropy_constraints:
            s = 0.0
            for t in ec.terms:
                s += t.coeff * conditional_entropy(partial_trace(marginals[t.label], t.part.sites), t.part)
            out.append(s)
        return out

    def consistency_residual(self, marginals: dict) -> float:
        from .quantum import ptrace

        worst = 0.0
        for c in self.consistency:
            ls = self.variable_system(c.left)
            rs = self.variable_system(c.right)
            a = ptrace(marginals[c.left].entries, ls.local_dims, ls.positions(c.left_sites))
            b = ptrace(marginals[c.right].entries, rs.local_dims, rs.positions(c.right_sites))
            worst = max(worst, float(np.abs(a - b).max()))
        return worst

    # ------------------------------------------------------------------ #

    def to_dict(self) -> dict:
        def op_json(op: HermitianOperator):
            return {
                "sites": list(op.sites),
                "dims": list(op.system.local_dims),
                "matrix": [[[float(z.real), float(z.imag)] for z in row] for row in op.entries],
            }

        def term_json(t: EntropyTerm):
            return {"label": t.label, "a": sorted(t.part.part_a), "b": sorted(t.part.part_b), "coeff": t.coeff}

        return {
            "schema": SCHEMA,
            "name": self.name,
            "system": {"sites": list(self.system.site_ids), "dims": list(self.system.local_dims)},
            "variables": [{"label": v.label, "support": list(v.support)} for v in self.variables],
            "consistency": [
                {"left": c.left, "left_sites": list(c.left_sites), "right": c.right, "right_sites": list(c.right_sites)}
                for c in self.consistency
            ],
            "entropy_constraints": [
                {"name": ec.name, "terms": [term_json(t) for t in ec.terms]} for ec in self.entropy_constraints
            ],
            "objective": [{"label": o.label, "op": op_json(o.op)} for o in self.objective],
            "entropy_objective": [term_json(t) for t in self.entropy_objective],
            "meta": self.meta,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "RelaxationSpec":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported schema {d.get('schema')!r}")

        def op_from(o):
            m = np.array([[complex(re, im) for re, im in row] for row in o["matrix"]])
            return HermitianOperator(m, o["sites"], o["dims"])

        def term_from(t):
            return EntropyTerm(t["label"], Bipartition(t["a"], t["b"]), float(t["coeff"]))

        return cls(
            system=SiteSystem(d["system"]["sites"], d["system"]["dims"]),
            variables=[Variable(v["label"], v["support"]) for v in d["variables"]],
            consistency=[Consistency(c["left"], c["left_sites"], c["right"], c["right_sites"]) for c in d["consistency"]],
            entropy_constraints=[
                EntropyConstraint([term_from(t) for t in ec["terms"]], ec.get("name", ""))
                for ec in d["entropy_constraints"]
            ],
            objective=[ObjectiveTerm(o["label"], op_from(o["op"])) for o in d["objective"]],
            entropy_objective=[term_from(t) for t in d.get("entropy_objective", [])],
            name=d.get("name", ""),
            meta=d.get("meta", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> "RelaxationSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class MarkovShieldPlan:
    """Site order and, per site, a shield drawn from the sites before it."""

    order: tuple[int, ...]
    shields: dict

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(int(s) for s in self.order))
        if len(set(self.order)) != len(self.order):
            raise ValueError("order must be a permutation")
        shields = {int(k): _sites(v) for k, v in dict(self.shields).items()}
        seen: set[int] = set()
        for s in self.order:
            sh = shields.setdefault(s, ())
            if not set(sh) <= seen:
                raise ValueError(f"shield {sh} of site {s} contains sites not preceding it")
            seen.add(s)
        extra = set(shields) - set(self.order)
        if extra:
            raise ValueError(f"shields given for sites not in the order: {sorted(extra)}")
        object.__setattr__(self, "shields", shields)

    @classmethod
    def previous(cls, order: Sequence[int], width: int = 1) -> "MarkovShieldPlan":
        """Shield each site by the ``width`` sites immediately preceding it."""
        order = list(order)
        return cls(order, {s: order[max(0, i - width) : i] for i, s in enumerate(order)})

    @classmethod
    def constant(cls, order: Sequence[int], shield: Sequence[int]) -> "MarkovShieldPlan":
        """Same shield for every site after it (sites inside the shield get their predecessors in it)."""
        order = list(order)
        shield = list(shield)
        out = {}
        for i, s in enumerate(order):
            before = set(order[:i])
            out[s] = [x for x in shield if x in before and x != s]
        return cls(order, out)

    @property
    def width(self) -> int:
        return max((len(v) for v in self.shields.values()), default=0) + 1


# --------------------------------------------------------------------------- #
# Local consistency
# --------------------------------------------------------------------------- #


def _containing(variables: Sequence[Variable], sites: Iterable[int]) -> Variable | None:
    sites = set(sites)
    for v in variables:
        if sites <= set(v.support):
            return v
    return None


def _label(support: Sites) -> str:
    return "rho_" + "_".join(map(str, support))


def loc_supports(sites: Sequence[int], l: int, edges: Sequence[Sequence[int]] | None = None,
                 mode: str = "all") -> list[Sites]:
    """Candidate variable supports for a size-``l`` local relaxation.

    ``mode="all"`` takes every ``l``-subset of ``sites``; ``"connected"``
    keeps only those inducing a connected subgraph of ``edges``;
    ``"edges"`` uses the edge set itself (the two-body variant).
    """
    sites = sorted(sites)
    if mode == "edges":
        if edges is None:
            raise ValueError("edge mode needs edges")
        return [_sites(e) for e in edges]
    subsets = [tuple(c) for c in itertools.combinations(sites, min(l, len(sites)))]
    if mode == "all":
        return subsets
    if mode != "connected":
        raise ValueError(f"unknown mode {mode!r}")
    from .hamiltonians import is_connected

    edges = [tuple(e) for e in (edges or [])]
    return [s for s in subsets if is_connected(s, [e for e in edges if set(e) <= set(s)])]


def build_loc(system: SiteSystem, supports: Iterable[Iterable[int]], objective: Iterable[HermitianOperator],
              name: str = "loc") -> RelaxationSpec:
    """Variables on ``supports`` with pairwise consistency on every intersection.

    Each objective term is assigned to the first variable whose support
    contains it.
    """
    supports = list(dict.fromkeys(_sites(s) for s in supports))
    variables = [Variable(_label(s), s) for s in supports]
    consistency = []
    for a, b in itertools.combinations(variables, 2):
        common = _sites(set(a.support) & set(b.support))
        if common:
            consistency.append(Consistency(a.label, common, b.label, common))
    terms = []
    for op in objective:
        v = _containing(variables, op.sites)
        if v is None:
            raise ValueError(f"objective term on {op.sites} is not covered by any variable")
        terms.append(ObjectiveTerm(v.label, op))
    return RelaxationSpec(system, variables, consistency, (), terms, name=name)


def build_loc_for(ham: LocalHamiltonian, l: int | None = None, mode: str = "all",
                  supports: Iterable[Iterable[int]] | None = None) -> RelaxationSpec:
    """Convenience wrapper: a local relaxation of ``ham``.

    With ``l=None`` the variables are the term supports themselves.
    """
    if supports is None:
        if l is None:
            supports = ham.supports
        else:
            edges = [s for s in ham.supports if len(s) == 2]
            supports = loc_supports(ham.system.site_ids, l, edges, mode)
    level = l if l is not None else max(len(s) for s in ham.supports)
    return build_loc(ham.system, supports, ham.terms, name=f"loc{level}")


# --------------------------------------------------------------------------- #
# Weak monotonicity
# --------------------------------------------------------------------------- #


def wm_triples(spec: RelaxationSpec, l: int, sizes: str = "all",
               cap: int = DEFAULT_TRIPLE_CAP) -> list[tuple[int, Sites, Sites]]:
    """Admissible ``(a, B, C)`` with ``aB`` and ``aC`` each inside one variable.

    ``sizes="all"`` allows ``1 <= |B|, |C| <= l - 1``; ``"max"`` only
    ``l - 1``. Unordered in ``(B, C)``; lexicographic; at most ``cap``.
    """
    sites = sorted(spec.system.site_ids)
    allowed = range(1, l) if sizes == "all" else [l - 1]
    out = []
    for a in sites:
        cands = []
        for k in allowed:
            for b in itertools.combinations([s for s in sites if s != a], k):
                if _containing(spec.variables, (a,) + b) is not None:
                    cands.append(tuple(b))
        for b, c in itertools.combinations(sorted(cands), 2):
            if set(b) & set(c):
                continue
            out.append((a, b, c))
            if len(out) >= cap:
                return out
    return out


def build_wm(base: RelaxationSpec, l: int, triples: Iterable[tuple[int, Iterable[int], Iterable[int]]] | None = None,
             sizes: str = "all", cap: int = DEFAULT_TRIPLE_CAP) -> RelaxationSpec:
    """Add ``S(a|B) + S(a|C) >= 0`` for single sites ``a``.

    ``triples`` overrides the automatic enumeration with a hand-picked
    list, e.g. one adapted to the symmetry of a problem.
    """
    if triples is None:
        triples = wm_triples(base, l, sizes, cap)
    seen = set()
    new = []
    for a, b, c in triples:
        b, c = _sites(b), _sites(c)
        key = (a, min(b, c), max(b, c))
        if key in seen:
            continue
        seen.add(key)
        if a in b or a in c or set(b) & set(c):
            raise ValueError(f"triple {(a, b, c)} is not disjoint")
        terms = []
        for cond in (b, c):
            v = _containing(base.variables, (a,) + cond)
            if v is None:
                raise ValueError(f"sites {(a,) + cond} are not inside a single variable")
            terms.append(EntropyTerm(v.label, Bipartition([a], cond)))
        new.append(EntropyConstraint(terms, name=f"wm({a}|{','.join(map(str, b))};{','.join(map(str, c))})"))
    return replace(base, entropy_constraints=base.entropy_constraints + tuple(new), name=f"wm{l}")


# --------------------------------------------------------------------------- #
# Markov entropy decomposition
# --------------------------------------------------------------------------- #


def _med_terms(base: RelaxationSpec, plan: MarkovShieldPlan, k: int, coeff: float) -> list[EntropyTerm]:
    terms = []
    for s in plan.order[:k]:
        shield = plan.shields[s]
        v = _containing(base.variables, (s,) + tuple(shield))
        if v is None:
            raise ValueError(f"site {s} with shield {shield} is not covered by a variable")
        terms.append(EntropyTerm(v.label, Bipartition([s], shield), coeff))
    return terms


def build_med_constraints(base: RelaxationSpec, plan: MarkovShieldPlan, k: int | None = None) -> RelaxationSpec:
    """Add the single inequality ``sum_{i <= k} S(i | shield_i) >= 0``."""
    k = len(plan.order) if k is None else k
    if not 1 <= k <= len(plan.order):
        raise ValueError("k out of range")
    ec = EntropyConstraint(_med_terms(base, plan, k, 1.0), name=f"med(k={k})")
    return replace(base, entropy_constraints=base.entropy_constraints + (ec,), name=base.name + "+med")


def build_med_free_energy(base: RelaxationSpec, plan: MarkovShieldPlan, temperature: float) -> RelaxationSpec:
    """Objective ``sum Tr[h rho] - T sum_i S(i | shield_i)``; its minimum lower-bounds F(T)."""
    if temperature < 0:
        raise ValueError("temperature must be nonnegative")
    if set(plan.order) != set(base.system.site_ids):
        raise ValueError("the plan must order every site of the system")
    terms = _med_terms(base, plan, len(plan.order), temperature) if temperature > 0 else []
    meta = dict(base.meta, temperature=temperature)
    return replace(base, entropy_objective=tuple(terms), name=base.name + f"+medT({temperature:g})", meta=meta)


# --------------------------------------------------------------------------- #
# Translation-invariant chains
# --------------------------------------------------------------------------- #


def build_loc_ti(l: int, d: int = 2, term: TIChainTerm | None = None) -> RelaxationSpec:
    """One variable on sites 1..l with ``Tr_1 rho = Tr_l rho``; objective ``Tr[h rho_12]``."""
    if l < 2:
        raise ValueError("l must be >= 2")
    if term is not None and term.local_dim != d:
        d = term.local_dim
    system = SiteSystem(range(1, l + 1), d)
    var = Variable("rho", tuple(range(1, l + 1)))
    shift = Consistency("rho", tuple(range(2, l + 1)), "rho", tuple(range(1, l)))
    objective = ()
    if term is not None:
        objective = (ObjectiveTerm("rho", HermitianOperator(term.matrix, [1, 2], d)),)
    return RelaxationSpec(system, (var,), (shift,), (), objective, name=f"loc-ti{l}",
                          meta={"ti_level": l, "term": term.label if term is not None else ""})


def build_wm_ti(l: int, d: int = 2, term: TIChainTerm | None = None) -> RelaxationSpec:
    """:func:`build_loc_ti` plus ``S(l | 1..l-1) >= 0``."""
    base = build_loc_ti(l, d, term)
    ec = EntropyConstraint([EntropyTerm("rho", Bipartition([l], range(1, l)))], name=f"S({l}|1..{l - 1})")
    return replace(base, entropy_constraints=(ec,), name=f"wm-ti{l}")


def with_objective(spec: RelaxationSpec, ops: Iterable[HermitianOperator], name: str | None = None) -> RelaxationSpec:
    """Same constraints, new linear objective (entropy objective dropped)."""
    terms = []
    for op in ops:
        v = _containing(spec.variables, op.sites)
        if v is None:
            raise ValueError(f"objective term on {op.sites} is not covered by any variable")
        terms.append(ObjectiveTerm(v.label, op))
    return replace(spec, objective=tuple(terms), entropy_objective=(), name=name or spec.name)


# --------------------------------------------------------------------------- #
# Two-dimensional slice of XXZ-symmetric marginals
# --------------------------------------------------------------------------- #

XY_CORR = 0.5 * (np.kron(SX, SX) + np.kron(SY, SY))
ZZ_CORR = np.kron(SZ, SZ)


def slice_functional(theta: float) -> np.ndarray:
    """Two-site operator whose expectation is ``cos(theta) x + sin(theta) z``.

    ``x`` is the symmetrized correlation ``(<XX> + <YY>)/2``, which is the
    coordinate the symmetry twirl projects any two-site state onto.
    """
    return np.cos(theta) * XY_CORR + np.sin(theta) * ZZ_CORR


def slice_support_scan(spec: RelaxationSpec, directions: Sequence[float], config=None, sites=(1, 2)):
    """Support points of the relaxation in the ``(x, z)`` plane.

    For each angle the functional :func:`slice_functional` is maximized
    over the relaxation. Returns dicts with the angle, the achieved
    ``(x, z)`` of the two-site marginal, a certified upper bound
    ``support`` on the support function, and the solver status.
    """
    from .quantum import ptrace
    from .solver import solve

    out = []
    for theta in directions:
        op = HermitianOperator(-slice_functional(theta), list(sites))
        sub = with_objective(spec, [op], name=f"{spec.name}@{theta:.6f}")
        try:
            res = solve(sub, config)
        except Exception as exc:  # noqa: BLE001 - reported per angle
            out.append({"theta": float(theta), "x": float("nan"), "z": float("nan"),
                        "support": float("nan"), "status": f"failed: {exc}"})
            continue
        label = sub.objective[0].label
        vs = sub.variable_system(label)
        rho2 = ptrace(res.marginals[label].entries, vs.local_dims, vs.positions(sites))
        x = float(np.sum(XY_CORR * rho2.T).real)
        z = float(np.sum(ZZ_CORR * rho2.T).real)
        out.append({"theta": float(theta), "x": x, "z": z, "support": -res.lower_bound_certified,
                    "status": res.status})
    return out
