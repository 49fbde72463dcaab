"""Dual solver for :class:`~entrobound.relaxations.RelaxationSpec` instances.

Consistency constraints are dualized with Hermitian multipliers ``y`` and
each entropy constraint with a temperature ``T_c >= 0``. For fixed duals
the Lagrangian splits into one small problem per variable,

    min_rho  Tr[X_v rho] - sum_j w_j S(A_j|B_j)_rho,

with ``X_v = h_v + A_v^*(y)``. Its value, and hence a lower bound on the
relaxation, is computed exactly from any positive definite hint
``rho_hat`` by the tangent inequality for the concave, degree-1
homogeneous conditional entropy:

    S(A|B)_rho <= Tr[grad S(rho_hat) rho]  for every rho >= 0,

so ``lambda_min(X_v - sum_j w_j grad S_j(rho_hat))`` bounds the
subproblem from below no matter how good the hint is.

The default method maximizes an entropy-smoothed dual with L-BFGS-B while
the smoothing weight ``mu`` is driven to zero. Each smoothed subproblem is
a fixed point ``rho = gibbs((-X + sum_j w_j I (x) log rho_Bj) / W)``
solved by Anderson-accelerated iteration. A primal-dual hybrid gradient
method with entropic mirror steps is available as ``method="pdhg"``.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.optimize as so

from .quantum import DensityMatrix, HermitianOperator, embed, gibbs_matrix, ptrace
from .relaxations import (
    Consistency,
    EntropyTerm,
    MarkovShieldPlan,
    RelaxationSpec,
    build_med_free_energy,
)

__all__ = [
    "SolverConfig",
    "Duals",
    "SolverResult",
    "SolverDivergence",
    "solve",
    "certify",
    "med_temperature_sweep",
]

LN2 = math.log(2.0)
EPS = np.finfo(float).eps


class SolverDivergence(FloatingPointError):
    """Non-finite iterate or runaway multipliers (usually an infeasible spec)."""


@dataclass(frozen=True)
class SolverConfig:
    """Solver parameters.

    ``method`` is ``"smoothed"`` (default) or ``"pdhg"``.
    ``temperature_search`` is ``"joint"`` (temperatures optimized together
    with ``y``) or ``"golden"`` (golden-section over ``log T`` on
    ``[t_min, t_max]`` with ``t_evals`` evaluations, single entropy
    constraint only).
    ``step_primal`` / ``step_dual`` of ``None`` mean ``0.9 / ||K||`` with
    ``||K||`` from ``power_iters`` power iterations.
    """

    method: str = "smoothed"
    max_iters: int = 3000
    primal_tol: float = 1e-3
    dual_tol: float = 1e-7
    gap_tol: float = 1e-3
    mu_schedule: tuple = (1e-1, 1e-2, 1e-3, 1e-4, 3e-5)
    ftol_factor: float = 1e-4
    lbfgs_memory: int = 30
    inner_tol: float = 1e-10
    inner_max_iters: int = 2000
    anderson_depth: int = 6
    step_primal: float | None = None
    step_dual: float | None = None
    power_iters: int = 50
    temperature_search: str = "joint"
    t_min: float = 1e-3
    t_max: float = 10.0
    t_evals: int = 24
    eig_floor: float = 1e-12
    seed: int = 0
    real_duals: bool | None = None
    divergence_bound: float = 1e8
    trace_path: str | None = None

    def __post_init__(self):
        if self.method not in ("smoothed", "pdhg"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.temperature_search not in ("joint", "golden"):
            raise ValueError(f"unknown temperature search {self.temperature_search!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not 0 < self.t_min < self.t_max:
            raise ValueError("need 0 < t_min < t_max")
        for s in (self.step_primal, self.step_dual):
            if s is not None and s <= 0:
                raise ValueError("step sizes must be positive")
        object.__setattr__(self, "mu_schedule", tuple(float(m) for m in self.mu_schedule))
        if not self.mu_schedule or min(self.mu_schedule) <= 0:
            raise ValueError("mu_schedule must hold positive values")

    def to_dict(self) -> dict:
        from dataclasses import asdict

        d = asdict(self)
        d["mu_schedule"] = list(self.mu_schedule)
        return d


@dataclass
class Duals:
    """Multipliers for the compiled problem.

    ``y`` holds one matrix per consistency constraint, first those of the
    spec in order, then the internal ones added when an entropy term lives
    on part of a variable. ``t`` holds one temperature per entropy
    constraint. ``hints`` maps compiled variable labels to the states the
    certificate linearizes at.
    """

    y: list
    t: np.ndarray
    hints: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)


@dataclass
class SolverResult:
    lower_bound_certified: float
    objective_primal: float
    marginals: dict
    duals: Duals
    residuals: dict
    iters: int
    status: str
    elapsed: float = 0.0
    history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def temperatures(self) -> np.ndarray:
        return self.duals.t

    def summary(self) -> dict:
        return {
            "lower_bound_certified": self.lower_bound_certified,
            "objective_primal": self.objective_primal,
            "status": self.status,
            "iters": self.iters,
            "elapsed": self.elapsed,
            "temperatures": [float(t) for t in self.duals.t],
            "consistency_inf_norm": self.residuals["consistency_inf_norm"],
            "entropy_slacks": list(self.residuals["entropy_slacks"]),
            "gap_estimate": self.residuals["gap_estimate"],
        }


# --------------------------------------------------------------------------- #
# Compilation into arrays
# --------------------------------------------------------------------------- #


@dataclass
class _Term:
    bpos: list  # positions of B inside the variable, empty for S(AB)
    constraint: int  # index into entropy constraints, -1 for the objective part
    coeff: float


@dataclass
class _Var:
    label: str
    dims: list
    h: np.ndarray
    terms: list


class _Problem:
    def __init__(self, spec: RelaxationSpec, real: bool | None = None):
        self.spec = spec
        system = spec.system
        vars_: list[_Var] = []
        index = {}
        for v in spec.variables:
            sub = system.subsystem(v.support)
            d = sub.dim
            h = np.zeros((d, d), dtype=complex)
            index[v.label] = len(vars_)
            vars_.append(_Var(v.label, list(sub.local_dims), h, []))
        for o in spec.objective:
            var = vars_[index[o.label]]
            sub = system.subsystem(spec.variable(o.label).support)
            var.h += embed(o.op.entries, var.dims, sub.positions(o.op.sites))
        cons = [self._cons(spec, index, c) for c in spec.consistency]

        # entropy terms on part of a variable get their own variable
        aux = {}

        def place(t: EntropyTerm, constraint: int, coeff: float):
            support = spec.variable(t.label).support
            sites = tuple(sorted(t.part.sites))
            if sites == support:
                vi = index[t.label]
            else:
                key = (t.label, sites)
                if key not in aux:
                    sub = system.subsystem(sites)
                    aux[key] = len(vars_)
                    label = f"{t.label}[{','.join(map(str, sites))}]"
                    vars_.append(_Var(label, list(sub.local_dims), np.zeros((sub.dim, sub.dim), complex), []))
                    index[label] = aux[key]
                    psub = system.subsystem(support)
                    cons.append((index[t.label], psub.positions(sites), aux[key], list(range(len(sites)))))
                vi = aux[key]
            sub = system.subsystem(sites)
            bpos = sub.positions(sorted(t.part.part_b)) if t.part.part_b else []
            vars_[vi].terms.append(_Term(bpos, constraint, coeff))

        for c, ec in enumerate(spec.entropy_constraints):
            for t in ec.terms:
                place(t, c, t.coeff)
        for t in spec.entropy_objective:
            place(t, -1, t.coeff)

        if real is None:
            real = all(not np.any(v.h.imag) for v in vars_)
        self.real = bool(real)
        dtype = float if self.real else complex
        for v in vars_:
            v.h = v.h.real.copy() if self.real else v.h
        self.dtype = dtype
        self.vars = vars_
        self.index = index
        self.cons = cons
        self.n_spec_cons = len(spec.consistency)
        self.cdims = [int(np.prod([vars_[c[0]].dims[p] for p in c[1]])) for c in cons]
        self.n_t = len(spec.entropy_constraints)
        per = self.cdims
        self.sizes = [n * (n + 1) // 2 if self.real else n * n for n in per]
        self.n_y = sum(self.sizes)

    @staticmethod
    def _cons(spec, index, c: Consistency):
        ls = spec.system.subsystem(spec.variable(c.left).support)
        rs = spec.system.subsystem(spec.variable(c.right).support)
        return (index[c.left], ls.positions(c.left_sites), index[c.right], rs.positions(c.right_sites))

    # -- packing ---------------------------------------------------------------

    def unpack(self, x: np.ndarray):
        ys = []
        o = 0
        for n, k in zip(self.cdims, self.sizes):
            ys.append(_herm_unpack(x[o : o + k], n, self.real))
            o += k
        return ys, np.asarray(x[o:], dtype=float)

    def pack(self, ys, t) -> np.ndarray:
        parts = [_herm_pack(y, self.real) for y in ys]
        return np.concatenate(parts + [np.asarray(t, dtype=float)])

    def pack_grad(self, rs, gt) -> np.ndarray:
        return np.concatenate([_herm_pack_grad(r, self.real) for r in rs] + [np.asarray(gt, dtype=float)])

    # -- Lagrangian pieces -------------------------------------------------------

    def xs(self, ys) -> list:
        xs = [v.h.astype(self.dtype, copy=True) for v in self.vars]
        for (v1, p1, v2, p2), y in zip(self.cons, ys):
            xs[v1] += embed(y, self.vars[v1].dims, p1)
            xs[v2] -= embed(y, self.vars[v2].dims, p2)
        return xs

    def weights(self, t) -> list:
        """Per variable: list of (bpos, w) with w the natural-log weight."""
        out = []
        for v in self.vars:
            ws = []
            for term in v.terms:
                mult = 1.0 if term.constraint < 0 else float(t[term.constraint])
                w = mult * term.coeff / LN2
                if w > 0:
                    ws.append((term.bpos, w))
            out.append(ws)
        return out

    def residuals(self, rhos) -> list:
        return [
            ptrace(rhos[v1], self.vars[v1].dims, p1) - ptrace(rhos[v2], self.vars[v2].dims, p2)
            for v1, p1, v2, p2 in self.cons
        ]

    def constraint_entropies(self, rhos) -> np.ndarray:
        """``E_c`` in bits for every entropy constraint."""
        e = np.zeros(self.n_t)
        for v, rho in zip(self.vars, rhos):
            for term in v.terms:
                if term.constraint >= 0:
                    e[term.constraint] += term.coeff * _cond_entropy_bits(rho, v.dims, term.bpos)
        return e

    def objective_entropy(self, rhos) -> float:
        s = 0.0
        for v, rho in zip(self.vars, rhos):
            for term in v.terms:
                if term.constraint < 0:
                    s += term.coeff * _cond_entropy_bits(rho, v.dims, term.bpos)
        return s

    def norm_estimate(self, iters: int, seed: int) -> float:
        """Operator norm of the consistency map by power iteration on A^*A."""
        if not self.cons:
            return 0.0
        rng = np.random.default_rng(seed)
        rhos = [rng.standard_normal((int(np.prod(v.dims)),) * 2) for v in self.vars]
        rhos = [0.5 * (r + r.T) for r in rhos]
        lam = 0.0
        for _ in range(iters):
            nrm = math.sqrt(sum(float(np.sum(r * r)) for r in rhos))
            rhos = [r / nrm for r in rhos]
            ys = self.residuals(rhos)
            back = [np.zeros_like(r) for r in rhos]
            for (v1, p1, v2, p2), y in zip(self.cons, ys):
                back[v1] = back[v1] + embed(y, self.vars[v1].dims, p1)
                back[v2] = back[v2] - embed(y, self.vars[v2].dims, p2)
            lam = math.sqrt(sum(float(np.sum(b * b)) for b in back))
            rhos = back
        return math.sqrt(lam)


def _herm_unpack(p, n, real):
    iu = np.triu_indices(n)
    k = len(iu[0])
    if real:
        y = np.zeros((n, n))
        y[iu] = p[:k]
        return y + np.triu(y, 1).T
    y = np.zeros((n, n), dtype=complex)
    y[iu] = p[:k]
    iu1 = np.triu_indices(n, 1)
    y[iu1] += 1j * p[k:]
    return y + np.triu(y, 1).conj().T


def _herm_pack(y, real):
    n = y.shape[0]
    iu = np.triu_indices(n)
    if real:
        return np.asarray(y[iu].real, dtype=float)
    iu1 = np.triu_indices(n, 1)
    return np.concatenate([y[iu].real, y[iu1].imag])


def _herm_pack_grad(r, real):
    # d/dp Tr[Y(p) R] for the parametrization in _herm_unpack
    n = r.shape[0]
    g = 2 * r
    np.fill_diagonal(g, np.diag(r))
    iu = np.triu_indices(n)
    if real:
        return np.asarray(g[iu].real, dtype=float)
    iu1 = np.triu_indices(n, 1)
    return np.concatenate([g[iu].real, 2 * r[iu1].imag])


def _logm(a, floor=1e-300):
    w, u = np.linalg.eigh(a)
    return (u * np.log(np.maximum(w, floor))) @ u.conj().T


def _neg_entropy_nat(rho):
    w = np.linalg.eigvalsh(rho)
    w = w[w > 0]
    return float(np.sum(w * np.log(w)))


def _cond_entropy_bits(rho, dims, bpos):
    s = -_neg_entropy_nat(rho)
    if bpos:
        s += _neg_entropy_nat(ptrace(rho, dims, bpos))
    return s / LN2


# --------------------------------------------------------------------------- #
# Smoothed subproblem
# --------------------------------------------------------------------------- #


def _inner(x_v, dims, ws, mu, rho0, tol, maxit, depth):
    """Minimize ``Tr[X rho] + mu Tr[rho ln rho] - sum_j w_j S_nat(A_j|B_j)``.

    Returns the minimizer and the number of fixed-point steps.
    """
    big_w = mu + sum(w for _, w in ws)
    cond = [(b, w) for b, w in ws if b]
    if not cond:
        return gibbs_matrix(-x_v / big_w), 0

    def step(ks):
        k = -x_v.copy()
        for (bpos, w), kb in zip(cond, ks):
            k = k + w * embed(kb, dims, bpos)
        rho = gibbs_matrix(k / big_w)
        return rho, [_logm(ptrace(rho, dims, bpos)) for bpos, _ in cond]

    shapes = [(int(np.prod([dims[p] for p in b])),) * 2 for b, _ in cond]

    def flat(ks):
        return np.concatenate([k.ravel() for k in ks])

    def unflat(z):
        out, o = [], 0
        for sh in shapes:
            n = sh[0] * sh[1]
            out.append(z[o : o + n].reshape(sh))
            o += n
        return out

    z = flat([_logm(ptrace(rho0, dims, bpos)) for bpos, _ in cond])
    xs_hist, fs_hist = [], []
    best = (np.inf, z)
    rho = rho0
    it = 0
    for it in range(1, maxit + 1):
        prev = rho
        rho, gk = step(unflat(z))
        f = flat(gk) - z
        # logs of tiny eigenvalues are noisy, so convergence is judged on rho
        if float(np.abs(rho - prev).max()) < tol:
            break
        r = float(np.linalg.norm(f)) if np.all(np.isfinite(f)) else np.inf
        if r < best[0]:
            best = (r, z)
        elif not r < 1e3 * best[0]:
            # the extrapolation wandered off: restart from the best point
            xs_hist, fs_hist = [], []
            z = best[1]
            rho, gk = step(unflat(z))
            z = flat(gk)
            continue
        xs_hist.append(z)
        fs_hist.append(f)
        if len(xs_hist) > depth + 1:
            xs_hist.pop(0)
            fs_hist.pop(0)
        if len(fs_hist) > 1:
            df = np.array([fs_hist[i + 1] - fs_hist[i] for i in range(len(fs_hist) - 1)]).T
            dx = np.array([xs_hist[i + 1] - xs_hist[i] for i in range(len(xs_hist) - 1)]).T
            gam = np.linalg.lstsq(df, f, rcond=None)[0]
            z = z + f - (dx + df) @ gam
        else:
            z = z + f
    return rho, it


class _Smoothed:
    def __init__(self, prob: _Problem, cfg: SolverConfig):
        self.p = prob
        self.cfg = cfg
        self.rhos = [np.eye(int(np.prod(v.dims)), dtype=prob.dtype) / np.prod(v.dims) for v in prob.vars]
        self.inner_steps = 0
        self.last = None

    def value_grad(self, x, mu, t_fixed=None):
        p = self.p
        if not np.all(np.isfinite(x)):
            raise SolverDivergence("non-finite dual iterate")
        if np.abs(x).max(initial=0.0) > self.cfg.divergence_bound:
            raise SolverDivergence("dual multipliers diverge; the relaxation may be infeasible")
        ys, t = p.unpack(x)
        if t_fixed is not None:
            t = t_fixed
        xs = p.xs(ys)
        wts = p.weights(t)
        val = 0.0
        for i, (v, x_v, ws) in enumerate(zip(p.vars, xs, wts)):
            rho, n = _inner(x_v, v.dims, ws, mu, self.rhos[i], self.cfg.inner_tol,
                            self.cfg.inner_max_iters, self.cfg.anderson_depth)
            self.rhos[i] = rho
            self.inner_steps += n
            big_w = mu + sum(w for _, w in ws)
            val += float(np.sum(x_v * rho.T).real) + big_w * _neg_entropy_nat(rho)
            for bpos, w in ws:
                if bpos:
                    val -= w * _neg_entropy_nat(ptrace(rho, v.dims, bpos))
        if not math.isfinite(val):
            raise SolverDivergence("non-finite dual value")
        res = p.residuals(self.rhos)
        e = p.constraint_entropies(self.rhos)
        gt = -e if t_fixed is None else np.zeros_like(e)
        self.last = (ys, t, res)
        return val, p.pack_grad(res, gt)


# --------------------------------------------------------------------------- #
# Certificate
# --------------------------------------------------------------------------- #


def _var_bound(v, x_v, ws, hint, floor) -> float:
    g = x_v.astype(complex)
    if ws:
        d = x_v.shape[0]
        hint = np.eye(d) / d if hint is None else np.asarray(hint)
        w_, u = np.linalg.eigh(0.5 * (hint + hint.conj().T))
        clamped = (u * np.maximum(w_, floor)) @ u.conj().T
        log_rho = _logm(clamped, floor)
        for bpos, w in ws:
            grad = -log_rho
            if bpos:
                grad = grad + embed(_logm(ptrace(clamped, v.dims, bpos), floor), v.dims, bpos)
            g = g - w * grad
    g = 0.5 * (g + g.conj().T)
    if not np.any(g.imag):
        g = g.real
    lam = float(np.linalg.eigvalsh(g)[0])
    # backward error of the symmetric eigensolver
    return lam - 10 * g.shape[0] * EPS * max(1.0, float(np.linalg.norm(g)))


def _certify(prob: _Problem, ys, t, hints, floor, polish: SolverConfig | None = None):
    """Sum of per-variable bounds, and the hints that produced them.

    With ``polish`` the unsmoothed subproblem is also solved from each
    hint and the better of the two (both valid) bounds is kept.
    """
    if np.any(np.asarray(t) < 0):
        raise ValueError("entropy multipliers must be nonnegative")
    xs = prob.xs(ys)
    wts = prob.weights(t)
    bound = 0.0
    used = {}
    for v, x_v, ws in zip(prob.vars, xs, wts):
        hint = hints.get(v.label)
        best = (_var_bound(v, x_v, ws, hint, floor), hint)
        if polish is not None and ws and hint is not None:
            try:
                rho, _ = _inner(x_v, v.dims, ws, 0.0, hint, polish.inner_tol, polish.inner_max_iters,
                                polish.anderson_depth)
                if np.all(np.isfinite(rho)):
                    cand = _var_bound(v, x_v, ws, rho, floor)
                    if cand > best[0]:
                        best = (cand, rho)
            except np.linalg.LinAlgError:
                pass
        bound += best[0]
        if best[1] is not None:
            used[v.label] = best[1]
    return bound, used


def certify(spec: RelaxationSpec, duals: Duals, hints: dict | None = None,
            eig_floor: float = 1e-12) -> float:
    """Rigorous lower bound on ``spec`` from arbitrary multipliers.

    ``hints`` (or ``duals.hints``) supply the linearization states; missing
    ones default to the maximally mixed state. Any hint gives a valid
    bound; good hints give a tight one.
    """
    prob = _Problem(spec, real=False)
    t = np.asarray(duals.t, dtype=float)
    if t.shape != (prob.n_t,):
        raise ValueError(f"expected {prob.n_t} entropy multipliers, got {t.shape}")
    if np.any(t < 0):
        raise ValueError("entropy multipliers must be nonnegative")
    ys = list(duals.y) + [None] * (len(prob.cons) - len(duals.y))
    ys = [np.zeros((n, n)) if y is None else np.asarray(y) for y, n in zip(ys, prob.cdims)]
    if len(duals.y) > len(prob.cons):
        raise ValueError("too many consistency multipliers")
    for y, n in zip(ys, prob.cdims):
        if y.shape != (n, n):
            raise ValueError(f"multiplier of shape {y.shape}, expected {(n, n)}")
    merged = dict(duals.hints)
    merged.update(hints or {})
    return _certify(prob, ys, t, merged, eig_floor)[0]


# --------------------------------------------------------------------------- #
# Drivers
# --------------------------------------------------------------------------- #


class _Trace:
    def __init__(self, path):
        self.rows = []
        self.path = path
        self.fh = None
        if path:
            self.fh = open(path, "w", newline="")
            self.w = csv.writer(self.fh)
            self.w.writerow(["stage", "mu", "iter", "objective", "consistency_inf_norm", "elapsed"])
        self.t0 = time.perf_counter()

    def add(self, stage, mu, it, obj, res):
        row = [stage, mu, it, obj, res, time.perf_counter() - self.t0]
        self.rows.append(row)
        if self.fh:
            self.w.writerow(row)
            self.fh.flush()

    def close(self):
        if self.fh:
            self.fh.close()


def _result(prob: _Problem, rhos, ys, t, iters, status, t0, trace, cfg: SolverConfig) -> SolverResult:
    floor = cfg.eig_floor
    spec = prob.spec
    hints = {v.label: r for v, r in zip(prob.vars, rhos)}
    lb, hints = _certify(prob, ys, t, hints, floor, polish=cfg)
    marginals = {}
    for v in spec.variables:
        r = rhos[prob.index[v.label]]
        sub = spec.system.subsystem(v.support)
        marginals[v.label] = DensityMatrix(np.asarray(r, dtype=complex), sub)
    res = prob.residuals(rhos)
    inf = max((float(np.abs(r).max()) for r in res), default=0.0)
    obj = sum(float(np.sum(v.h * r.T).real) for v, r in zip(prob.vars, rhos))
    obj -= prob.objective_entropy(rhos)
    slacks = [float(s) for s in prob.constraint_entropies(rhos)]
    duals = Duals([np.array(y) for y in ys], np.array(t, dtype=float), hints)
    return SolverResult(
        lower_bound_certified=lb,
        objective_primal=obj,
        marginals=marginals,
        duals=duals,
        residuals={"consistency_inf_norm": inf, "entropy_slacks": slacks, "gap_estimate": abs(obj - lb)},
        iters=iters,
        status=status,
        elapsed=time.perf_counter() - t0,
        history=trace.rows,
    )


def _run_smoothed(prob: _Problem, cfg: SolverConfig, trace: _Trace, t_fixed=None, x0=None):
    sm = _Smoothed(prob, cfg)
    n = prob.n_y + prob.n_t
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bounds = [(None, None)] * prob.n_y + [(0.0, None)] * prob.n_t
    if t_fixed is not None:
        x[prob.n_y :] = t_fixed
        bounds = [(None, None)] * prob.n_y + [(float(t), float(t)) for t in t_fixed]
    iters = 0
    status = "converged"
    for stage, mu in enumerate(cfg.mu_schedule if n else cfg.mu_schedule[-1:]):
        if not n:
            break
        last = {"f": 0.0, "k": 0}

        def fun(z, mu=mu):
            v, g = sm.value_grad(z, mu)
            last["f"] = v
            return -v, -g

        def log(z, mu=mu, stage=stage):
            last["k"] += 1
            res = max((float(np.abs(r).max()) for r in sm.last[2]), default=0.0)
            trace.add(stage, mu, last["k"], last["f"], res)

        r = so.minimize(
            fun, x, jac=True, method="L-BFGS-B", bounds=bounds, callback=log,
            options={"maxiter": cfg.max_iters, "maxcor": cfg.lbfgs_memory,
                     "ftol": mu * cfg.ftol_factor, "gtol": cfg.dual_tol},
        )
        x = r.x
        iters += int(r.nit)
        if r.status == 1:
            status = "iteration_cap"
    # evaluate once more at the final point so the stored states match x
    sm.value_grad(x, cfg.mu_schedule[-1])
    ys, t = prob.unpack(x)
    res = max((float(np.abs(q).max()) for q in prob.residuals(sm.rhos)), default=0.0)
    if status == "converged" and res > cfg.primal_tol:
        status = "stalled"
    if status == "converged" and prob.n_t + len(prob.cons):
        hints = {v.label: r for v, r in zip(prob.vars, sm.rhos)}
        obj = sum(float(np.sum(v.h * r.T).real) for v, r in zip(prob.vars, sm.rhos))
        obj -= prob.objective_entropy(sm.rhos)
        if abs(obj - _certify(prob, ys, t, hints, cfg.eig_floor)[0]) > cfg.gap_tol:
            status = "stalled"
    return x, sm.rhos, ys, t, iters, status


def _run_pdhg(prob: _Problem, cfg: SolverConfig, trace: _Trace, t_fixed=None):
    knorm = prob.norm_estimate(cfg.power_iters, cfg.seed)
    default = 0.9 / knorm if knorm > 0 else 1.0
    tau = cfg.step_primal or default
    sigma = cfg.step_dual or default
    if knorm > 0 and tau * sigma * knorm**2 > 1.0:
        raise ValueError("step_primal * step_dual * ||K||^2 must not exceed 1")
    rhos = [np.eye(int(np.prod(v.dims)), dtype=prob.dtype) / np.prod(v.dims) for v in prob.vars]
    ys = [np.zeros((n, n), dtype=prob.dtype) for n in prob.cdims]
    t = np.zeros(prob.n_t) if t_fixed is None else np.asarray(t_fixed, float)
    status = "iteration_cap"
    best = (-np.inf, None)
    it = 0
    for it in range(1, cfg.max_iters + 1):
        xs = prob.xs(ys)
        wts = prob.weights(t)
        new = []
        for v, x_v, ws, rho in zip(prob.vars, xs, wts, rhos):
            big_w = sum(w for _, w in ws)
            k = _logm(rho) / tau - x_v
            for bpos, w in ws:
                if bpos:
                    k = k + w * embed(_logm(ptrace(rho, v.dims, bpos)), v.dims, bpos)
            new.append(gibbs_matrix(k / (1.0 / tau + big_w)))
        if not all(np.all(np.isfinite(r)) for r in new):
            raise SolverDivergence("non-finite primal iterate; reduce the step sizes")
        ext = [2 * a - b for a, b in zip(new, rhos)]
        for i, r in enumerate(prob.residuals(ext)):
            ys[i] = ys[i] + sigma * r
        if t_fixed is None and prob.n_t:
            e = 2 * prob.constraint_entropies(new) - prob.constraint_entropies(rhos)
            t = np.maximum(0.0, t - sigma * e)
        rhos = new
        scale = max((float(np.abs(y).max()) for y in ys), default=0.0)
        if scale > cfg.divergence_bound or not math.isfinite(scale):
            raise SolverDivergence("dual multipliers diverge; the relaxation may be infeasible")
        if it % 25 == 0 or it == cfg.max_iters:
            res = max((float(np.abs(q).max()) for q in prob.residuals(rhos)), default=0.0)
            hints = {v.label: r for v, r in zip(prob.vars, rhos)}
            lb = _certify(prob, ys, t, hints, cfg.eig_floor)[0]
            obj = sum(float(np.sum(v.h * r.T).real) for v, r in zip(prob.vars, rhos))
            obj -= prob.objective_entropy(rhos)
            trace.add(0, 0.0, it, obj, res)
            if lb > best[0]:
                best = (lb, ([y.copy() for y in ys], t.copy(), [r.copy() for r in rhos]))
            if res <= cfg.primal_tol and abs(obj - lb) <= cfg.gap_tol:
                status = "converged"
                break
    ys_b, t_b, _ = best[1] if best[1] is not None else (ys, t, rhos)
    # certificate uses the best duals; primal output is the last iterate
    return rhos, ys_b, t_b, it, status


def _solve_fixed(prob, cfg, trace, t_fixed=None):
    if cfg.method == "pdhg":
        rhos, ys, t, iters, status = _run_pdhg(prob, cfg, trace, t_fixed)
    else:
        _, rhos, ys, t, iters, status = _run_smoothed(prob, cfg, trace, t_fixed)
    return rhos, ys, t, iters, status


def _golden(f, lo, hi, evals):
    """Maximize a unimodal ``f`` on ``[lo, hi]`` with ``evals`` evaluations."""
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    seen = {c: fc, d: fd}
    for _ in range(max(0, evals - 2)):
        if fc[0] >= fd[0]:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
            seen[c] = fc
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
            seen[d] = fd
    return max(seen.items(), key=lambda kv: kv[1][0])


def solve(spec: RelaxationSpec, config: SolverConfig | None = None) -> SolverResult:
    """Minimize the relaxation; return a certified lower bound and a primal estimate.

    The bound is valid whatever the status; ``status`` is ``"converged"``,
    ``"iteration_cap"`` or ``"stalled"`` (optimizer stopped with residuals
    above ``primal_tol``).
    """
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    prob = _Problem(spec, cfg.real_duals)
    trace = _Trace(cfg.trace_path)
    try:
        if cfg.temperature_search == "golden" and prob.n_t:
            if prob.n_t != 1:
                raise ValueError("golden-section temperature search needs exactly one entropy constraint")
            total = [0]

            def run(log_t):
                rhos, ys, t, iters, status = _solve_fixed(prob, cfg, trace, np.array([math.exp(log_t)]))
                total[0] += iters
                hints = {v.label: r for v, r in zip(prob.vars, rhos)}
                return _certify(prob, ys, t, hints, cfg.eig_floor)[0], (rhos, ys, t, status)

            _, (lb, (rhos, ys, t, status)) = _golden(run, math.log(cfg.t_min), math.log(cfg.t_max), cfg.t_evals)
            return _result(prob, rhos, ys, t, total[0], status, t0, trace, cfg)
        rhos, ys, t, iters, status = _solve_fixed(prob, cfg, trace)
        return _result(prob, rhos, ys, t, iters, status, t0, trace, cfg)
    finally:
        trace.close()


def med_temperature_sweep(spec: RelaxationSpec, plan: MarkovShieldPlan, temperatures: Sequence[float],
                          config: SolverConfig | None = None) -> dict:
    """Free-energy lower bounds ``MED(T)`` over a list of temperatures.

    Returns ``{"rows": [(T, bound, status), ...], "argmax": T*, "max": bound*}``;
    ``max`` is a lower bound on the ground energy.
    """
    rows = []
    for temp in temperatures:
        if temp < 0:
            raise ValueError("temperatures must be nonnegative")
        res = solve(build_med_free_energy(spec, plan, float(temp)), config)
        rows.append((float(temp), res.lower_bound_certified, res.status))
    best = max(rows, key=lambda r: r[1]) if rows else (float("nan"), float("nan"), "")
    return {"rows": rows, "argmax": best[0], "max": best[1]}
