import itertools
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from entrobound.hamiltonians import (
    PSI_MINUS,
    XY_ENERGY_DENSITY,
    LocalHamiltonian,
    TIChainTerm,
    binary_entropy,
    build_ghz_hyper,
    build_med_not_wm_marginals,
    build_quantum_maxcut,
    build_three_site_epr,
    build_wm_not_med_marginals,
    build_xxz,
    extrapolate_energy_density,
    gibbs_free_energy,
    ring_hamiltonian,
    ring_operator,
    solve_wm_not_med_lambda,
    ti_ground_energy_density,
    xy_ring_energy,
)
from entrobound.quantum import HermitianOperator, SiteSystem
from entrobound.relaxations import MarkovShieldPlan


def dense_min(ham):
    return float(np.linalg.eigvalsh(ham.to_dense().entries)[0])


class TestThreeSite:
    def test_ground_energy(self):
        assert dense_min(build_three_site_epr()) == pytest.approx(-0.75, abs=1e-12)

    def test_terms(self):
        h = build_three_site_epr()
        for t in h.terms:
            assert np.linalg.eigvalsh(t.entries)[0] == pytest.approx(-0.5)
            assert t.trace() == pytest.approx(-0.5)
        # embedding each term on three sites doubles its trace
        assert h.to_dense().trace() == pytest.approx(-2.0)


class TestMaxCut:
    def test_path(self):
        assert dense_min(build_quantum_maxcut([(0, 1), (1, 2)])) == pytest.approx(-1.5)

    def test_single_edge(self):
        assert dense_min(build_quantum_maxcut([(4, 7)])) == pytest.approx(-1.0)

    def test_triangle(self):
        # brute force from explicit kron products
        p = np.outer(PSI_MINUS, PSI_MINUS)
        i2 = np.eye(2)
        swap = np.eye(8)[[0, 2, 1, 3, 4, 6, 5, 7]]  # exchanges sites 2 and 3
        h12 = np.kron(p, i2)
        h23 = np.kron(i2, p)
        h13 = swap @ h12 @ swap
        ref = np.linalg.eigvalsh(-(h12 + h23 + h13))[0]
        assert dense_min(build_quantum_maxcut([(0, 1), (1, 2), (0, 2)])) == pytest.approx(ref)
        assert ref == pytest.approx(-1.5)

    @pytest.mark.parametrize("edges", [[(1, 1)], [(0, 1), (1, 0)], [(0, 1), (2, 3)], []])
    def test_invalid(self, edges):
        with pytest.raises(ValueError):
            build_quantum_maxcut(edges)

    @given(st.integers(2, 9), st.floats(0.2, 1.0), st.integers(0, 10**6))
    def test_trivial_bounds(self, n, p, seed):
        g = nx.gnp_random_graph(n, p, seed=seed)
        if not nx.is_connected(g):
            return
        lam = build_quantum_maxcut(g.edges).min_eigenvalue()
        assert -g.number_of_edges() - 1e-9 <= lam <= 1e-9


class TestGHZ:
    def test_l2_matches_scaled_three_site(self):
        a = build_ghz_hyper(2).to_dense().entries
        b = build_three_site_epr().to_dense().entries
        assert np.allclose(np.linalg.eigvalsh(a), 2 * np.linalg.eigvalsh(b))
        assert dense_min(build_ghz_hyper(2)) == pytest.approx(-1.5)

    def test_l3(self):
        h = build_ghz_hyper(3)
        assert h.system.dim == 32
        assert dense_min(h) == pytest.approx(-1.5)


class TestXXZ:
    def test_xy_spectrum(self):
        assert np.allclose(np.linalg.eigvalsh(build_xxz(0).matrix), [-2, 0, 0, 2])

    def test_heisenberg_spectrum(self):
        # XX + YY + ZZ is 1 on the triplet and -3 on the singlet; h is its negative
        assert np.allclose(np.linalg.eigvalsh(build_xxz(1).matrix), [-1, -1, -1, 3])

    def test_term_checks(self):
        with pytest.raises(ValueError):
            TIChainTerm(HermitianOperator(np.eye(8), [1, 2, 3]))


class TestRings:
    def test_ring_operator_matches_dense(self, rng):
        a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        term = TIChainTerm.from_matrix(a + a.conj().T)
        for m in (3, 5):
            dense = ring_hamiltonian(term, m).to_dense().entries
            op = ring_operator(term, m)
            v = rng.standard_normal(2**m) + 1j * rng.standard_normal(2**m)
            assert np.allclose(op.matvec(v), dense @ v)

    def test_two_sites(self):
        h = build_xxz(0.3).matrix
        swap = np.eye(4)[[0, 2, 1, 3]]
        ref = np.linalg.eigvalsh(h + swap @ h @ swap)[0] / 2
        assert ti_ground_energy_density(build_xxz(0.3), 2) == pytest.approx(ref)

    @pytest.mark.parametrize("m", [4, 6, 8, 10, 12])
    def test_xy_free_fermions(self, m):
        assert ti_ground_energy_density(build_xxz(0), m) * m == pytest.approx(xy_ring_energy(m), abs=1e-8)

    def test_xy_m20_near_limit(self):
        assert abs(ti_ground_energy_density(build_xxz(0), 20) - XY_ENERGY_DENSITY) < 2e-2

    def test_xy_convergent(self):
        e = [xy_ring_energy(m) / m for m in (16, 18, 20)]
        assert max(e) - min(e) < 1e-2
        assert all(abs(x - XY_ENERGY_DENSITY) < 1e-2 for x in e)

    def test_size_limits(self):
        with pytest.raises(ValueError):
            ti_ground_energy_density(build_xxz(0), 25)

    def test_extrapolation(self):
        # free-fermion energies follow the same fit exactly, so test on them
        e = extrapolate_energy_density(build_xxz(0), (8, 10, 12))
        assert abs(e - XY_ENERGY_DENSITY) < 1e-4

    def test_gibbs_free_energy(self):
        # two levels 0 and 1 at T=1: F = -log2(1 + 1/2)
        assert gibbs_free_energy(np.array([0.0, 1.0]), 1.0) == pytest.approx(-math.log2(1.5))
        assert gibbs_free_energy(np.array([-3.0, 5.0]), 0.0) == pytest.approx(-3.0)


class TestWMNotMED:
    def test_lambda_makes_wm_tight(self):
        a = build_wm_not_med_marginals()
        assert a.conditional(1, 2) + a.conditional(1, 3) == pytest.approx(0.0, abs=1e-8)
        assert a.entropy([2]) == pytest.approx(binary_entropy(1 - a.lam / 2))
        assert a.entropy([1]) == pytest.approx(1.0)
        assert a.entropy([2, 3]) == pytest.approx(2 * binary_entropy(1 - a.lam / 2))

    @pytest.mark.parametrize("lam", [0.2, 0.5, solve_wm_not_med_lambda(), 0.9])
    def test_wm_holds_across_family(self, lam):
        a = build_wm_not_med_marginals(lam, n=6)
        assert a.consistency_residual() < 1e-12
        for i in range(2, 7):
            for j, k in itertools.combinations([s for s in range(1, 7) if s != i], 2):
                if 1 in (j, k):
                    assert a.conditional(i, j) + a.conditional(i, k) >= -1e-9

    def test_med_sum_only_turns_negative_for_many_sites(self):
        # the shields-{1} MED sum is 1 + (N-1)(S(1i) - 1) and only crosses zero at N = 17
        for n, sign in ((8, 1), (16, 1), (17, -1)):
            a = build_wm_not_med_marginals(n=n)
            s = a.med_sum(MarkovShieldPlan.constant(range(1, n + 1), [1]))
            assert np.sign(s) == sign

    def test_invalid(self):
        with pytest.raises(ValueError):
            build_wm_not_med_marginals(1.2)
        with pytest.raises(ValueError):
            build_wm_not_med_marginals(n=2)


class TestWerner:
    def test_family(self):
        a = build_med_not_wm_marginals()
        s = a.conditional(1, 2)
        assert s == pytest.approx(-0.25, abs=1e-8)
        assert -0.5 <= s < 0
        assert a.med_sum(MarkovShieldPlan([1, 2, 3], {2: [1], 3: [2]})) >= 0
        assert a.med_sum(MarkovShieldPlan([1, 2, 3], {2: [1], 3: [1]})) >= 0
        assert a.conditional(1, 2) + a.conditional(1, 3) < 0


def test_local_hamiltonian_validates_sites():
    with pytest.raises(ValueError):
        LocalHamiltonian(SiteSystem([1, 2]), (HermitianOperator(np.eye(2), [3]),))
