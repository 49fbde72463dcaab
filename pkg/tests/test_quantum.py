import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_density, random_hermitian
from entrobound.hamiltonians import PSI_MINUS, SZ, build_three_site_epr, build_xxz, ghz_vector
from entrobound.quantum import (
    Bipartition,
    DensityMatrix,
    DimensionBudgetError,
    HermitianOperator,
    LanczosError,
    SiteSystem,
    conditional_entropy,
    conditional_entropy_gradient,
    embed,
    gibbs_state,
    lanczos_min,
    min_eigenvalue,
    partial_trace,
    ptrace,
    tensor,
    von_neumann_entropy,
)
import scipy.linalg as sla
import scipy.sparse.linalg as spla

seeds = st.integers(0, 2**32 - 1)


def dm(mat, sites):
    return DensityMatrix(mat, sites)


class TestSiteSystem:
    def test_sorted_with_dims(self):
        s = SiteSystem([3, 1, 2], [2, 3, 4])
        assert s.site_ids == (1, 2, 3)
        assert s.local_dims == (3, 4, 2)
        assert s.dim == 24

    def test_rejects_duplicates_and_small_dims(self):
        with pytest.raises(ValueError):
            SiteSystem([1, 1])
        with pytest.raises(ValueError):
            SiteSystem([1, 2], [2, 1])

    def test_budget(self):
        SiteSystem(range(14))
        with pytest.raises(DimensionBudgetError):
            SiteSystem(range(15))


class TestHermitianOperator:
    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            HermitianOperator([[0, 1], [0, 0]], [1])

    def test_tiny_asymmetry_is_symmetrized(self):
        m = np.array([[1.0, 1 + 1e-14], [1, 0]])
        op = HermitianOperator(m, [1])
        assert np.array_equal(op.entries, op.entries.conj().T)

    def test_permuted_sites_are_canonicalized(self):
        a = np.diag([1.0, 2.0])
        b = np.diag([5.0, 7.0])
        op = HermitianOperator(np.kron(a, b), [2, 1])
        assert op.sites == (1, 2)
        assert np.allclose(op.entries, np.kron(b, a))

    def test_immutable(self):
        op = HermitianOperator(np.eye(2), [1])
        with pytest.raises(AttributeError):
            op.entries = np.zeros((2, 2))
        with pytest.raises(ValueError):
            op.entries[0, 0] = 3

    def test_density_checks(self):
        with pytest.raises(ValueError):
            DensityMatrix(np.diag([1.5, -0.5]), [1])
        with pytest.raises(ValueError):
            DensityMatrix(np.eye(2), [1])
        DensityMatrix(np.diag([1 + 5e-11, -5e-11]), [1])


class TestTensor:
    def test_identity(self):
        i2 = HermitianOperator(np.eye(2), [1])
        assert np.allclose(tensor(i2, HermitianOperator(np.eye(2), [2])).entries, np.eye(4))

    def test_sigma_z_kron_identity(self):
        out = tensor(HermitianOperator(SZ, [1]), HermitianOperator(np.eye(2), [2]))
        assert np.allclose(out.entries, np.diag([1, 1, -1, -1]))

    def test_projectors(self):
        p0 = HermitianOperator(np.diag([1, 0]), [1])
        p1 = HermitianOperator(np.diag([0, 1]), [2])
        e01 = np.zeros(4)
        e01[1] = 1
        assert np.allclose(tensor(p0, p1).entries, np.outer(e01, e01))

    def test_overlap(self):
        with pytest.raises(ValueError):
            tensor(HermitianOperator(np.eye(2), [1]), HermitianOperator(np.eye(2), [1]))


class TestPartialTrace:
    def test_singlet_marginal(self):
        rho = dm(np.outer(PSI_MINUS, PSI_MINUS.conj()), [1, 2])
        assert np.allclose(partial_trace(rho, [1]).entries, np.eye(2) / 2)

    def test_product(self, rng):
        a = random_density(1, rng)
        b = random_density(2, rng)
        rho = dm(np.kron(a, b), [1, 2, 3])
        assert np.allclose(partial_trace(rho, [1]).entries, a)
        assert np.allclose(partial_trace(rho, [2, 3]).entries, b)

    def test_ghz(self):
        g = ghz_vector(3)
        out = partial_trace(dm(np.outer(g, g), [1, 2, 3]), [1, 2]).entries
        assert np.allclose(out, np.diag([0.5, 0, 0, 0.5]))

    def test_not_subset(self):
        with pytest.raises(ValueError):
            partial_trace(dm(np.eye(4) / 4, [1, 2]), [3])

    @given(seeds)
    def test_trace_preserving_linear_and_nested(self, seed):
        rng = np.random.default_rng(seed)
        a = random_hermitian(16, rng)
        b = random_hermitian(16, rng)
        dims = [2, 2, 2, 2]
        lin = ptrace(2 * a - 3 * b, dims, [0, 2]) - (2 * ptrace(a, dims, [0, 2]) - 3 * ptrace(b, dims, [0, 2]))
        assert np.abs(lin).max() < 1e-12
        assert abs(np.trace(ptrace(a, dims, [1])) - np.trace(a)) < 1e-10
        nested = ptrace(ptrace(a, dims, [0, 1, 2]), [2, 2, 2], [0])
        assert np.allclose(nested, ptrace(a, dims, [0]))

    @given(seeds)
    def test_embed_is_adjoint(self, seed):
        rng = np.random.default_rng(seed)
        x = random_hermitian(8, rng)
        y = random_hermitian(4, rng)
        for keep in ([0, 2], [2, 0], [1, 2]):
            lhs = np.trace(embed(y, [2, 2, 2], keep) @ x)
            rhs = np.trace(y @ ptrace(x, [2, 2, 2], keep))
            assert abs(lhs - rhs) < 1e-10


class TestEntropy:
    def test_mixed_and_pure(self):
        assert von_neumann_entropy(dm(np.eye(2) / 2, [1])) == pytest.approx(1.0)
        assert von_neumann_entropy(dm(np.outer(PSI_MINUS, PSI_MINUS), [1, 2])) == pytest.approx(0.0, abs=1e-12)

    def test_werner_spectrum(self):
        lam = 0.37
        rho = lam * np.outer(PSI_MINUS, PSI_MINUS) + (1 - lam) * np.eye(4) / 4
        p = np.array([(1 + 3 * lam) / 4] + [(1 - lam) / 4] * 3)
        assert von_neumann_entropy(dm(rho, [1, 2])) == pytest.approx(-np.sum(p * np.log2(p)), abs=1e-12)

    def test_non_psd(self):
        op = HermitianOperator(np.diag([1.1, -0.1]), [1])
        with pytest.raises(ValueError):
            von_neumann_entropy(op)

    def test_bell_conditional(self):
        rho = dm(np.outer(PSI_MINUS, PSI_MINUS), [1, 2])
        assert conditional_entropy(rho, Bipartition([1], [2])) == pytest.approx(-1.0)

    @pytest.mark.parametrize("k,i", [(2, 1), (3, 1), (3, 2), (4, 2), (5, 3)])
    def test_ghz_conditional(self, k, i):
        g = ghz_vector(k)
        rho = dm(np.outer(g, g), range(1, k + 1))
        part = Bipartition(range(1, i + 1), range(i + 1, k + 1))
        assert conditional_entropy(rho, part) == pytest.approx(-1.0, abs=1e-10)

    def test_product_conditional(self, rng):
        a = random_density(1, rng)
        b = random_density(1, rng)
        rho = dm(np.kron(a, b), [1, 2])
        assert conditional_entropy(rho, Bipartition([1], [2])) == pytest.approx(von_neumann_entropy(dm(a, [1])))

    def test_partition_must_cover(self):
        with pytest.raises(ValueError):
            conditional_entropy(dm(np.eye(8) / 8, [1, 2, 3]), Bipartition([1], [2]))

    @given(seeds, st.sampled_from([3, 4]))
    def test_chain_rule(self, seed, n):
        rng = np.random.default_rng(seed)
        rho = dm(random_density(n, rng), range(1, n + 1))
        total = von_neumann_entropy(partial_trace(rho, [1]))
        for i in range(2, n + 1):
            total += conditional_entropy(partial_trace(rho, range(1, i + 1)), Bipartition([i], range(1, i)))
        assert total == pytest.approx(von_neumann_entropy(rho), abs=1e-8)


class TestGradient:
    def test_maximally_mixed(self):
        g = conditional_entropy_gradient(dm(np.eye(4) / 4, [1, 2]), Bipartition([1], [2]))
        assert np.allclose(g.entries, np.eye(4))

    def test_product_state(self, rng):
        a = random_density(1, rng)
        b = random_density(1, rng)
        g = conditional_entropy_gradient(dm(np.kron(a, b), [1, 2]), Bipartition([1], [2]))
        la = sla.logm(a) / np.log(2)
        assert np.allclose(g.entries, -np.kron(la, np.eye(2)), atol=1e-9)

    @given(seeds, st.sampled_from([(2, [1], [2]), (3, [2], [1, 3]), (3, [1, 2], [3]), (2, [1, 2], [])]))
    def test_finite_differences(self, seed, case):
        n, a, b = case
        rng = np.random.default_rng(seed)
        rho = random_density(n, rng)
        rho = 0.9 * rho + 0.1 * np.eye(2**n) / 2**n
        delta = random_hermitian(2**n, rng)
        delta -= np.trace(delta) / 2**n * np.eye(2**n)
        delta /= np.linalg.norm(delta)
        part = Bipartition(a, b)
        sites = range(1, n + 1)
        eps = 1e-5
        sp = conditional_entropy(dm(rho + eps * delta, sites), part)
        sm = conditional_entropy(dm(rho - eps * delta, sites), part)
        fd = (sp - sm) / (2 * eps)
        g = conditional_entropy_gradient(dm(rho, sites), part)
        an = float(np.trace(g.entries @ delta).real)
        assert abs(an - fd) <= 1e-6 * max(1.0, abs(fd))

    @given(seeds)
    def test_homogeneity(self, seed):
        rng = np.random.default_rng(seed)
        rho = dm(random_density(3, rng), [1, 2, 3])
        part = Bipartition([2], [1, 3])
        g = conditional_entropy_gradient(rho, part)
        assert g.expectation(rho) == pytest.approx(conditional_entropy(rho, part), abs=1e-9)

    def test_floor(self):
        pure = dm(np.outer(PSI_MINUS, PSI_MINUS), [1, 2])
        g = conditional_entropy_gradient(pure, Bipartition([1], [2]))
        assert np.all(np.isfinite(g.entries))
        with pytest.raises(ValueError):
            conditional_entropy_gradient(pure, Bipartition([1], [2]), clamp=False)


class TestGibbs:
    def test_zero(self):
        assert np.allclose(gibbs_state(HermitianOperator(np.zeros((4, 4)), [1, 2])).entries, np.eye(4) / 4)

    def test_softmax(self):
        out = gibbs_state(HermitianOperator(np.diag([np.log(2), 0]), [1])).entries
        assert np.allclose(out, np.diag([2 / 3, 1 / 3]))

    def test_xxz_against_expm(self):
        h = build_xxz(0.7).matrix
        beta = 1.3
        ref = sla.expm(-beta * h)
        ref /= np.trace(ref)
        assert np.allclose(gibbs_state(HermitianOperator(-beta * h, [1, 2])).entries, ref, atol=1e-12)

    @given(seeds, st.floats(0, 1e3))
    def test_positive_unit_trace(self, seed, scale):
        rng = np.random.default_rng(seed)
        k = random_hermitian(8, rng)
        k *= scale / max(np.abs(k).max(), 1e-300)
        out = gibbs_state(HermitianOperator(k, [1, 2, 3]))
        assert abs(out.trace() - 1) < 1e-12
        assert np.linalg.eigvalsh(out.entries)[0] >= -1e-12


class TestMinEigenvalue:
    def test_three_site(self):
        assert min_eigenvalue(build_three_site_epr().to_dense()) == pytest.approx(-0.75, abs=1e-12)

    def test_identity(self):
        assert min_eigenvalue(HermitianOperator(np.eye(8), [1, 2, 3])) == pytest.approx(1.0)

    def test_lanczos_path(self, rng):
        a = random_hermitian(5000, rng, real=True)
        lam = min_eigenvalue(a)
        assert lam == pytest.approx(sla.eigh(a, eigvals_only=True, subset_by_index=[0, 0])[0], abs=1e-7)

    def test_lanczos_failure_is_loud(self, rng):
        a = random_hermitian(400, rng, real=True)
        with pytest.raises(LanczosError):
            lanczos_min(spla.aslinearoperator(a), maxiter=1)
