import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_density(n_qubits, rng, rank=None, real=False):
    d = 2**n_qubits
    rank = rank or d
    g = rng.standard_normal((d, rank))
    if not real:
        g = g + 1j * rng.standard_normal((d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_hermitian(d, rng, real=False):
    a = rng.standard_normal((d, d))
    if not real:
        a = a + 1j * rng.standard_normal((d, d))
    return (a + a.conj().T) / 2


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_three_site_objective(rng, pairs=((1, 2), (2, 3), (1, 3))):
    """Random two-body terms on the given pairs of sites 1..3."""
    from entrobound.hamiltonians import LocalHamiltonian
    from entrobound.quantum import HermitianOperator, SiteSystem

    terms = tuple(HermitianOperator(random_hermitian(4, rng), list(p)) for p in pairs)
    return LocalHamiltonian(SiteSystem([1, 2, 3]), terms)


def global_marginals(spec, rho):
    """Marginals of a global state ``rho`` on every variable of ``spec``."""
    from entrobound.quantum import DensityMatrix, partial_trace

    full = DensityMatrix(rho, spec.system)
    return {v.label: partial_trace(full, v.support) for v in spec.variables}


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        parts = results[num]
        ok = all(p[0] == "PASS" for p in parts)
        for status, title, detail, secs in parts:
            terminalreporter.write_line(f"[{status}] criterion {num:>2}: {title} ({secs:.1f}s) {detail}")
        if len(parts) > 1:
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2}: overall")
