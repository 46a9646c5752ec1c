import numpy as np
import pytest

from couette_kinetic.collision import CollisionKernelSpec, assemble_operators
from couette_kinetic.grid import build_spatial_grid, build_velocity_grid, eval_reference


@pytest.fixture(scope="session")
def kernel_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("kernel_cache")


def _ops(n, v_max, q, cache, **spec_kw):
    grid = build_velocity_grid(n, v_max)
    tables = eval_reference(grid, q)
    M = min(q * q, 0.8 * v_max) if q else 2.0
    return assemble_operators(grid, tables, CollisionKernelSpec(**spec_kw), M, cache_dir=cache)


@pytest.fixture(scope="session")
def ops8(kernel_cache):
    """8^3 velocities on [-4.5, 4.5]^3, q = 4."""
    return _ops(8, 4.5, 4, kernel_cache)


@pytest.fixture(scope="session")
def ops8_q6(kernel_cache):
    return _ops(8, 4.5, 6, kernel_cache)


@pytest.fixture(scope="session")
def ops6(kernel_cache):
    return _ops(6, 4.5, 2, kernel_cache)


@pytest.fixture(scope="session")
def sgrid8():
    return build_spatial_grid(8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def verdict(capsys):
    """Print one line straight to the terminal, bypassing capture."""

    def emit(label: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{label}: {'PASS' if ok else 'FAIL'} ({detail})")

    return emit


@pytest.fixture(scope="session")
def g1_8(ops8, sgrid8):
    from couette_kinetic.steady import solve_G1

    return solve_G1(ops8, sgrid8)


@pytest.fixture(scope="session")
def steady_family(ops8, sgrid8, g1_8):
    """Remainders and composed states for alpha in (0.04, 0.02, 0.01) on the 8^3 grid."""
    from couette_kinetic.steady import compose_steady, solve_remainder

    out = {}
    for alpha in (0.04, 0.02, 0.01):
        rem = solve_remainder(g1_8, ops8, sgrid8, alpha)
        out[alpha] = (rem, compose_steady(g1_8, rem, alpha, ops8, sgrid8))
    return out
