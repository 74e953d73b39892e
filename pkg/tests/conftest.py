import numpy as np
import pytest

from polyrto.mesh import Domain2D, Region, generate_cvt_mesh


def cantilever_domain(width=60.0, height=30.0):
    return Domain2D.rectangle(width, height, [
        Region("left", "segment", (0, 0, 0, height)),
        Region("top_right", "point", (width, height)),
        Region("bottom_right", "point", (width, 0)),
    ])


@pytest.fixture(scope="session")
def small_mesh():
    """~200-element cantilever mesh shared by FE and optimizer tests."""
    return generate_cvt_mesh(cantilever_domain(), 200, seed=3, lloyd_iterations=20)


@pytest.fixture(scope="session")
def tiny_mesh():
    """50-element mesh for finite-difference checks."""
    return generate_cvt_mesh(cantilever_domain(), 50, seed=5, lloyd_iterations=30)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cantilever_problem(mesh, lo=0.95, hi=1.05, **kw):
    """Cantilever RTO problem: opposite tip loads with magnitudes uniform on [lo, hi]."""
    from polyrto.rto import MagnitudeLoads, RtoProblem
    from polyrto.stochastic import RandomVariableSpec

    loads = MagnitudeLoads(("top_right", "bottom_right"), ((0.0, -1.0), (0.0, 1.0)),
                           (RandomVariableSpec.uniform(lo, hi), RandomVariableSpec.uniform(lo, hi)))
    return RtoProblem(mesh=mesh, domain=cantilever_domain(), fixed={"left": ("x", "y")},
                      load_model=loads, **kw)


@pytest.fixture(scope="session")
def cantilever_mesh_small():
    """Cantilever mesh at the desk-scale size N = 1800."""
    return generate_cvt_mesh(cantilever_domain(), 1800, seed=1, lloyd_iterations=50)


@pytest.fixture(scope="session")
def det_cantilever(cantilever_mesh_small):
    """Converged deterministic cantilever design at N = 1800 (nominal loads)."""
    from polyrto.topopt import deterministic_to

    prob = cantilever_problem(cantilever_mesh_small, 1.0, 1.0)
    return prob, deterministic_to(prob)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        status, title, info, reason = results[n]
        line = f"CRITERION {n:2d} {status}: {title} [{mod.fmt(info)}]"
        if reason:
            line += f" -- {reason}"
        terminalreporter.write_line(line)
