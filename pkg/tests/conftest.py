import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from longmed.dataset import LongitudinalDataset, Subject

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_dataset(rng, n=30, p=3, q=2, n_obs=(1, 6), noise=1.0) -> LongitudinalDataset:
    """Small unstructured dataset with times in [0, 1]."""
    subjects = []
    for i in range(n):
        n_i = int(rng.integers(n_obs[0], n_obs[1] + 1))
        t = np.sort(rng.choice(np.linspace(0, 1, 201), n_i, replace=False))
        x = rng.normal()
        m = rng.normal(size=p) + 0.3 * x
        z = rng.normal(size=q)
        y = 0.5 * x * np.sin(np.pi * t) + m.sum() * t + noise * rng.normal(size=n_i)
        subjects.append(Subject(f"s{i}", x, m, z, t, y))
    return LongitudinalDataset(tuple(subjects))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_ds(rng):
    return random_dataset(rng)


ACCEPTANCE_LINES: list = []


def report(label: str, ok: bool, detail: str = "") -> bool:
    """Record one acceptance line; shown in the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'} {label}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


# Monte Carlo studies shared by the acceptance suite and the module tests.
# Seeds are fixed in advance; all use master seed 0.

@pytest.fixture(scope="session")
def power_desk():
    from longmed.simulation import DESK_DELTAS, SimulationConfig, run_power_study

    return run_power_study(SimulationConfig(case=1, scenario=1, G=50, S=200, seed=0), DESK_DELTAS)


@pytest.fixture(scope="session")
def screening_s1():
    """Scenario 1 screening over 100 replicates at b = 0.05 and 0.10."""
    from longmed.simulation import SimulationConfig, run_screening_study

    return run_screening_study(SimulationConfig(case=1, scenario=1, n=100, p=50, G=100, S=200, seed=0), [0.05, 0.10])


@pytest.fixture(scope="session")
def screening_s3():
    from longmed.simulation import SimulationConfig, run_screening_study

    return run_screening_study(SimulationConfig(case=1, scenario=3, n=100, p=50, G=50, S=200, seed=0), [0.05])


@pytest.fixture(scope="session")
def null_pvalues():
    """Permutation p-values of a null mediator (alpha = 0, beta = 0) over 200 replicates."""
    from longmed.simulation import SimulationConfig, generate_dataset, replicate_seed
    from longmed.pipeline import AnalysisConfig, choose_basis
    from longmed.permtest import permutation_test

    cfg = SimulationConfig(case=1, scenario=1, n=100, p=10, G=200, S=200, seed=0)
    out = []
    for g in range(cfg.G):
        ds = generate_dataset(cfg, replicate=g)
        seed = replicate_seed(cfg, g)
        basis = choose_basis(ds, AnalysisConfig(seed=seed))
        out.append(permutation_test(ds, 6, basis, "diagonal", cfg.S, seed).p_beta)
    return np.array(out)
