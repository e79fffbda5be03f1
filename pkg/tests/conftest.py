import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

settings.register_profile(
    "certlab", deadline=None, max_examples=60, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("certlab")


def random_state(d, gen, rank=None):
    r = rank or d
    g = gen.standard_normal((d, r)) + 1j * gen.standard_normal((d, r))
    m = g @ g.conj().T
    return m / np.trace(m).real


@st.composite
def states(draw, min_dim=2, max_dim=5):
    d = draw(st.integers(min_dim, max_dim))
    seed = draw(st.integers(0, 2**32 - 1))
    rank = draw(st.integers(1, d))
    return random_state(d, np.random.default_rng(seed), rank)


@st.composite
def state_pairs(draw, min_dim=2, max_dim=5):
    d = draw(st.integers(min_dim, max_dim))
    seed = draw(st.integers(0, 2**32 - 1))
    gen = np.random.default_rng(seed)
    return random_state(d, gen), random_state(d, gen, int(gen.integers(1, d + 1)))


@st.composite
def spectra(draw, min_dim=2, max_dim=32, positive=True):
    d = draw(st.integers(min_dim, max_dim))
    seed = draw(st.integers(0, 2**32 - 1))
    conc = draw(st.sampled_from([0.2, 1.0, 5.0]))
    x = np.random.default_rng(seed).dirichlet(np.full(d, conc))
    if positive:
        x = np.maximum(x, 1e-12)
        x = x / x.sum()
    return np.sort(x)[::-1]


@pytest.fixture
def gen():
    return np.random.default_rng(20240601)


# ---- acceptance summary ---------------------------------------------------

ACCEPTANCE_TITLES = {
    1: "kernel identity matches the n-copy tensor oracle",
    2: "hard instances are valid and exactly as far as certified",
    3: "mixedness chi-square bound",
    4: "nearly-mixed exponential bound and critical copy count",
    5: "rotation corner case: distance and fidelity",
    6: "bucketing facts and mass-removal budgets",
    7: "lower-functional scaling and the two-scale example",
    8: "certifier soundness, completeness, ledger slope and trichotomy",
    9: "classical baseline",
    10: "reproducibility: quick battery and bit-identical replay",
}
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


class criterion:
    """Context manager recording one acceptance criterion; an exception records a FAIL."""

    def __init__(self, number: int):
        self.number = number
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        detail = "; ".join(self.details)
        if not ok:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {exc}"
        ACCEPTANCE_RESULTS[self.number] = (ok, detail)
        print(f"criterion {self.number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_TITLES):
        if k not in ACCEPTANCE_RESULTS:
            continue
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:>2}. {ACCEPTANCE_TITLES[k]}: {detail}")
