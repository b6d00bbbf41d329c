import numpy as np
import pytest

from stcrf.graph import Assignment, GraphSpec, ObservationInstance


def make_instance(spec: GraphSpec, rng=None, scale=0.5, gold=True):
    rng = np.random.default_rng(0) if rng is None else rng
    feats = tuple(scale * rng.normal(size=(spec.num_steps, d)) for d in spec.feature_dims)
    labels = None
    if gold:
        labels = Assignment(np.stack([rng.integers(0, y, size=spec.num_steps)
                                      for y in spec.label_sizes], axis=1))
    return ObservationInstance(spec, feats, labels)


def zero_params(model):
    return model.with_params({k: np.zeros_like(v) for k, v in model.params.items()})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per criterion; echoed in the terminal summary."""
    def record(label: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
