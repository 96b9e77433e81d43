"""Shared test fixtures and helpers."""

from __future__ import annotations

import time

import numpy as np
import pytest

from tard.datagen import generate_domain
from tard.graphs import PropagationEvent, to_prop_graph
from tard.model import ModelDims, init_params
from tard.presets import shift_mid
from tard.reporting import run_ablation

# The acceptance tests record one (criterion, verdict, detail) entry each so
# the run can end with a compact per-criterion summary line.
ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def record_acceptance(number: int, name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((number, name, ok, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(ACCEPTANCE_RESULTS):
        verdict = "PASS" if ok else "FAIL"
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {number} [{name}]: {verdict}{suffix}")


def make_random_event(
    rng: np.random.Generator,
    num_nodes: int,
    feature_dim: int,
    event_id: str = "ev",
    label: int | None = None,
) -> PropagationEvent:
    """Random tree-shaped event with standard-normal features."""
    edges = [(int(rng.integers(0, k)), k) for k in range(1, num_nodes)]
    return PropagationEvent(
        id=event_id,
        label=int(rng.integers(0, 2)) if label is None else label,
        num_nodes=num_nodes,
        edges=edges,
        features=rng.standard_normal((num_nodes, feature_dim)),
    )


def make_random_graph(rng: np.random.Generator, num_nodes: int, feature_dim: int):
    return to_prop_graph(make_random_event(rng, num_nodes, feature_dim))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def shift_benchmark():
    """Ten-seed ablation on the calibrated shifted benchmark.

    Shared by the acceptance gate and the reporting tests so the (slow)
    ten training runs happen at most once per session.
    """
    start = time.perf_counter()
    results = []
    for seed in range(10):
        exp = shift_mid(seed)
        train_set = generate_domain(exp.domain)
        test_set = generate_domain(exp.target_spec())
        results.append(run_ablation(train_set, test_set, exp.train))
    return results, time.perf_counter() - start


@pytest.fixture
def small_params():
    return init_params(ModelDims(d_in=4, d_hidden=5, num_classes=2), seed=99)
