"""Shared fixtures: small trained model bundles and materialized synthetic data.

The trained fixtures take tens of seconds to build and are session-scoped;
service, CLI, report, and acceptance tests all reuse them.
"""

from __future__ import annotations

import numpy as np
import pytest

from xray_triage import imaging, synthetic, training
from xray_triage.models import (
    CovidNetConfig,
    FilterNetConfig,
    build_covid_net,
    build_filter_net,
    save_model,
)

FILTER_INPUT = 32
COVID_INPUT = 24

# A covid net small enough to train in seconds but with all three dense blocks.
MINI_COVID = CovidNetConfig(
    growth_rate=6, layers_per_block=2, head_channels=16, input_size=COVID_INPUT
)


def array_dataset(x, y):
    return training.ArrayDataset(x, y)


@pytest.fixture(scope="session")
def trained_filter():
    """Filter net fit on upright-vs-rotated synthetic patterns (near-perfect)."""
    x_train, y_train = synthetic.filter_arrays(60, 60, size=FILTER_INPUT, seed=0)
    x_val, y_val = synthetic.filter_arrays(16, 16, size=FILTER_INPUT, seed=1)
    model = build_filter_net(FilterNetConfig(input_size=FILTER_INPUT), seed=0)
    config = training.TrainConfig(
        initial_lr=5e-3,
        schedule=training.StepDecay(0.5, 5),
        batch_size=32,
        max_epochs=16,
    )
    model, history = training.train(
        model, array_dataset(x_train, y_train), array_dataset(x_val, y_val), config, seed=0
    )
    return model, history


@pytest.fixture(scope="session")
def trained_covid():
    """Mini classifier fit on the three separable synthetic classes."""
    counts = {"no_finding": 16, "lung_opacity": 16, "covid19": 16}
    x_train, y_train = synthetic.classifier_arrays(counts, size=COVID_INPUT, seed=0)
    x_val, y_val = synthetic.classifier_arrays(
        {k: 6 for k in counts}, size=COVID_INPUT, seed=1
    )
    model = build_covid_net(MINI_COVID, seed=0)
    config = training.TrainConfig(
        initial_lr=2e-3,
        schedule=training.Plateau(0.5, 3),
        batch_size=16,
        max_epochs=6,
        label_smoothing_alpha=0.1,
    )
    model, history = training.train(
        model, array_dataset(x_train, y_train), array_dataset(x_val, y_val), config, seed=0
    )
    return model, history


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory, trained_filter, trained_covid):
    """Directory holding both saved checkpoints, as the service expects."""
    d = tmp_path_factory.mktemp("models")
    save_model(d, trained_filter[0])
    save_model(d, trained_covid[0])
    return d


@pytest.fixture(scope="session")
def valid_png():
    """An upright synthetic study at 64 px, encoded as PNG."""
    rng = np.random.default_rng(7)
    return imaging.encode_png(synthetic.upright_image(rng, 64))


@pytest.fixture(scope="session")
def rotated_png():
    """The same study given a quarter turn before encoding."""
    rng = np.random.default_rng(7)
    img = imaging.rotate_quarter(synthetic.upright_image(rng, 64), 1)
    return imaging.encode_png(img)


@pytest.fixture(scope="session")
def filter_data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("filter_data")
    synthetic.materialize_filter_dataset(d, n_valid=24, size=FILTER_INPUT, seed=0)
    return d


@pytest.fixture(scope="session")
def classifier_data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("classifier_data")
    synthetic.materialize_classifier_dataset(
        d,
        counts={"no_finding": 12, "lung_opacity": 12, "covid19": 8},
        size=FILTER_INPUT,
        seed=0,
    )
    return d


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    reports = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" in nodeid and getattr(rep, "when", "call") == "call":
                reports.append(rep)
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    for rep in sorted(reports, key=lambda r: r.nodeid):
        verdict = "PASS" if rep.passed else "FAIL"
        terminalreporter.write_line(f"{verdict}  {rep.nodeid.split('::')[-1]}")
