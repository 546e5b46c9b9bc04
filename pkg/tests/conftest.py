import numpy as np
import pytest

from dfax.core import LabelVector, make_targets, standardize
from dfax.datasets import make_sign_dataset
from dfax.model import train_builtin

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


@pytest.fixture(scope="session")
def sign_problem():
    """Synthetic sign-of-x0 data: standardized train split, logistic model, 100 targets."""
    x, y = make_sign_dataset(2100, 10, seed=0)
    data, params = standardize(x[:2000])
    model = train_builtin("logistic", data, LabelVector(y[:2000], 2), seed=0)
    preds = LabelVector(model.predict(data.rows), 2)
    target_rows = params.apply(x[2000:])
    targets = make_targets(target_rows, model.predict(target_rows))
    return {"data": data, "params": params, "model": model, "preds": preds,
            "labels": LabelVector(y[:2000], 2), "targets": targets}
