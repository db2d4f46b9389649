"""Runs every bundled verification criterion and reports one line per check.

Each criterion compares library output against an independent oracle
(closed-form arithmetic, adaptive quadrature, Monte Carlo sampling, or
exhaustive search) computed inside :mod:`tile360.verify`.  A criterion must
both pass and finish inside its time budget.
"""

import pytest

from tile360.verify import BUDGET_SECONDS, CRITERION_NAMES, run_criteria


@pytest.mark.parametrize("name", CRITERION_NAMES)
def test_criterion(name):
    result = run_criteria([name])[0]
    status = "PASS" if result.passed else "FAIL"
    line = "%s %s: %s [%.1fs / budget %.0fs]" % (
        status,
        result.name,
        result.detail,
        result.seconds,
        BUDGET_SECONDS[name],
    )
    print(line)
    assert result.passed, line
    assert result.seconds <= BUDGET_SECONDS[name], line
