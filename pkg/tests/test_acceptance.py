"""Acceptance battery: one test per criterion, each printing a pass/fail line."""

import pytest

from twocavity.validate import CRITERIA, run_criterion


@pytest.mark.slow
@pytest.mark.parametrize("name", list(CRITERIA))
def test_criterion(name, capsys):
    result = run_criterion(name)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.line()


@pytest.mark.slow
def test_reversed_cascade_breaks_oracle_equivalence(capsys):
    # flipping the sign of the one-way feed must be caught by the oracle comparison
    result = run_criterion("oracle-equivalence", n=2000, cascade=-1.0)
    with capsys.disabled():
        print("\n[mutation] " + result.line())
    assert not result.passed
