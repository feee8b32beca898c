"""Every acceptance criterion at its stated tolerance, one PASS/FAIL line each."""

import pytest

from chronomech.acceptance import CHECKS, run_check


@pytest.mark.parametrize("name", list(CHECKS))
def test_acceptance(name):
    result = run_check(name)
    print(result.line())
    assert result.passed, result.line()
