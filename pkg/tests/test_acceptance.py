"""Acceptance criteria 1-9 at their stated tolerances; one status line each."""
import pytest

from fracpar.acceptance import CRITERIA

from conftest import ACCEPTANCE_LINES


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    result = CRITERIA[number]()
    print(result.line())
    ACCEPTANCE_LINES.append(result.line())
    assert result.passed, result.line()
