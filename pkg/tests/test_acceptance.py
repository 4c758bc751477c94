"""Acceptance suite: one test per built-in criterion, run at full strength.

``regioncd verify`` executes the same list; this module makes the criteria
part of the normal pytest run and prints one PASS/FAIL line each.
"""

import pytest

from regioncd import verification


@pytest.mark.parametrize(
    "criterion", verification.CRITERIA, ids=[c.name for c in verification.CRITERIA]
)
def test_criterion(criterion):
    passed, detail = criterion.fn()
    status = "PASS" if passed else "FAIL"
    print(f"[{status}] criterion {criterion.cid} {criterion.name}: {detail}")
    assert passed, f"criterion {criterion.cid} ({criterion.name}): {detail}"


def test_report_shape():
    report = verification.run_all()
    assert report["count"] >= 8
    assert report["all_passed"] is True
    assert [r["id"] for r in report["criteria"]] == list(range(1, 11))
