"""Acceptance criteria c01-c14, one test each, from a single suite run.

The suite writes its CSV tables to a temporary directory; set
REGSDE_ACCEPTANCE_OUT to keep them somewhere else.
"""
import os
from pathlib import Path

import pytest

import conftest
from regsde.acceptance import CRITERIA, SuiteContext, run_suite

IDS = [fn.__name__[:3] for fn in CRITERIA] + ["c14"]


@pytest.fixture(scope="session")
def suite(tmp_path_factory):
    out = os.environ.get("REGSDE_ACCEPTANCE_OUT")
    out = Path(out) if out else tmp_path_factory.mktemp("acceptance")
    results = run_suite(SuiteContext(), out, config_sha="pytest", determinism=True)
    for r in results:
        line = r.line()
        print(line)
        conftest.ACCEPTANCE_LINES.append(line)
    return {r.cid: r for r in results}


@pytest.mark.parametrize("cid", IDS)
def test_criterion(suite, cid):
    res = suite[cid]
    assert res.passed, res.line()
