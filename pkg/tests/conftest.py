import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from patterncard.querygraph import Schema  # noqa: E402

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def movies_schema() -> Schema:
    return Schema.from_dict({
        "movies": {
            "id": {"type": "int", "min": 1, "max": 1000, "num_uniques": 1000, "table_size": 1000},
            "stars": {"type": "int", "min": 0, "max": 10, "num_uniques": 11, "table_size": 1000},
            "year": {"type": "int", "min": 1900, "max": 2025, "num_uniques": 126, "table_size": 1000},
            "title": {"type": "string", "min": "A", "max": "zz", "num_uniques": 990, "table_size": 1000},
            "released": {"type": "date", "min": "1900-01-01", "max": "2025-12-31",
                         "num_uniques": 900, "table_size": 1000},
        },
        "cast": {
            "movie_id": {"type": "int", "min": 1, "max": 1000, "num_uniques": 1000, "table_size": 5000},
            "role": {"type": "int", "min": 0, "max": 9, "num_uniques": 10, "table_size": 5000},
        },
    })


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
