import os

import pytest


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long simulation tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow") or os.environ.get("LCMVP_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow; use --runslow or LCMVP_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
