import os
from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).resolve().parents[1] / "src" / "epitome" / "data"


def data_image(name):
    """Path of a standard test image, or None when it is not available.

    ``$EPITOME_DATA_DIR`` is searched before the bundled images.
    """
    dirs = [Path(os.environ["EPITOME_DATA_DIR"])] if os.environ.get("EPITOME_DATA_DIR") else []
    for d in dirs + [DATA]:
        for ext in (".pgm", ".png"):
            p = d / f"{name}{ext}"
            if p.exists():
                return p
    return None


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


@pytest.fixture(scope="session")
def boat():
    from epitome.imageio import read_image

    return read_image(data_image("boat"))


@pytest.fixture(scope="session")
def cameraman():
    from epitome.imageio import read_image

    return read_image(data_image("cameraman"))


# --- acceptance summary ----------------------------------------------------

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, title = mark.args
    if rep.when == "setup" and rep.passed:
        return
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed:
        msg = str(rep.longrepr).strip().splitlines()[-1] if rep.longrepr else ""
        detail = f"{detail} | {msg}" if detail else msg
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    _RESULTS[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, status, detail = _RESULTS[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {title} -- {detail}")
