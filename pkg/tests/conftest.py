import math
import os
import tempfile

# before any src import: Config reads the environment at import time
os.environ.setdefault("RNN_TD_LOG_DIR", tempfile.mkdtemp(prefix="rnn_td_logs_"))

import numpy as np
import pytest

from src.core.config import CalendarConfig
from src.data.events import EventSequence
from src.models.rnn_td import ModelParams, ShapingFunction


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: statistical experiment taking minutes")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_params(
    K=2,
    H=1,
    D_e=1,
    shaping="constant",
    w=0.0,
    head="mark",
    W_alpha=None,
    W_nu=None,
    b_nu=None,
    calendar=None,
):
    """Model with zero recurrence weights; heads set explicitly."""
    calendar = calendar or CalendarConfig()
    if W_nu is None and head != "none":
        W_nu = np.zeros((K if head == "mark" else 1, H))
    if head == "shared" and b_nu is None:
        b_nu = np.zeros(1)
    return ModelParams(
        W_ht=np.zeros((H, calendar.dimension)),
        W_he=np.zeros((H, D_e)),
        W_hh=np.zeros((H, H)),
        W_alpha=np.zeros((K, H)) if W_alpha is None else np.asarray(W_alpha, dtype=np.float64),
        embed=np.zeros((K, D_e)),
        W_nu=None if W_nu is None else np.asarray(W_nu, dtype=np.float64),
        b_nu=b_nu,
        shaping=ShapingFunction(shaping, w),
        head=head,
        calendar=calendar,
    )


def nu_params(nu, shaping="constant", w=0.0):
    """K = len(nu), H = 1; with h = [1] the intensity scales are exactly ``nu``."""
    W_nu = np.log(np.asarray(nu, dtype=np.float64)).reshape(-1, 1)
    return make_params(K=len(nu), H=1, shaping=shaping, w=w, W_nu=W_nu)


def seq(times, marks, seq_id="s"):
    return EventSequence.from_arrays(seq_id, times, marks)


@pytest.fixture
def zero_model():
    return make_params(K=2, H=2, D_e=2)


@pytest.fixture
def h_one():
    return np.array([1.0])


@pytest.fixture
def log2():
    return math.log(2.0)
