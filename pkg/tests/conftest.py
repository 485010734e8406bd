import sys

import numpy as np
import pytest


def report_line(text):
    """Print a live progress/verdict line, bypassing pytest capture."""
    print(text, file=sys.__stderr__, flush=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
