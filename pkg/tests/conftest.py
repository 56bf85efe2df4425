import sys
from pathlib import Path

import pytest

import patchseg

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    """Pay the JIT compilation cost once, before anything is timed."""
    patchseg.warmup()
