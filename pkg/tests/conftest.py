import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["compiled", "python"])
def each_backend(request):
    from cotondet.numerics import backend

    if request.param not in backend.available():
        pytest.skip(f"{request.param} backend not built")
    with backend.use(request.param):
        yield request.param
