import numpy as np
import pytest

from llfdisc import _backend


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["compiled", "python"])
def backend(request):
    """Run a test once per kernel backend."""
    if request.param == "compiled" and not _backend.compiled_available():
        pytest.skip("compiled kernels not built")
    prev = _backend.use(request.param)
    yield request.param
    _backend.use(prev)
