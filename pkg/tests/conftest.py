import pytest

from fedsplit import tensor


@pytest.fixture(autouse=True)
def debug_checks():
    """Every forward op asserts finite outputs throughout the suite."""
    tensor.set_debug_checks(True)
    yield
    tensor.set_debug_checks(False)
