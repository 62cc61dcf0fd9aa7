import numpy as np
import pytest

from polylm.corpus import Corpus


def numeric_grad(f, arr: np.ndarray, idx, h: float = 1e-5) -> float:
    """Central difference of scalar ``f()`` with respect to ``arr[idx]``."""
    old = arr[idx]
    arr[idx] = old + h
    up = f()
    arr[idx] = old - h
    down = f()
    arr[idx] = old
    return (up - down) / (2 * h)


# Central differences in float64 with h=1e-5 carry ~5e-11 absolute noise
# (eps * |loss| / h), so below this magnitude the error is judged absolutely.
FD_FLOOR = 1e-5


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), FD_FLOOR)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_corpora():
    a = [["x", "y", "z"], ["y", "z"], ["x", "x", "y", "z", "w"], ["w"]]
    b = [["p", "q"], ["q", "r", "s"], ["s", "p", "q", "r"]]
    return [Corpus.from_token_lists("a", a), Corpus.from_token_lists("b", b)]
