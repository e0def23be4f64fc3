import numpy as np
import pytest

from qmlab.symbols import Symbol


def random_symbol(rng, dim, max_deg_x=2, max_deg_xi=2, nterms=3, scale=1.0):
    terms = {}
    for _ in range(nterms):
        ax = tuple(int(v) for v in rng.multinomial(rng.integers(0, max_deg_x + 1), [1 / dim] * dim))
        axi = tuple(int(v) for v in rng.multinomial(rng.integers(0, max_deg_xi + 1), [1 / dim] * dim))
        terms[(ax, axi)] = terms.get((ax, axi), 0.0) + scale * rng.uniform(-1, 1)
    return Symbol(dim, terms)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
