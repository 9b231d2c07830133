import numpy as np
import pytest

from lnbnn import _backend


@pytest.fixture(params=sorted(_backend.available()))
def backend(request, monkeypatch):
    """Run the test once per importable kernel backend."""
    monkeypatch.setattr(_backend, "kernels", _backend.available()[request.param])
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def naive_knn(points, query, k):
    """Full-sort reference: pure-Python distances, ties to the lower index."""
    scored = []
    for i, p in enumerate(points):
        acc = 0.0
        for a, b in zip(p, query):
            u = float(a) - float(b)
            acc = acc + u * u
        scored.append((acc, i))
    scored.sort()
    return scored[:k]
