from __future__ import annotations

import numpy as np
import pytest

from nqpnf.series import DomainSpec, FTSeries, HamSeries, Interval, VectorField3


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def desk_domain():
    return DomainSpec(Interval(0.5, 1.5), Interval(1.0, 2.0), 0.1, 0.1, 0.5)


@pytest.fixture
def ham_domain():
    return DomainSpec(Interval(0.5, 1.5), Interval(1.0, 2.0), 0.1, 0.1, 0.5, Interval(0.0, 1.0), 0.1, 0.3)


def random_ft(rng, domain, kmax=3, dI=4, dy=6, decay=0.5, real=True) -> FTSeries:
    """Random series with geometrically decaying coefficients (analytic on a wide box)."""
    k = np.abs(np.arange(-kmax, kmax + 1))[:, None, None]
    a = np.arange(dI + 1)[None, :, None]
    b = np.arange(dy + 1)[None, None, :]
    c = (rng.standard_normal((2 * kmax + 1, dI + 1, dy + 1)) + 1j * rng.standard_normal((2 * kmax + 1, dI + 1, dy + 1)))
    c = c * decay ** (k + a + b)
    if real:
        c = 0.5 * (c + np.conj(c[::-1]))
    return FTSeries(c, domain)


def random_vf(rng, domain, **kw) -> VectorField3:
    return VectorField3(*(random_ft(rng, domain, **kw) for _ in range(3)))


def random_ham(rng, domain, kmax=2, pqmax=2, dI=3, dy=3, dx=3, decay=0.5, real=True) -> HamSeries:
    shape = (2 * kmax + 1, pqmax + 1, pqmax + 1, dI + 1, dy + 1, dx + 1)
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    idx = np.indices(shape)
    order = np.abs(idx[0] - kmax) + idx[1] + idx[2] + idx[3] + idx[4] + idx[5]
    c = c * decay**order
    c[:, (idx[1] + idx[2])[0, :, :, 0, 0, 0] > pqmax] = 0
    if real:
        # real on real (p, q) requires conj symmetry in k only
        c = 0.5 * (c + np.conj(c[::-1]))
    return HamSeries(c, domain)
