import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from herdsim.kernels import (
    KernelSet,
    KernelSpec,
    LipschitzCertificateError,
    eval_kernel,
    interaction_sum,
    lipschitz_constant,
)

FAMILIES = ["linear", "saturating", "tanh_radial"]


def test_eval_examples():
    assert eval_kernel(KernelSpec("linear", -1.0), [3.0])[0] == -3.0
    assert eval_kernel(KernelSpec("saturating", 1.0), [0.0])[0] == 0.0
    assert eval_kernel(KernelSpec("saturating", 1.0), [1.0])[0] == pytest.approx(0.5)


def test_lipschitz_examples():
    assert lipschitz_constant(KernelSpec("linear", 2.0)) == 2.0
    assert lipschitz_constant(KernelSpec("linear", 0.0)) == 0.0
    k = KernelSpec("saturating", 3.0)
    r = np.random.default_rng(1)
    y1 = r.normal(size=(100_000, 1)) * 0.01
    y2 = r.normal(size=(100_000, 1)) * 0.01
    q = np.abs(k(y1) - k(y2))[:, 0] / np.abs(y1 - y2)[:, 0]
    # the empirical sup approaches the certificate from below
    assert q.max() <= k.lipschitz + 1e-9
    assert q.max() >= k.lipschitz - 1e-3 * k.lipschitz * 100


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("dim", [1, 2, 3])
def test_odd_and_vanishing_at_zero(family, dim, rng):
    k = KernelSpec(family, 1.3, 0.7, dim=dim)
    assert np.all(k(np.zeros(dim)) == 0)
    y = rng.normal(size=(50, dim))
    assert np.array_equal(k(-y), -k(y))


@given(st.sampled_from(FAMILIES), st.floats(-5, 5), st.floats(0.1, 5),
       st.lists(st.floats(-100, 100), min_size=2, max_size=2))
def test_difference_quotient_bounded(family, a, s, ys):
    k = KernelSpec(family, a, s)
    y1, y2 = np.array([ys[0]]), np.array([ys[1]])
    if y1[0] != y2[0]:
        assert abs(k(y1)[0] - k(y2)[0]) <= k.lipschitz * abs(y1[0] - y2[0]) + 1e-9


def test_bad_certificate_is_caught(monkeypatch):
    import herdsim.kernels as km

    real = km.eval_kernel
    monkeypatch.setattr(km, "eval_kernel", lambda k, y: 2.0 * real(k, y))
    with pytest.raises(LipschitzCertificateError):
        KernelSpec("saturating", 1.0)


def test_invalid_specs():
    with pytest.raises(ValueError):
        KernelSpec("coulomb", 1.0)
    with pytest.raises(ValueError):
        KernelSpec("tanh_radial", 1.0, s=0.0)


@pytest.mark.parametrize("family", FAMILIES)
def test_interaction_sum_matches_direct(family, rng):
    k = KernelSpec(family, -0.8, 1.5, dim=2)
    src = rng.normal(size=(17, 2))
    w = rng.uniform(0, 1, 17)
    tgt = rng.normal(size=(5, 2))
    direct = np.array([np.sum(w[:, None] * k(src - t), axis=0) for t in tgt])
    assert np.allclose(interaction_sum(k, src, w, tgt), direct, rtol=1e-12, atol=1e-13)


def test_kernel_set_round_trip():
    ks = KernelSet(KernelSpec("linear", 1.0), KernelSpec("saturating", -0.2),
                   KernelSpec("tanh_radial", 0.5, 2.0), KernelSpec("saturating", -0.5))
    assert KernelSet.from_dict(ks.to_dict(), 1) == ks
    assert ks.L == 1.0
    assert KernelSet.zero(2).dim == 2
