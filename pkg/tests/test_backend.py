import numpy as np
import pytest

from herdsim import _backend, _pykernels

pytestmark = pytest.mark.skipif("cython" not in _backend.available(), reason="compiled extension not built")


def _c():
    from herdsim import _ckernels

    return _ckernels


@pytest.mark.parametrize("family", [0, 1, 2])
@pytest.mark.parametrize("dim", [1, 2, 3])
def test_compiled_matches_numpy(family, dim):
    r = np.random.default_rng(family * 10 + dim)
    src = r.normal(size=(300, dim))
    tgt = r.normal(size=(70, dim))
    w = r.uniform(size=300)
    a = _c().interaction_sum(family, -1.1, 0.8, src, w, tgt, 1)
    b = _pykernels.interaction_sum(family, -1.1, 0.8, src, w, tgt, 1)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("dim", [1, 2])
def test_compiled_thread_count_is_bit_exact(dim):
    r = np.random.default_rng(3)
    src = r.normal(size=(500, dim))
    tgt = r.normal(size=(401, dim))
    w = r.uniform(size=500)
    ref = _c().interaction_sum(1, 0.7, 1.0, src, w, tgt, 1)
    for n in (2, 3, 8):
        assert np.array_equal(_c().interaction_sum(1, 0.7, 1.0, src, w, tgt, n), ref)


def test_numpy_thread_count_is_bit_exact(monkeypatch):
    monkeypatch.setattr(_pykernels, "_BLOCK", 64)
    r = np.random.default_rng(4)
    src, tgt, w = r.normal(size=(20, 1)), r.normal(size=(40, 1)), r.uniform(size=20)
    ref = _pykernels.interaction_sum(2, 1.0, 2.0, src, w, tgt, 1)
    assert np.array_equal(_pykernels.interaction_sum(2, 1.0, 2.0, src, w, tgt, 4), ref)


def test_fp_step_backends_agree():
    r = np.random.default_rng(5)
    rho = r.uniform(size=64)
    a, b = r.uniform(size=63), r.uniform(size=63)
    x, y = rho.copy(), rho.copy()
    m1 = _c().fp_step(x, a, b, 0.1, 0.01)
    m2 = _pykernels.fp_step(y, a, b, 0.1, 0.01)
    assert np.allclose(x, y, rtol=1e-14, atol=1e-15)
    assert m1 == pytest.approx(m2, rel=1e-14)
    assert x.sum() == pytest.approx(rho.sum(), rel=1e-13)


def test_switching_backends():
    before = _backend.name()
    try:
        _backend.use("python")
        assert _backend.name() == "python"
        _backend.use("cython")
        assert _backend.name() == "cython"
        with pytest.raises(ValueError):
            _backend.use("fortran")
    finally:
        _backend.use(before)


def test_thread_setting_validated():
    with pytest.raises(ValueError):
        _backend.set_num_threads(0)


def test_benchmark_runs():
    from herdsim.bench import compare, format_rows

    rows = compare(sizes=(64,), repeats=1, cells=(64,))
    assert {"cython", "python"} <= set(rows[0])
    assert "speedup" in format_rows(rows)
