import numpy as np
import pytest

from trunc_estim import _kernels
from trunc_estim.pmle import PSGDConfig, init_theta0, psgd
from trunc_estim.preprocess import gaussian_domain
from trunc_estim.truncation import Halfspace

HAS_C = "compiled" in _kernels.BACKENDS


def _problem():
    x = np.abs(np.random.default_rng(0).standard_normal((3000, 1)))
    dom = gaussian_domain(1, 0.5)
    return x, init_theta0(x, dom), Halfspace([1.0], 0.0), dom


def test_python_backend_always_available():
    assert _kernels.get_backend("python") is _kernels.BACKENDS["python"]
    assert _kernels.backend_name(_kernels.BACKENDS["python"]) == "python"


def test_default_prefers_compiled(monkeypatch):
    monkeypatch.delenv("TRUNC_ESTIM_BACKEND", raising=False)
    assert _kernels.backend_name() == ("compiled" if HAS_C else "python")


def test_env_var_selects_backend(monkeypatch):
    x, th0, S, dom = _problem()
    monkeypatch.setenv("TRUNC_ESTIM_BACKEND", "python")
    assert _kernels.backend_name() == "python"
    _, tr = psgd(x, th0, S, dom, PSGDConfig(iterations=100), 1)
    assert tr.backend == "python"
    monkeypatch.setenv("TRUNC_ESTIM_BACKEND", "fortran")
    with pytest.raises(ValueError):
        _kernels.get_backend()


def test_explicit_config_beats_env(monkeypatch):
    x, th0, S, dom = _problem()
    monkeypatch.setenv("TRUNC_ESTIM_BACKEND", "compiled" if HAS_C else "python")
    _, tr = psgd(x, th0, S, dom, PSGDConfig(iterations=100, backend="python"), 1)
    assert tr.backend == "python"


@pytest.mark.skipif(HAS_C, reason="extension is built")
def test_missing_extension_is_an_error():
    with pytest.raises(ImportError):
        _kernels.get_backend("compiled")


@pytest.mark.skipif(not HAS_C, reason="extension not built")
def test_backends_bitwise_close():
    x, th0, S, dom = _problem()
    out = [psgd(x, th0, S, dom, PSGDConfig(iterations=5000, trace_stride=50, backend=b), 2)[1]
           for b in ("python", "compiled")]
    np.testing.assert_allclose(out[0].thetas, out[1].thetas, rtol=1e-10, atol=1e-13)
    np.testing.assert_array_equal(out[0].proposals, out[1].proposals)
    assert out[0].mean_sq_grad == pytest.approx(out[1].mean_sq_grad, rel=1e-10)
