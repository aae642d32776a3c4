import numpy as np

from mininet import autodiff as ad
from mininet.autodiff import Tensor
from mininet.convops import BNState, ConvSpec, batchnorm2d, conv2d
from mininet.gradcheck import audit_suite, grad_check


def test_conv_gradcheck_passes_at_1e2():
    rng = np.random.default_rng(0)
    spec = ConvSpec(1, 2, 3)
    x = Tensor(rng.standard_normal((1, 5, 5)).astype(np.float32), requires_grad=True)
    w = Tensor(rng.standard_normal(spec.weight_shape()).astype(np.float32),
               requires_grad=True)
    b = Tensor(rng.standard_normal(2).astype(np.float32), requires_grad=True)
    report = grad_check(lambda: ad.tsum(conv2d(x, w, b, spec)),
                        [("x", x), ("w", w), ("b", b)], tolerance=1e-2)
    assert report.passed, report.format_table()


def test_batchnorm_train_gradcheck_passes_at_1e2():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((2, 3, 3)).astype(np.float32), requires_grad=True)
    gamma = Tensor(np.ones(2, np.float32), requires_grad=True)
    beta = Tensor(np.zeros(2, np.float32), requires_grad=True)
    state = BNState.create(2)
    # weight the sum: sum(BN(x)) alone is constant in x by construction
    coeffs = Tensor(rng.uniform(0.5, 1.5, (2, 3, 3)).astype(np.float32))
    report = grad_check(
        lambda: ad.tsum(ad.mul(batchnorm2d(x, gamma, beta, state, True), coeffs)),
        [("x", x), ("gamma", gamma), ("beta", beta)], tolerance=1e-2)
    assert report.passed, report.format_table()


def test_sigmoid_gradcheck_passes_at_1e3():
    rng = np.random.default_rng(2)
    x = Tensor(rng.uniform(-2, 2, 10).astype(np.float32), requires_grad=True)
    report = grad_check(lambda: ad.tsum(ad.sigmoid(x)), [("x", x)],
                        tolerance=1e-3)
    assert report.passed, report.format_table()


def test_full_audit_suite_passes():
    report = audit_suite(seed=0)
    assert report.passed, report.format_table()
    # one row per probed tensor, with the end-to-end check present
    names = [r.name for r in report.rows]
    assert any(n.startswith("end_to_end") for n in names)
    assert any(n.startswith("deconv") for n in names)
    table = report.format_table()
    assert "max rel err" in table and "pass" in table


def test_gradcheck_reports_failures_as_data():
    # deliberately wrong backward: report must fail, not raise
    x = Tensor(np.array([0.5, 1.5], np.float32), requires_grad=True)

    def broken():
        def bw(g):
            return (g * 3.0,)  # claims d(2x)/dx == 3
        return ad.record(x.data * 2.0, (x,), bw)

    report = grad_check(lambda: ad.tsum(broken()), [("x", x)], tolerance=1e-2)
    assert not report.passed
    assert "FAIL" in report.format_table()
