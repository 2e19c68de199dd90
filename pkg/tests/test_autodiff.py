"""Gradient and forward-value checks for every primitive in the engine."""

import math

import numpy as np
import pytest

from kgpretrain import autodiff as ad
from kgpretrain.autodiff import Tensor, backward, grad_check
from kgpretrain.errors import ShapeError


@pytest.fixture(autouse=True)
def _float64():
    ad.set_default_dtype("float64")
    yield
    ad.set_default_dtype("float32")


def _t(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def test_gelu_fixes_origin_and_sigmoid_half():
    assert gelu_val(0.0) == 0.0
    assert ad.sigmoid(Tensor([0.0])).data[0] == 0.5


def gelu_val(x):
    return float(ad.gelu(Tensor([x])).data[0])


def test_gelu_matches_scalar_erf_formula():
    for x in (-2.0, -0.5, 0.3, 1.0, 4.0):
        expected = 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))
        assert gelu_val(x) == pytest.approx(expected, rel=1e-12)


def test_softmax_rows_normalize():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(5, 7)) * 3)
    s = ad.softmax(x, axis=-1).data
    assert (s >= 0).all()
    np.testing.assert_allclose(s.sum(axis=-1), np.ones(5), atol=1e-6)


def test_layer_norm_moments():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(2.0, 3.0, size=(4, 16)))
    g = Tensor(np.ones(16))
    b = Tensor(np.zeros(16))
    out = ad.layer_norm(x, g, b).data
    assert np.abs(out.mean(axis=-1)).max() < 1e-6
    assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-4


def test_matmul_backward_matches_finite_differences():
    rng = np.random.default_rng(2)
    a = _t(rng, 3, 4)
    b = _t(rng, 4, 2)
    err = grad_check(lambda: ad.sum_all(ad.matmul(a, b)), [a, b], eps=1e-5)
    assert err < 1e-6


def test_linear_function_gradient_is_exact():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    err = grad_check(lambda: ad.sum_all(ad.scale(x, 3.0)), [x])
    assert err < 1e-9


def test_constant_function_zero_gradient():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    c = Tensor(np.array([5.0, 5.0]))
    out = ad.sum_all(ad.mul(c, c))
    backward(out)
    assert x.grad is None


@pytest.mark.parametrize("seed", range(20))
def test_every_primitive_grad_check(seed):
    rng = np.random.default_rng(seed)
    checks = []

    a = _t(rng, 3, 4)
    b = _t(rng, 4, 5)
    checks.append((lambda: ad.sum_all(ad.matmul(a, b)), [a, b]))

    c = _t(rng, 2, 3, 4)
    w = _t(rng, 4, 3)
    checks.append((lambda: ad.sum_all(ad.matmul(c, w)), [c, w]))

    d = _t(rng, 2, 3, 4, 2)
    e = _t(rng, 2, 3, 2, 4)
    checks.append((lambda: ad.sum_all(ad.matmul(d, e)), [d, e]))

    f = _t(rng, 3, 5)
    g = _t(rng, 3, 5)
    bias = _t(rng, 5)
    checks.append((lambda: ad.sum_all(ad.add(f, g)), [f, g]))
    checks.append((lambda: ad.sum_all(ad.add(f, bias)), [f, bias]))
    checks.append((lambda: ad.sum_all(ad.mul(f, g)), [f, g]))
    checks.append((lambda: ad.sum_all(ad.scale(f, -1.7)), [f]))
    const = rng.normal(size=(3, 5))
    checks.append((lambda: ad.sum_all(ad.add_const(f, const)), [f]))

    h = _t(rng, 4, 6)
    v = _t(rng, 4, 6)
    checks.append((lambda: ad.sum_all(ad.mul(ad.softmax(h), v)), [h, v]))
    checks.append((lambda: ad.sum_all(ad.mul(ad.gelu(h), v)), [h, v]))
    checks.append((lambda: ad.sum_all(ad.mul(ad.sigmoid(h), v)), [h, v]))

    x = _t(rng, 3, 8)
    gam = _t(rng, 8, lo=0.5, hi=1.5)
    bet = _t(rng, 8)
    mixer = _t(rng, 3, 8)
    checks.append((lambda: ad.sum_all(ad.mul(ad.layer_norm(x, gam, bet), mixer)), [x, gam, bet]))

    table = _t(rng, 7, 4)
    ids = rng.integers(0, 7, size=9)
    checks.append((lambda: ad.sum_all(ad.embedding_lookup(table, ids)), [table]))

    logits = _t(rng, 6, 5, lo=-2, hi=2)
    targets = rng.integers(0, 5, size=6)
    checks.append((lambda: ad.cross_entropy_with_logits(logits, targets), [logits]))

    praw = _t(rng, 8, lo=-1.5, hi=1.5)
    labels = rng.integers(0, 2, size=8).astype(float)
    checks.append((lambda: ad.binary_cross_entropy(ad.sigmoid(praw), labels), [praw]))

    y = _t(rng, 3, 4)
    checks.append((lambda: ad.sum_all(ad.mul(ad.dropout(y, 0.5, seed=seed), ad.dropout(y, 0.5, seed=seed))), [y]))

    z = _t(rng, 2, 3, 4)
    zm = _t(rng, 4, 3, 2)
    checks.append((lambda: ad.sum_all(ad.mul(ad.transpose(z, (2, 1, 0)), zm)), [z, zm]))
    checks.append((lambda: ad.sum_all(ad.reshape(z, (6, 4))), [z]))
    checks.append((lambda: ad.sum_all(ad.slice_(z, (slice(0, 1), slice(1, 3)))), [z]))

    for fn, params in checks:
        assert grad_check(fn, params) < 1e-6


def test_shape_errors_name_both_shapes():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((2, 3)))
    with pytest.raises(ShapeError, match=r"\(2, 3\)"):
        ad.matmul(a, b)
    with pytest.raises(ShapeError, match=r"\(4,\)"):
        ad.add(a, Tensor(np.zeros(4)))


def test_dropout_zero_is_identity_and_seeded():
    x = Tensor(np.ones((4, 4)), requires_grad=True)
    assert ad.dropout(x, 0.0, seed=1) is x
    m1 = ad.dropout(x, 0.5, seed=7).data
    m2 = ad.dropout(x, 0.5, seed=7).data
    m3 = ad.dropout(x, 0.5, seed=8).data
    np.testing.assert_array_equal(m1, m2)
    assert not np.array_equal(m1, m3)


def test_forward_is_deterministic():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(5, 5)))

    def run():
        return ad.softmax(ad.gelu(ad.matmul(x, x))).data

    np.testing.assert_array_equal(run(), run())


def test_backward_visits_each_node_once():
    # y = x + x contributes twice through one node; grad must be exactly 2
    x = Tensor(np.array([1.0]), requires_grad=True)
    y = ad.add(x, x)
    z = ad.add(y, y)
    backward(z)
    np.testing.assert_array_equal(x.grad, np.array([4.0]))


def test_reaches_detects_graph_paths():
    x = Tensor(np.array([1.0]), requires_grad=True)
    y = Tensor(np.array([2.0]), requires_grad=True)
    out = ad.scale(ad.add(x, x), 2.0)
    assert ad.reaches(out, x)
    assert not ad.reaches(out, y)
