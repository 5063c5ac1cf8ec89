"""Engine oracles: hand values, central finite differences, graph properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from versegan import autodiff as ad
from versegan.autodiff import Tensor
from versegan.errors import GradientError, NonFiniteError, ShapeMismatchError

EPS = 1e-5
TOL = 1e-4


def t(data, grad=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


class TestForwardValues:
    def test_softmax_symmetry(self):
        out = ad.softmax(t([0.0, 0.0]))
        assert np.allclose(out.data, [0.5, 0.5])

    def test_softmax_rows_sum_to_one(self, rng):
        out = ad.softmax(t(rng.normal(size=(5, 9))), axis=-1)
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)
        assert ((out.data > 0) & (out.data < 1)).all()

    def test_relu_definition(self):
        out = ad.relu(t([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_cross_entropy_uniform_logits(self):
        logits = t(np.zeros((3, 10)))
        # brute force: -log of the softmax probability of the target
        probs = np.exp(np.zeros(10)) / np.exp(np.zeros(10)).sum()
        expected = -np.log(probs[0])
        loss = ad.cross_entropy(logits, np.array([4, 0, 9]))
        assert loss.data == pytest.approx(expected, abs=1e-12)
        assert loss.data == pytest.approx(np.log(10.0), abs=1e-12)

    def test_batch_norm_constant_column_is_zero(self):
        # zero variance: (c - c)/sqrt(0 + eps) = 0 before the affine part
        x = t(np.full((4, 3), 7.0))
        out = ad.batch_norm(x, t(np.ones(3)), t(np.zeros(3)),
                            np.zeros(3), np.ones(3), training=True)
        assert np.allclose(out.data, 0.0)

    def test_batch_norm_batch_of_one_rejected_in_train(self):
        x = t(np.ones((1, 3)))
        with pytest.raises(ShapeMismatchError):
            ad.batch_norm(x, t(np.ones(3)), t(np.zeros(3)),
                          np.zeros(3), np.ones(3), training=True)

    def test_batch_norm_eval_uses_running_stats(self):
        x = t(np.array([[2.0, 4.0]]))
        rm, rv = np.array([1.0, 1.0]), np.array([4.0, 1.0])
        out = ad.batch_norm(x, t(np.ones(2)), t(np.zeros(2)), rm, rv,
                            training=False)
        expected = (x.data - rm) / np.sqrt(rv + 1e-5)
        assert np.allclose(out.data, expected)
        assert rm[0] == 1.0  # eval mode never touches the running stats

    def test_concat_pool_parts(self):
        x = t(np.arange(24, dtype=float).reshape(2, 3, 4))
        assert np.array_equal(ad.last_over_time(x).data, x.data[:, -1, :])
        assert np.array_equal(ad.max_over_time(x).data, x.data.max(axis=1))
        assert np.allclose(ad.mean_over_time(x).data, x.data.mean(axis=1))

    def test_pooling_respects_lengths(self):
        data = np.zeros((2, 3, 1))
        data[0, :, 0] = [1.0, 5.0, 99.0]
        data[1, :, 0] = [2.0, 99.0, 99.0]
        x = t(data)
        lengths = np.array([2, 1])
        assert np.array_equal(ad.max_over_time(x, lengths).data.ravel(), [5.0, 2.0])
        assert np.allclose(ad.mean_over_time(x, lengths).data.ravel(), [3.0, 2.0])
        assert np.array_equal(ad.last_over_time(x, lengths).data.ravel(), [5.0, 2.0])

    def test_shape_mismatch_names_op_and_shapes(self):
        with pytest.raises(ShapeMismatchError) as err:
            ad.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))
        assert "matmul" in str(err.value)
        assert "(2, 3)" in str(err.value)

    def test_non_finite_output_rejected(self):
        big = t(np.array([1e308]))
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            ad.mul(big, big)

    def test_empty_time_axis_rejected(self):
        with pytest.raises(ShapeMismatchError):
            ad.max_over_time(t(np.zeros((2, 0, 3))))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = t([1.0, 2.0, 3.0])
        ad.tsum(x).backward()
        assert np.array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_elementwise_square_gradient(self):
        x = t([2.0])
        ad.tsum(ad.mul(x, x)).backward()
        assert np.array_equal(x.grad, [4.0])

    def test_fanout_accumulates_sum_of_paths(self, rng):
        # a tensor feeding two consumers gets the sum of the single-path grads
        base = rng.normal(size=(3, 3))
        x1 = t(base.copy())
        g1 = ad.tsum(ad.mul(x1, x1))
        g1.backward()
        only_first = x1.grad.copy()

        x2 = t(base.copy())
        g2 = ad.tsum(ad.sigmoid(x2))
        g2.backward()
        only_second = x2.grad.copy()

        x = t(base.copy())
        both = ad.add(ad.tsum(ad.mul(x, x)), ad.tsum(ad.sigmoid(x)))
        both.backward()
        assert np.allclose(x.grad, only_first + only_second)

    def test_backward_requires_scalar(self):
        x = t(np.ones((2, 2)))
        with pytest.raises(GradientError):
            ad.mul(x, 2.0).backward()

    def test_no_grad_blocks_graph(self):
        x = t([1.0, 2.0])
        with ad.no_grad():
            y = ad.mul(x, x)
        assert not y.requires_grad and y._backward is None


def _rand(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def primitive_cases(rng):
    """(name, param tensors, scalar-valued closure) triples for every op."""
    a = _rand(rng, 4, 3)
    b = _rand(rng, 4, 3)
    bias = _rand(rng, 3)
    m1 = _rand(rng, 3, 5)
    m2 = _rand(rng, 5, 2)
    seq = _rand(rng, 2, 4, 3)
    emb = _rand(rng, 6, 3)
    ids = np.array([[1, 5, 0], [2, 2, 4]])
    logits = _rand(rng, 3, 6)
    seq_logits = _rand(rng, 2, 3, 5)
    targets = np.array([2, 0, 5])
    seq_targets = np.array([[1, 4, 0], [3, 3, 2]])
    labels = np.array([1.0, 0.0, 1.0, 0.0])
    zvec = _rand(rng, 4)
    gamma = _rand(rng, 3)
    beta = _rand(rng, 3)
    mask2d = ad.dropout_mask((4, 3), 0.4, rng)
    lengths = np.array([3, 2])

    running = (np.zeros(3), np.ones(3))
    return [
        ("add", [a, b], lambda: ad.tsum(ad.sigmoid(ad.add(a, b)))),
        ("add-broadcast", [a, bias], lambda: ad.tsum(ad.tanh(ad.add(a, bias)))),
        ("mul", [a, b], lambda: ad.tsum(ad.tanh(ad.mul(a, b)))),
        ("matmul", [m1, m2], lambda: ad.tsum(ad.sigmoid(ad.matmul(m1, m2)))),
        ("sigmoid", [a], lambda: ad.tsum(ad.sigmoid(a))),
        ("tanh", [a], lambda: ad.tsum(ad.tanh(a))),
        ("relu", [a], lambda: ad.tsum(ad.relu(a))),
        ("concat", [a, b], lambda: ad.tsum(ad.sigmoid(ad.concat([a, b], axis=1)))),
        ("stack", [a, b], lambda: ad.tsum(ad.tanh(ad.stack([a, b], axis=1)))),
        ("slice", [a], lambda: ad.tsum(ad.sigmoid(ad.slice_axis(a, 1, 3, axis=1)))),
        ("reshape", [a], lambda: ad.tsum(ad.tanh(ad.reshape(a, (2, 6))))),
        ("transpose", [m1], lambda: ad.tsum(ad.sigmoid(ad.transpose(m1)))),
        ("embedding", [emb], lambda: ad.tsum(ad.tanh(ad.embedding(emb, ids)))),
        ("sum-axis", [a], lambda: ad.tsum(ad.sigmoid(ad.tsum(a, axis=1)))),
        ("mean", [a], lambda: ad.tmean(ad.mul(a, a))),
        ("softmax", [logits], lambda: ad.tsum(ad.mul(ad.softmax(logits), ad.softmax(logits)))),
        ("log_softmax", [logits], lambda: ad.tsum(ad.mul(ad.log_softmax(logits), 0.1))),
        ("take_along_last", [logits],
         lambda: ad.tsum(ad.take_along_last(ad.log_softmax(logits), targets))),
        ("max_over_time", [seq], lambda: ad.tsum(ad.sigmoid(ad.max_over_time(seq)))),
        ("max_over_time-masked", [seq],
         lambda: ad.tsum(ad.sigmoid(ad.max_over_time(seq, lengths)))),
        ("mean_over_time", [seq], lambda: ad.tsum(ad.tanh(ad.mean_over_time(seq)))),
        ("mean_over_time-masked", [seq],
         lambda: ad.tsum(ad.tanh(ad.mean_over_time(seq, lengths)))),
        ("last_over_time", [seq], lambda: ad.tsum(ad.last_over_time(seq, lengths))),
        ("cross_entropy", [logits], lambda: ad.cross_entropy(logits, targets)),
        ("cross_entropy-masked", [seq_logits],
         lambda: ad.cross_entropy(seq_logits, seq_targets,
                                  mask=np.array([[1, 1, 0], [1, 0, 0]]))),
        ("bce_with_logits", [zvec], lambda: ad.bce_with_logits(zvec, labels)),
        ("batch_norm-train", [a, gamma, beta],
         lambda: ad.tsum(ad.sigmoid(ad.batch_norm(
             a, gamma, beta, running[0].copy(), running[1].copy(), training=True)))),
        ("batch_norm-eval", [a, gamma, beta],
         lambda: ad.tsum(ad.sigmoid(ad.batch_norm(
             a, gamma, beta, running[0], running[1], training=False)))),
        ("dropout-mask", [a], lambda: ad.tsum(ad.tanh(ad.apply_mask(a, mask2d)))),
    ]


def test_every_primitive_matches_finite_differences():
    rng = np.random.default_rng(7)
    failures = []
    for name, params, f in primitive_cases(rng):
        err = ad.grad_check(f, params, eps=EPS)
        if err >= TOL:
            failures.append((name, err))
    assert not failures, f"primitives above tolerance: {failures}"


def test_gradient_of_constant_parameter_is_zero(rng):
    used = _rand(rng, 3)
    unused = _rand(rng, 3)
    err = ad.grad_check(lambda: ad.tsum(ad.mul(used, used)), [unused], eps=EPS)
    assert err < 1e-8


def test_weight_tied_matmul_matches_finite_differences(rng):
    w = _rand(rng, 4, 4)
    x = Tensor(rng.normal(size=(2, 4)))

    def f():
        return ad.tsum(ad.tanh(ad.matmul(ad.matmul(x, w), ad.transpose(w))))

    assert ad.grad_check(f, [w], eps=EPS) < TOL


def test_sigmoid_chain_gradcheck(rng):
    w = _rand(rng, 3, 4)
    x = Tensor(rng.normal(size=(2, 3)))
    err = ad.grad_check(lambda: ad.tsum(ad.sigmoid(ad.matmul(x, w))), [w], eps=EPS)
    assert err < TOL


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=12),
       st.integers(min_value=1, max_value=12))
def test_max_pool_at_least_mean_pool(values, time):
    h = np.array(values, dtype=float).reshape(1, 1, -1)
    h = np.repeat(h, time, axis=1)  # any T with identical rows still holds
    mx = ad.max_over_time(Tensor(h)).data
    mean = ad.mean_over_time(Tensor(h)).data
    assert (mx >= mean - 1e-12).all()


def test_max_pool_at_least_mean_pool_random(rng):
    h = Tensor(rng.normal(size=(3, 7, 5)))
    assert (ad.max_over_time(h).data >= ad.mean_over_time(h).data - 1e-12).all()


def test_dropout_mask_scaling(rng):
    mask = ad.dropout_mask((10000,), 0.25, rng)
    kept = mask > 0
    assert np.allclose(mask[kept], 1.0 / 0.75)
    assert abs(kept.mean() - 0.75) < 0.02
