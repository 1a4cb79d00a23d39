import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moocdrop import autodiff as ad
from moocdrop.autodiff import Tensor
from moocdrop.errors import DimensionError

from gradcheck import finite_diff, assert_grads_close


def _leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _check_op(build, leaves, tol=1e-5):
    """FD-check d(sum of op output)/d(leaf) for every leaf."""
    for t in leaves:
        t.zero_grad()
    out = build()
    loss = ad.tsum(out)
    loss.backward()
    analytic = [t.grad.copy() for t in leaves]

    def f():
        return float(ad.tsum(build()).data)

    numeric = finite_diff(f, [t.data for t in leaves])
    assert_grads_close(analytic, numeric, tol=tol)


class TestElementwiseOps:
    @pytest.mark.parametrize("opname", ["add", "sub", "mul"])
    def test_binary_broadcast_grads(self, opname):
        rng = np.random.default_rng(7)
        op = getattr(ad, opname)
        for _ in range(25):
            a = _leaf(rng, 4, 3)
            b = _leaf(rng, 3)  # broadcast over rows
            _check_op(lambda: op(a, b), [a, b])

    @pytest.mark.parametrize("opname", ["sigmoid", "tanh", "exp", "neg"])
    def test_unary_grads(self, opname):
        rng = np.random.default_rng(11)
        op = getattr(ad, opname)
        for _ in range(25):
            a = _leaf(rng, 5)
            _check_op(lambda: op(a), [a])

    def test_relu_subgradient_zero_at_kink(self):
        a = Tensor(np.array([0.0, -1.0, 2.0]), requires_grad=True)
        ad.tsum(ad.relu(a)).backward()
        assert np.array_equal(a.grad, np.array([0.0, 0.0, 1.0]))

    def test_log_and_clip_grads(self):
        rng = np.random.default_rng(13)
        for _ in range(25):
            a = Tensor(rng.uniform(0.1, 2.0, size=6), requires_grad=True)
            _check_op(lambda: ad.log(a), [a])
            _check_op(lambda: ad.clip_min(a, 0.5), [a])

    def test_clip_min_blocks_gradient_below_threshold(self):
        a = Tensor(np.array([0.2, 0.9]), requires_grad=True)
        ad.tsum(ad.log(ad.clip_min(a, 0.5))).backward()
        assert a.grad[0] == 0.0
        assert a.grad[1] == pytest.approx(1.0 / 0.9)


class TestMatmul:
    @pytest.mark.parametrize("sa,sb", [((4, 3), (3, 5)), ((4, 3), (3,)), ((3,), (3, 5)), ((3,), (3,))])
    def test_grads_all_rank_combinations(self, sa, sb):
        rng = np.random.default_rng(17)
        for _ in range(25):
            a = _leaf(rng, *sa)
            b = _leaf(rng, *sb)
            _check_op(lambda: ad.matmul(a, b), [a, b])

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


class TestStructuralOps:
    def test_concat_grads(self):
        rng = np.random.default_rng(19)
        for _ in range(25):
            a = _leaf(rng, 4, 3)
            b = _leaf(rng, 4, 2)
            _check_op(lambda: ad.concat(a, b), [a, b])

    def test_take_rows_grads_accumulate_duplicates(self):
        table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
        idx = np.array([0, 2, 0])
        ad.tsum(ad.take_rows(table, idx)).backward()
        expect = np.zeros((4, 3))
        expect[0] = 2.0  # row 0 gathered twice
        expect[2] = 1.0
        assert np.array_equal(table.grad, expect)

    def test_gather_rc_grads(self):
        rng = np.random.default_rng(23)
        a = _leaf(rng, 4, 5)
        rows = np.array([0, 1, 1, 3])
        cols = np.array([2, 2, 2, 4])
        _check_op(lambda: ad.gather_rc(a, rows, cols), [a])

    def test_sum_axis_and_mean_grads(self):
        rng = np.random.default_rng(29)
        a = _leaf(rng, 3, 4)
        _check_op(lambda: ad.tsum(a, axis=1), [a])
        _check_op(lambda: ad.tmean(a), [a])


class TestSoftmax:
    def test_matches_analytic_two_point(self):
        p = ad.softmax(Tensor(np.array([0.0, 0.0]))).data
        assert np.allclose(p, [0.5, 0.5], atol=1e-15)
        p = ad.softmax(Tensor(np.array([np.log(2.0), 0.0]))).data
        assert np.allclose(p, [2.0 / 3.0, 1.0 / 3.0], atol=1e-14)

    def test_large_inputs_stable(self):
        p = ad.softmax(Tensor(np.array([1000.0, 0.0]))).data
        assert np.all(np.isfinite(p))
        assert p[0] == pytest.approx(1.0)
        assert p[1] == pytest.approx(0.0, abs=1e-300)

    def test_grads(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            a = _leaf(rng, 3, 6)
            w = rng.standard_normal((3, 6))  # weight so the loss is not constant
            _check_op(lambda: ad.mul(ad.softmax(a), w), [a])

    @settings(max_examples=60, deadline=None)
    @given(
        vec=st.lists(st.floats(-50, 50), min_size=1, max_size=8),
        shift=st.floats(-100, 100),
    )
    def test_sums_to_one_and_translation_invariant(self, vec, shift):
        v = np.array(vec)
        p = ad.softmax(Tensor(v)).data
        assert abs(p.sum() - 1.0) <= 1e-12
        assert np.all(p > 0)
        q = ad.softmax(Tensor(v + shift)).data
        assert np.allclose(p, q, atol=1e-12)


class TestBackwardContract:
    def test_constant_loss_leaves_gradients_zero(self):
        p = Tensor(np.ones(3), requires_grad=True)
        loss = Tensor(np.array(5.0))
        loss.backward()
        assert np.array_equal(p.grad, np.zeros(3))

    def test_sum_of_parameters_gives_unit_gradients(self):
        p = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        ad.tsum(p).backward()
        assert np.array_equal(p.grad, np.ones((2, 3)))

    def test_unused_parameter_gradient_stays_zero(self):
        used = Tensor(np.ones(2), requires_grad=True)
        unused = Tensor(np.ones(2), requires_grad=True)
        ad.tsum(ad.mul(used, 3.0)).backward()
        assert np.array_equal(used.grad, np.full(2, 3.0))
        assert np.array_equal(unused.grad, np.zeros(2))

    def test_backward_requires_scalar(self):
        p = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(DimensionError):
            (p + 1.0).backward()

    def test_gradients_accumulate_across_backwards(self):
        p = Tensor(np.ones(2), requires_grad=True)
        ad.tsum(p).backward()
        ad.tsum(p).backward()
        assert np.array_equal(p.grad, np.full(2, 2.0))

    def test_deep_chain_does_not_hit_recursion_limit(self):
        p = Tensor(np.array([0.5]), requires_grad=True)
        x = p
        for _ in range(5000):
            x = ad.mul(x, 1.0001)
        ad.tsum(x).backward()
        assert np.all(np.isfinite(p.grad))

    def test_shared_subexpression_gradient(self):
        # loss = (x*x) + (x*x) reuses one node; gradient must count both paths
        x = Tensor(np.array([3.0]), requires_grad=True)
        sq = ad.mul(x, x)
        ad.tsum(sq + sq).backward()
        assert x.grad[0] == pytest.approx(12.0)
