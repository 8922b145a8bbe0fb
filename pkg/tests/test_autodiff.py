import numpy as np
import pytest

from tailrlab import autodiff as ad
from tailrlab.autodiff import NonFiniteError, ShapeMismatchError, Tensor


def softmax_nll(x):
    return ad.neg(ad.total(ad.pick(ad.softmax_log_probs(x), [2, 0])))


def mixed_chain(x):
    return ad.total(ad.mul(ad.tanh(x), ad.sigmoid(ad.mul(x, 2.0))) + ad.exp(ad.mul(x, 0.3)))


def log_ratio(x):
    return ad.total(ad.log(ad.div(ad.add(ad.mul(x, x), 1.0), ad.add(x, 3.0))))


class TestTensor:
    def test_values_are_read_only(self):
        tensor = Tensor([[1.0, 2.0]])
        with pytest.raises(ValueError):
            tensor.values[0, 0] = 5.0

    def test_item_requires_a_single_value(self):
        assert Tensor([[4.0]]).item() == 4.0
        with pytest.raises(ShapeMismatchError) as exception_info:
            Tensor([1.0, 2.0]).item()

        assert exception_info.value.op == 'item'

    def test_zeros(self):
        assert Tensor.zeros((2, 3)).shape == (2, 3)
        assert Tensor.zeros((2, 3)).values.sum() == 0.0


class TestGradients:
    @pytest.mark.parametrize('function,point', [
        (softmax_nll, [[0.1, -0.4, 0.9], [1.2, 0.3, -0.5]]),
        (mixed_chain, [0.5, -1.1, 0.8]),
        (log_ratio, [0.7, 1.9, -1.4]),
    ])
    def test_matches_central_differences(self, function, point):
        assert ad.finite_diff_check(function, point) < 1e-5

    def test_matmul_and_bias(self):
        rng = np.random.default_rng(3)
        weights = rng.normal(size=(3, 4))
        bias = ad.constant(rng.normal(size=4))

        def affine(x):
            return ad.total(ad.tanh(ad.add_bias(ad.matmul(x, ad.constant(weights)), bias)))

        assert ad.finite_diff_check(affine, rng.normal(size=(2, 3))) < 1e-5

    def test_shared_subgraph_accumulates(self):
        x = ad.parameter([3.0])
        y = ad.total(x * x + x)
        (gradient,) = ad.gradients(y, [x])
        assert gradient.tolist() == [7.0]

    def test_scalar_broadcast_reduces_gradient(self):
        x = ad.parameter([1.0, 2.0, 3.0])
        scale = ad.parameter([2.0])
        (grad_x, grad_scale) = ad.gradients(ad.total(x * scale), [x, scale])
        assert grad_x.tolist() == [2.0, 2.0, 2.0]
        assert grad_scale.tolist() == [6.0]

    def test_stop_gradient_blocks_one_path(self):
        x = ad.parameter([2.0, -1.0])
        y = ad.total(ad.stop_gradient(x) * x)
        (gradient,) = ad.gradients(y, [x])
        assert gradient.tolist() == [2.0, -1.0]

    def test_maximum_sends_ties_to_the_constant(self):
        x = ad.parameter([0.0, 1.0, -1.0])
        (gradient,) = ad.gradients(ad.total(ad.maximum(x, 0.0)), [x])
        assert gradient.tolist() == [0.0, 1.0, 0.0]

    def test_take_rows_scatter_adds(self):
        table = ad.parameter(np.arange(6.0).reshape(3, 2))
        (gradient,) = ad.gradients(ad.total(ad.take_rows(table, [0, 2, 0])), [table])
        assert gradient.tolist() == [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]]

    def test_concat_and_slice_route_gradients_back(self):
        a = ad.parameter([[1.0, 2.0]])
        b = ad.parameter([[3.0, 4.0], [5.0, 6.0]])
        joined = ad.concat_rows([a, b])
        y = ad.total(ad.mul(ad.slice_rows(joined, 1, 3), 2.0))
        grad_a, grad_b = ad.gradients(y, [a, b])
        assert grad_a.tolist() == [[0.0, 0.0]]
        assert grad_b.tolist() == [[2.0, 2.0], [2.0, 2.0]]

    def test_constants_get_no_gradient(self):
        x = ad.constant([1.0, 2.0])
        w = ad.parameter([0.5, 0.5])
        ad.total(x * w).backward()
        assert not x.requires_grad
        assert x.gradient.values.tolist() == [0.0, 0.0]

    def test_gradients_resets_previous_values(self):
        x = ad.parameter([1.0])
        ad.total(x * 3.0).backward()
        (gradient,) = ad.gradients(ad.total(x * 2.0), [x])
        assert gradient.tolist() == [2.0]

    def test_backward_needs_a_scalar(self):
        x = ad.parameter([1.0, 2.0])
        with pytest.raises(ShapeMismatchError) as exception_info:
            (x * 2.0).backward()

        assert exception_info.value.op == 'backward'


class TestForwardValues:
    def test_softmax_log_probs_is_normalized_and_stable(self):
        logits = ad.constant([[1000.0, 1000.0], [0.0, -1000.0]])
        probs = np.exp(ad.softmax_log_probs(logits).data)
        np.testing.assert_allclose(probs.sum(axis=1), [1.0, 1.0])
        np.testing.assert_allclose(probs[0], [0.5, 0.5])

    def test_mean(self):
        assert ad.mean(ad.constant([1.0, 2.0, 6.0])).value.item() == 3.0

    def test_pick(self):
        out = ad.pick(ad.constant([[1.0, 2.0], [3.0, 4.0]]), [1, 0])
        assert out.data.tolist() == [2.0, 3.0]

    def test_reshape(self):
        assert ad.reshape(ad.constant(np.arange(6.0)), (2, 3)).shape == (2, 3)
        with pytest.raises(ShapeMismatchError):
            ad.reshape(ad.constant(np.arange(6.0)), (4, 2))

    @pytest.mark.parametrize('op,b,expected', [
        ('add', 2.0, [3.0, 4.0]),
        ('mul', 3.0, [3.0, 6.0]),
        ('max', 1.5, [1.5, 2.0]),
        ('neg', None, [-1.0, -2.0]),
    ])
    def test_elementwise_dispatch(self, op, b, expected):
        assert ad.elementwise(op, ad.constant([1.0, 2.0]), b).data.tolist() == expected

    def test_elementwise_rejects_unknown_op(self):
        with pytest.raises(ValueError) as exception_info:
            ad.elementwise('pow', ad.constant([1.0]))

        assert 'Unknown elementwise op' in str(exception_info.value)

    def test_elementwise_binary_needs_two_operands(self):
        with pytest.raises(ValueError) as exception_info:
            ad.elementwise('mul', ad.constant([1.0]))

        assert 'needs a second operand' in str(exception_info.value)


class TestErrors:
    def test_mismatched_shapes(self):
        with pytest.raises(ShapeMismatchError) as exception_info:
            ad.add(ad.constant([1.0, 2.0]), ad.constant([1.0, 2.0, 3.0]))

        assert str(exception_info.value) == 'Operation add cannot combine shapes (2,) and (3,).'

    def test_matmul_inner_dimensions(self):
        with pytest.raises(ShapeMismatchError):
            ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))

    def test_add_bias_width(self):
        with pytest.raises(ShapeMismatchError):
            ad.add_bias(ad.constant(np.ones((2, 3))), ad.constant(np.ones(2)))

    def test_take_rows_out_of_range(self):
        with pytest.raises(IndexError):
            ad.take_rows(ad.constant(np.ones((2, 3))), [2])

    @pytest.mark.parametrize('build', [
        lambda: ad.log(ad.constant([0.0])),
        lambda: ad.div(ad.constant([1.0]), ad.constant([0.0])),
        lambda: ad.exp(ad.constant([1000.0])),
    ])
    def test_non_finite_results(self, build):
        with pytest.raises(NonFiniteError):
            build()

    def test_non_finite_logits(self):
        with pytest.raises(NonFiniteError) as exception_info:
            ad.softmax_log_probs(ad.constant([0.0, float('nan')]))

        assert exception_info.value.op == 'softmax_log_probs'
