import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from intnacl import autodiff as ad
from intnacl.autodiff import Tape, Tensor, backward, finite_diff_grad
from intnacl.errors import ShapeError, TapeError, ZeroNormError

from helpers import rel_err


class TestForward:
    def test_normalize_345(self):
        np.testing.assert_allclose(ad.l2_normalize_rows(Tensor([[3.0, 4.0]])).data, [[0.6, 0.8]], atol=1e-15)

    def test_exp_zero(self):
        assert ad.exp(Tensor([0.0])).data.tolist() == [1.0]

    def test_row_dot_orthogonal(self):
        assert ad.row_dot(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]])).data.tolist() == [0.0]

    def test_sign_of_zero_is_zero(self):
        np.testing.assert_array_equal(ad.sign(Tensor([-2.0, 0.0, 3.0])).data, [-1.0, 0.0, 1.0])

    def test_maximum_with_constant(self):
        np.testing.assert_array_equal(ad.maximum(Tensor([-1.0, 2.0]), 0.5).data, [0.5, 2.0])

    def test_shape_mismatch_names_op_and_shapes(self):
        with pytest.raises(ShapeError) as info:
            ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
        msg = str(info.value)
        assert "add" in msg and "(2, 3)" in msg and "(3, 2)" in msg

    def test_scalar_broadcast_allowed(self):
        np.testing.assert_array_equal((Tensor(np.ones((2, 2))) * 3.0).data, 3 * np.ones((2, 2)))

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_zero_row_normalization_errors(self):
        with pytest.raises(ZeroNormError):
            ad.l2_normalize_rows(Tensor([[1.0, 0.0], [0.0, 0.0]]))

    def test_untracked_inputs_give_untracked_output(self):
        assert not ad.exp(Tensor([1.0])).tracked

    def test_data_is_read_only(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(-1e3, 1e3, allow_nan=False)))
    def test_normalized_rows_unit_norm(self, x):
        x = x[np.linalg.norm(x, axis=1) > 1e-6]
        if x.shape[0] == 0:
            return
        norms = np.linalg.norm(ad.l2_normalize_rows(Tensor(x)).data, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)


class TestBackward:
    def test_square_at_three(self):
        tape = Tape()
        x = tape.watch(3.0)
        assert backward(x * x)[x] == pytest.approx(6.0)

    def test_normalize_gradient_at_axis_vector(self):
        tape = Tape()
        v = tape.watch([[1.0, 0.0]])
        g = backward(ad.tsum(ad.l2_normalize_rows(v)))[v]
        np.testing.assert_allclose(g, [[0.0, 1.0]], atol=1e-15)
        fd = finite_diff_grad(lambda t: ad.tsum(ad.l2_normalize_rows(t)), [[1.0, 0.0]], h=1e-6)
        np.testing.assert_allclose(g, fd, atol=1e-8)

    def test_untracked_root_errors(self):
        with pytest.raises(TapeError):
            backward(ad.exp(Tensor(1.0)))

    def test_non_scalar_root_errors(self):
        tape = Tape()
        x = tape.watch([1.0, 2.0])
        with pytest.raises(TapeError):
            backward(x * 2.0)

    def test_unreached_leaf_gets_zero(self):
        tape = Tape()
        x, y = tape.watch([1.0, 2.0]), tape.watch([[5.0]])
        g = backward(ad.tsum(x * x))
        np.testing.assert_array_equal(g[y], np.zeros((1, 1)))
        assert g[x].shape == x.shape

    def test_every_ancestor_gradient_has_value_shape(self):
        tape = Tape()
        w = tape.watch(np.ones((3, 2)))
        h = ad.tanh(ad.matmul(Tensor(np.ones((4, 3))), w))
        root = ad.tmean(ad.row_dot(h, h))
        g = backward(root)
        for t in (w, h, root):
            assert g[t].shape == t.shape

    def test_mixing_tapes_errors(self):
        a, b = Tape().watch([1.0]), Tape().watch([2.0])
        with pytest.raises(TapeError):
            ad.add(a, b)

    def test_replay_is_bitwise(self, rng):
        tape = Tape()
        x = tape.watch(rng.standard_normal((4, 3)))
        y = ad.log(ad.exp(ad.l2_normalize_rows(x)) + 1.0)
        ad.tsum(ad.row_dot(y, y))
        replayed = tape.replay()
        assert len(replayed) == len(tape)
        np.testing.assert_array_equal(replayed[y.index], y.data)

    def test_two_forward_passes_identical(self, rng):
        x = rng.standard_normal((5, 3))

        def run():
            t = Tape()
            v = t.watch(x)
            return ad.tsum(ad.exp(ad.l2_normalize_rows(v))).item()

        assert run() == run()


UNARY = {
    "exp": ad.exp,
    "log": lambda t: ad.log(ad.exp(t) + 1.0),
    "tanh": ad.tanh,
    "relu": lambda t: ad.relu(t),
    "maximum": lambda t: ad.maximum(t, 0.1),
    "normalize": ad.l2_normalize_rows,
    "row_dot": lambda t: ad.row_dot(t, t * 2.0),
    "transpose_matmul": lambda t: ad.matmul(t, ad.transpose(t)),
    "div": lambda t: t / (ad.exp(t) + 1.0),
    "sub_neg": lambda t: -(t - ad.tanh(t)),
    "mean_axis0": lambda t: ad.tmean(t, axis=0),
    "sum_axis1": lambda t: ad.tsum(t, axis=1),
    "take_rows": lambda t: ad.take_rows(t, [0, 0, 2]),
    "gather_cols": lambda t: ad.gather_cols(t, [[1, 0], [2, 2], [0, 1]]),
    "concat": lambda t: ad.concat([t, ad.exp(t)], axis=0),
    "slice_reshape": lambda t: ad.reshape(ad.slice_rows(t, 1, 3), (6,)),
    "add_bias": lambda t: ad.add_bias(t, ad.tsum(t, axis=0)),
    "sign": lambda t: ad.sign(t) * t,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_primitive_gradients_match_finite_differences(name):
    fn = UNARY[name]
    for seed in range(50):
        x0 = np.random.default_rng(seed).standard_normal((3, 3))
        if name == "relu" or name == "maximum" or name == "sign":
            x0 = x0 + np.sign(x0) * 0.2  # stay away from kinks
        tape = Tape()
        x = tape.watch(x0)
        g = backward(ad.tsum(fn(x)))[x]
        fd = finite_diff_grad(lambda t: ad.tsum(fn(t)), x0)
        assert rel_err(g, fd) <= 1e-5, (name, seed)


class TestFiniteDiff:
    def test_square(self):
        assert finite_diff_grad(lambda t: t * t, 3.0) == pytest.approx(6.0, abs=1e-8)

    def test_exp(self):
        assert finite_diff_grad(ad.exp, 0.0) == pytest.approx(1.0, abs=1e-8)

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            finite_diff_grad(ad.exp, 0.0, h=0.0)
