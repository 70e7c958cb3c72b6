"""Forward ops, backward accumulation, and finite-difference agreement."""
import numpy as np
import pytest

from fairbn import tensor as T
from fairbn.tensor import DomainError, ShapeError, Tensor, grad_check


def test_matmul_identity():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(3, 3))
    out = T.matmul(Tensor(np.eye(3)), Tensor(m))
    np.testing.assert_array_equal(out.values, m)


def test_row_softmax_uniform():
    out = Tensor([[0.0, 0.0, 0.0]]).softmax(axis=1)
    np.testing.assert_allclose(out.values, [[1 / 3, 1 / 3, 1 / 3]], rtol=0, atol=1e-15)


def test_relu_definition():
    out = Tensor([-2.0, 0.0, 5.0]).relu()
    np.testing.assert_array_equal(out.values, [0.0, 0.0, 5.0])


def test_softmax_overflow_safe():
    out = Tensor([[1000.0, 0.0]]).softmax(axis=1)
    assert np.isfinite(out.values).all()
    np.testing.assert_allclose(out.values.sum(), 1.0)


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_elementwise_square():
    x = Tensor([1.0, 2.0, 3.0])
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0], rtol=1e-15)


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0])
    with pytest.raises(ShapeError):
        (x * x).backward()


def test_backward_accumulates_over_reuse():
    x = Tensor([2.0])
    y = x * x + x * 3.0
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [7.0])


def test_backward_linearity_of_accumulation():
    # backward on l1 + l2 equals two separate passes summed into the leaf
    rng = np.random.default_rng(1)
    vals = rng.normal(size=5)

    x = Tensor(vals.copy())
    (x.square().sum() + (x * 2.0).sum()).backward()
    combined = x.grad.copy()

    y = Tensor(vals.copy())
    y.square().sum().backward()
    (y * 2.0).sum().backward()
    np.testing.assert_allclose(y.grad, combined, rtol=1e-15)


def test_shape_mismatch_reports_both_shapes():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((4, 5)))
    with pytest.raises(ShapeError) as exc:
        a + b
    assert "(2, 3)" in str(exc.value) and "(4, 5)" in str(exc.value)


def test_matmul_inner_dim_mismatch():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_log_domain_error():
    with pytest.raises(DomainError):
        Tensor([1.0, 0.0]).log()
    with pytest.raises(DomainError):
        Tensor([-1.0]).log()


def test_take_rows_duplicates_accumulate():
    x = Tensor([[1.0], [2.0], [3.0]])
    out = T.take_rows(x, [0, 0, 2])
    np.testing.assert_array_equal(out.values, [[1.0], [1.0], [3.0]])
    out.sum().backward()
    np.testing.assert_array_equal(x.grad, [[2.0], [0.0], [1.0]])


def test_concat_roundtrip_grads():
    a = Tensor(np.ones((2, 2)))
    b = Tensor(np.ones((3, 2)))
    out = T.concat([a, b], axis=0)
    assert out.shape == (5, 2)
    (out * 2.0).sum().backward()
    np.testing.assert_array_equal(a.grad, 2 * np.ones((2, 2)))
    np.testing.assert_array_equal(b.grad, 2 * np.ones((3, 2)))


def test_concat_shape_mismatch():
    with pytest.raises(ShapeError):
        T.concat([Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3)))], axis=0)


def test_take_rows_out_of_range():
    with pytest.raises(ShapeError):
        T.take_rows(Tensor(np.zeros((2, 2))), [0, 2])


def test_forward_determinism():
    rng = np.random.default_rng(3)
    vals = rng.normal(size=(4, 4))
    a = Tensor(vals).softmax(axis=1).values
    b = Tensor(vals).softmax(axis=1).values
    np.testing.assert_array_equal(a, b)


def test_broadcasting_grad_unbroadcasts():
    x = Tensor(np.ones((4, 3)))
    b = Tensor(np.zeros(3))
    ((x + b) * 2.0).sum().backward()
    np.testing.assert_array_equal(b.grad, [8.0, 8.0, 8.0])
    np.testing.assert_array_equal(x.grad, 2 * np.ones((4, 3)))


# -- finite-difference agreement ---------------------------------------------------


def _fd_check(builder, tensors, tol=1e-4, step=1e-5):
    result = grad_check(builder, tensors, step=step)
    assert result.max_relative_error < tol, result


UNARY_OPS = {
    "relu": lambda x: x.relu().sum(),
    "exp": lambda x: x.exp().sum(),
    "log": lambda x: x.log().sum(),
    "sqrt": lambda x: x.sqrt().sum(),
    "square": lambda x: x.square().sum(),
    "abs": lambda x: x.abs().sum(),
    "softmax": lambda x: (x.softmax(axis=1).square()).sum(),
    "mean_axis0": lambda x: x.mean(axis=0).square().sum(),
    "sum_axis1": lambda x: x.sum(axis=1, keepdims=True).square().sum(),
    "neg": lambda x: (-x).square().sum(),
}


@pytest.mark.parametrize("name", sorted(UNARY_OPS))
def test_unary_op_gradients_match_finite_differences(name):
    # >=100 randomized trials spread over the op set (10 ops x 12 trials)
    op = UNARY_OPS[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    for _ in range(12):
        vals = rng.normal(size=(3, 4))
        if name in ("log", "sqrt"):
            vals = np.abs(vals) + 0.5
        if name in ("relu", "abs"):
            vals = vals + np.sign(vals) * 0.05  # keep away from the kink
        _fd_check(op, [Tensor(vals)])


@pytest.mark.parametrize("trial", range(12))
def test_binary_op_gradients_match_finite_differences(trial):
    rng = np.random.default_rng(100 + trial)
    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(3, 4)) + 3.0)
    c = Tensor(rng.normal(size=(4, 2)))

    def composite(a, b, c):
        d = (a * b + a - b) / b
        return T.matmul(d, c).square().sum()

    _fd_check(composite, [a, b, c])


@pytest.mark.parametrize("trial", range(4))
def test_structural_op_gradients(trial):
    rng = np.random.default_rng(200 + trial)
    a = Tensor(rng.normal(size=(3, 2)))
    b = Tensor(rng.normal(size=(2, 2)))

    def builder(a, b):
        joined = T.concat([a, b], axis=0)
        picked = T.take_rows(joined, [4, 0, 0, 2])
        return picked.square().sum()

    _fd_check(builder, [a, b])


def test_composite_mlp_loss_matches_finite_differences():
    rng = np.random.default_rng(7)
    w1 = Tensor(rng.normal(size=(4, 5)) * 0.5)
    b1 = Tensor(rng.normal(size=5) * 0.1)
    w2 = Tensor(rng.normal(size=(5, 3)) * 0.5)
    x = rng.normal(size=(6, 4))

    def builder(w1, b1, w2):
        h = (T.matmul(Tensor(x), w1) + b1).relu()
        logits = T.matmul(h, w2)
        return (logits.softmax(axis=1).square()).mean()

    _fd_check(builder, [w1, b1, w2])


# -- grad_check contract -------------------------------------------------------


def test_grad_check_quadratic_is_tight():
    theta = Tensor([0.3, -1.2, 2.0])
    result = grad_check(lambda t: (t * t).sum(), [theta])
    assert result.max_relative_error < 1e-6


def test_grad_check_constant_loss():
    theta = Tensor([1.0, 2.0])
    result = grad_check(lambda t: Tensor(5.0) * 1.0, [theta])
    assert result.max_relative_error == 0.0


def test_grad_check_flags_nondeterministic_builder():
    theta = Tensor([1.0])
    rng = np.random.default_rng()

    def noisy(t):
        return (t * float(rng.normal())).sum()

    with pytest.raises(RuntimeError, match="deterministic"):
        grad_check(noisy, [theta])


def test_grad_check_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        grad_check(lambda t: t.sum(), [Tensor([1.0])], step=0.0)


def test_grad_check_worst_index_is_global_flat_index():
    a = Tensor([1.0, 1.0])
    b = Tensor([1.0, 1.0, 1.0])

    def builder(a, b):
        return a.sum() + (b * b * b).sum() * 1000.0

    result = grad_check(builder, [a, b], step=1e-2)  # large step: cubic truncation
    assert result.worst_parameter_index >= 2  # lands inside b's range
