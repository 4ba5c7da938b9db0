import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from privcdr.numeric import (
    MLP,
    Adam,
    CheckpointError,
    Parameter,
    ShapeError,
    Tape,
    Tensor,
    add,
    bce_with_logits,
    check_gradients,
    concat_cols,
    cosine_rows,
    div,
    dot_rows,
    dropout_apply,
    dumps_checkpoint,
    exp,
    gather_rows,
    log,
    logsumexp_rows,
    loads_checkpoint,
    matmul,
    mul,
    reduce_mean,
    reduce_sum,
    relu,
    row_sum,
    sigmoid,
    slice_cols,
    softmax_rows,
    spmm,
    sub,
)

RNG = np.random.default_rng(1234)


def leaf(shape, low=-1.0, high=1.0, rng=RNG):
    return Parameter(rng.uniform(low, high, size=shape).astype(np.float64), "x")


def readout(t):
    """Project a tensor to a scalar with fixed random weights."""
    w = np.random.default_rng(t.shape[0] * 31 + t.shape[1]).normal(size=t.shape)
    return reduce_sum(mul(t, w))


# -- forward examples -----------------------------------------------------------

def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(a, np.eye(2)).data, a.data)


def test_cosine_orthogonal_rows():
    assert cosine_rows([[1.0, 0.0]], [[0.0, 1.0]]).item() == 0.0


def test_sigmoid_zero():
    assert sigmoid(0.0).item() == 0.5


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError, match=r"\(2, 2\).*\(3, 2\)"):
        add(np.ones((2, 2)), np.ones((3, 2)))
    with pytest.raises(ShapeError):
        concat_cols([np.ones((2, 1)), np.ones((3, 1))])


# -- backward examples -------------------------------------------------------------

def test_sum_gradient_is_ones():
    w = Parameter(np.arange(4.0).reshape(2, 2), "w")
    with Tape() as tape:
        loss = reduce_sum(w)
    tape.backward(loss)
    assert np.array_equal(w.grad, np.ones((2, 2)))


def test_sigmoid_gradient_at_zero():
    w = Parameter(np.zeros((1, 1)), "w")
    with Tape() as tape:
        loss = sigmoid(w) * 1.0
    tape.backward(loss)
    assert w.grad[0, 0] == 0.25


def test_backward_twice_accumulates():
    w = Parameter(np.ones((2, 2)), "w")
    with Tape() as tape:
        loss = reduce_sum(mul(w, 3.0))
    tape.backward(loss)
    tape.backward(loss)
    assert np.array_equal(w.grad, np.full((2, 2), 6.0))


def test_loss_not_on_tape():
    w = Parameter(np.ones((1, 1)), "w")
    with Tape():
        loss = reduce_sum(w * 2.0)
    with pytest.raises(ValueError, match="not recorded"):
        Tape().backward(loss)


def test_unused_parameter_gradient_is_zero():
    used, unused = Parameter(np.ones((1, 2)), "u"), Parameter(np.ones((1, 2)), "v")
    with Tape() as tape:
        loss = reduce_sum(used)
    tape.backward(loss)
    assert np.array_equal(unused.grad, np.zeros((1, 2)))


def test_tape_replays_in_reverse_order():
    w = Parameter(np.ones((2, 2)), "w")
    with Tape() as tape:
        loss = reduce_mean(exp(relu(matmul(w, w))))
    assert tape.op_names == ["matmul", "relu", "exp", "mean"]
    visited = []
    for node in tape.nodes:
        fn = node._backward

        def spy(g, fn=fn, name=node.name):
            visited.append(name)
            return fn(g)

        node._backward = spy
    tape.backward(loss)
    assert visited == ["mean", "exp", "relu", "matmul"]


def test_no_recording_outside_a_tape():
    w = Parameter(np.ones((1, 1)), "w")
    out = exp(w)
    assert out.is_leaf


def test_python_scalars_keep_tensor_dtype():
    x = Tensor(np.ones((2, 2), dtype=np.float32))
    for out in (x + 0.5, 0.5 + x, x * 3.0, x / 2.0, 1.0 - x, -x):
        assert out.data.dtype == np.float32


# -- finite-difference suite (64-bit) -----------------------------------------------

UNARY = {
    "exp": exp,
    "log": lambda x: log(x),
    "relu": relu,
    "sigmoid": sigmoid,
    "reduce_mean": reduce_mean,
    "row_sum": row_sum,
    "logsumexp_rows": logsumexp_rows,
    "softmax_rows": softmax_rows,
    "slice_cols": lambda x: slice_cols(x, 1, 3),
    "gather_rows": lambda x: gather_rows(x, [0, 2, 2, 1, 0]),
    "dropout_apply": lambda x: dropout_apply(x, np.array([[0.0, 1.25, 1.25, 0.0]])),
    "spmm": lambda x: spmm(sp.random(5, 3, density=0.6, random_state=3, format="csr"), x),
    "bce_with_logits": lambda x: bce_with_logits(x, (np.arange(12).reshape(3, 4) % 2)),
}

BINARY = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "concat_cols": lambda a, b: concat_cols([a, b]),
    "cosine_rows": cosine_rows,
    "dot_rows": dot_rows,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_gradients(name):
    low = 0.5 if name == "log" else -1.0
    x = leaf((3, 4), low=low)
    if name == "relu":  # keep away from the kink
        x.data[np.abs(x.data) < 0.1] += 0.3
    err = check_gradients(lambda: readout(UNARY[name](x)), [x])
    assert err < 1e-4, f"{name}: {err}"


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_primitive_gradients(name):
    a, b = leaf((3, 4)), leaf((3, 4))
    if name == "div":
        b.data[...] = np.abs(b.data) + 0.5
    err = check_gradients(lambda: readout(BINARY[name](a, b)), [a, b])
    assert err < 1e-4, f"{name}: {err}"


def test_matmul_gradients():
    a, b = leaf((3, 4)), leaf((4, 2))
    assert check_gradients(lambda: readout(matmul(a, b)), [a, b]) < 1e-4


def test_broadcast_gradients():
    a, row, col, s = leaf((3, 4)), leaf((1, 4)), leaf((3, 1)), leaf((1, 1))
    err = check_gradients(lambda: readout(mul(add(a, row), col) / (exp(s) + 1.0)), [a, row, col, s])
    assert err < 1e-4


def test_mlp_gradients_three_layers():
    mlp = MLP("m", [5, 7, 6, 3], seed=0, dtype=np.float64)
    for p in mlp.parameters():  # nonzero biases so every path is exercised
        p.data += RNG.normal(scale=0.1, size=p.shape)
    x = Tensor(RNG.normal(size=(4, 5)))
    err = check_gradients(lambda: readout(mlp(x)), mlp.parameters())
    assert err < 1e-4


def test_cosine_gradient_handles_zero_rows():
    a = Parameter(np.array([[0.0, 0.0], [1.0, 2.0]]), "a")
    b = Parameter(np.array([[1.0, 1.0], [0.5, -1.0]]), "b")
    with Tape() as tape:
        loss = reduce_sum(cosine_rows(a, b))
    tape.backward(loss)
    assert np.all(np.isfinite(a.grad)) and np.all(np.isfinite(b.grad))


def test_concat_backward_splits_exactly():
    a, b, c = leaf((2, 3)), leaf((2, 1)), leaf((2, 2))
    g = RNG.normal(size=(2, 6))
    with Tape() as tape:
        loss = reduce_sum(mul(concat_cols([a, b, c]), g))
    tape.backward(loss)
    assert np.array_equal(np.concatenate([a.grad, b.grad, c.grad], axis=1), g)


def test_gather_backward_accumulates_repeats():
    x = leaf((3, 2))
    g = RNG.normal(size=(3, 2))
    with Tape() as tape:
        loss = reduce_sum(mul(gather_rows(x, [1, 1, 2]), g))
    tape.backward(loss)
    assert np.allclose(x.grad[1], g[0] + g[1], rtol=0, atol=1e-15)
    assert np.array_equal(x.grad[2], g[2])
    assert np.array_equal(x.grad[0], np.zeros(2))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_softmax_rows_are_distributions(rows, cols, seed):
    x = np.random.default_rng(seed).normal(scale=5, size=(rows, cols))
    out = softmax_rows(x).data
    assert np.all(out >= 0) and np.allclose(out.sum(axis=1), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_logsumexp_matches_naive(seed):
    x = np.random.default_rng(seed).normal(size=(4, 5))
    assert np.allclose(logsumexp_rows(x).data[:, 0], np.log(np.exp(x).sum(axis=1)), rtol=0, atol=1e-12)


def test_bce_with_logits_values():
    assert bce_with_logits([[0.0]], [[1]]).item() == pytest.approx(np.log(2), abs=1e-15)
    assert bce_with_logits([[60.0]], [[1]]).item() < 1e-25
    assert bce_with_logits([[-60.0]], [[0]]).item() < 1e-25
    assert np.isfinite(bce_with_logits([[-800.0]], [[1]]).item())


# -- Adam -------------------------------------------------------------------------

def adam_reference(theta, grads, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar textbook Adam written independently of the library."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
    return theta


def test_adam_zero_gradient_leaves_params():
    p = Parameter(np.array([[1.5, -2.0]]), "p")
    opt = Adam([p])
    p.grad = np.zeros_like(p.data)
    opt.step()
    assert np.array_equal(p.data, [[1.5, -2.0]])


def test_adam_first_step_is_lr():
    p = Parameter(np.zeros((1, 1)), "p")
    opt = Adam([p], lr=0.001)
    p.grad = np.full((1, 1), 0.5)
    opt.step()
    assert abs(p.data[0, 0] + 0.001) < 1e-6
    assert opt.t == 1


def test_adam_matches_reference_over_steps():
    grads = RNG.normal(size=25)
    p = Parameter(np.full((1, 1), 0.3), "p")
    opt = Adam([p], lr=0.01)
    for g in grads:
        p.grad = np.full((1, 1), g)
        opt.step()
    assert p.data[0, 0] == pytest.approx(adam_reference(0.3, grads, lr=0.01), abs=1e-13)


def test_adam_moments_shape_and_counter():
    p = Parameter(np.ones((3, 2)), "p")
    opt = Adam([p])
    for k in range(3):
        p.grad = np.ones((3, 2))
        opt.step()
        assert opt.t == k + 1
    state = opt.state_dict()
    assert state["m"]["p"].shape == (3, 2) and state["v"]["p"].shape == (3, 2)


def test_adam_rejects_non_finite():
    p = Parameter(np.ones((1, 1)), "p")
    opt = Adam([p])
    p.grad = np.array([[np.nan]])
    with pytest.raises(FloatingPointError, match="'p'"):
        opt.step()
    assert opt.t == 0


def _ten_adam_steps(seed):
    mlp = MLP("net", [4, 8, 1], seed=seed)
    opt = Adam(mlp.parameters())
    x = Tensor(np.random.default_rng(seed).normal(size=(16, 4)).astype(np.float32))
    for _ in range(10):
        opt.zero_grad()
        with Tape() as tape:
            loss = reduce_mean(mul(mlp(x), mlp(x)))
        tape.backward(loss)
        opt.step()
    return [p.data.copy() for p in mlp.parameters()]


def test_adam_runs_are_bit_identical():
    a, b = _ten_adam_steps(3), _ten_adam_steps(3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


# -- checkpoints ---------------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact():
    params = {"a.weight": RNG.normal(size=(3, 4)).astype(np.float32), "b": np.zeros((1, 1), np.float32),
              "ünï": RNG.normal(size=(2, 5)).astype(np.float32)}
    back = loads_checkpoint(dumps_checkpoint(params))
    assert list(back) == list(params)
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()


def test_checkpoint_layout():
    blob = dumps_checkpoint({"w": np.array([[1.0, 2.0]], np.float32)})
    assert blob[:4] == b"P2CK" and blob[4:6] == b"\x01\x00"
    assert blob[6:8] == b"\x01\x00" and blob[8:9] == b"w"
    assert blob[9:17] == b"\x01\x00\x00\x00\x02\x00\x00\x00"
    assert len(blob) == 17 + 8


def test_checkpoint_errors():
    blob = dumps_checkpoint({"w": np.ones((2, 2), np.float32)})
    with pytest.raises(CheckpointError, match="not a P2CK"):
        loads_checkpoint(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError, match="truncated"):
        loads_checkpoint(blob[:-3])
    with pytest.raises(CheckpointError, match="version"):
        loads_checkpoint(blob[:4] + b"\x09\x00" + blob[6:])
