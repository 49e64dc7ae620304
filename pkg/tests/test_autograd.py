import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cyclasr import autograd as ag
from cyclasr.autograd import Tape, Tensor, grad_check, no_grad, parameter
from cyclasr.errors import ConfigError, ContractError, ShapeError, StateError

RNG = np.random.default_rng(0)


def _weighted(op, *shapes, gen=None, consts=()):
    """Parameters for ``shapes`` plus a loss ``sum(op(...) * W)`` with a fixed random W."""
    gen = gen or (lambda s: RNG.normal(size=s))
    params = [parameter(gen(s), name=f"x{i}") for i, s in enumerate(shapes)]
    out_shape = op(*params, *consts).shape
    w = RNG.normal(size=out_shape)

    def f():
        return (op(*params, *consts) * w).sum()

    return f, params


def _away_from_zero(s):
    x = RNG.uniform(0.3, 1.5, size=s)
    return x * RNG.choice([-1.0, 1.0], size=s)


CASES = {
    "add": (lambda a, b: a + b, [(3, 4), (4,)], None),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 1)], None),
    "mul": (lambda a, b: a * b, [(2, 3), (2, 3)], None),
    "div": (lambda a, b: a / b, [(2, 3), (2, 3)], _away_from_zero),
    "neg": (lambda a: -a, [(5,)], None),
    "matmul": (lambda a, b: a @ b, [(2, 3, 4), (4, 2)], None),
    "matmul_vec": (lambda a, b: a @ b, [(3, 4), (4,)], None),
    "tanh": (lambda a: a.tanh(), [(4, 3)], None),
    "sigmoid": (lambda a: a.sigmoid(), [(4, 3)], None),
    "relu": (lambda a: a.relu(), [(4, 3)], _away_from_zero),
    "exp": (lambda a: a.exp(), [(4,)], None),
    "log": (lambda a: a.log(), [(4,)], lambda s: RNG.uniform(0.5, 2.0, s)),
    "sqrt": (lambda a: a.sqrt(), [(4,)], lambda s: RNG.uniform(0.5, 2.0, s)),
    "pow": (lambda a: a ** 3, [(4,)], None),
    "clip": (lambda a: a.clip(-0.2, 0.2), [(6,)], _away_from_zero),
    "softmax": (lambda a: a.softmax(axis=-1), [(3, 5)], None),
    "softmax_masked": (lambda a: a.softmax(axis=-1, mask=np.array([[1, 1, 0, 1]] * 2, bool)), [(2, 4)], None),
    "log_softmax": (lambda a: a.log_softmax(axis=-1), [(3, 5)], None),
    "sum": (lambda a: a.sum(axis=1, keepdims=True), [(3, 4)], None),
    "mean": (lambda a: a.mean(axis=0), [(3, 4)], None),
    "reshape": (lambda a: a.reshape(2, 6), [(3, 4)], None),
    "transpose": (lambda a: a.transpose(1, 0, 2), [(2, 3, 4)], None),
    "slice": (lambda a: a[:, 1::2], [(3, 5)], None),
    "concat": (lambda a, b: ag.concat([a, b], axis=-1), [(2, 3), (2, 2)], None),
    "stack": (lambda a, b: ag.stack([a, b], axis=1), [(2, 3), (2, 3)], None),
    "squared_error": (lambda a, b: ag.squared_error(a, b), [(3, 2), (3, 2)], None),
    "abs_error": (lambda a, b: ag.abs_error(a, b), [(3, 2), (3, 2)], None),
    "conv1d": (lambda x, w, b: ag.conv1d(x, w, b), [(2, 5, 3), (3, 3, 2), (2,)], None),
    "embedding": (lambda t: ag.embedding(t, np.array([[0, 2], [2, 1]])), [(4, 3)], None),
    "take": (lambda a: ag.take(a, np.array([0, 0, 2]), axis=0), [(3, 2)], None),
    "pick": (lambda a: ag.pick(a, np.array([1, 0, 2])), [(3, 4)], None),
    "take_along": (lambda a: ag.take_along(a, np.array([[2, 1, 0], [0, 1, 2]]), axis=1), [(2, 3, 2)], None),
    "where": (lambda a, b: ag.where(np.array([[True, False], [False, True]]), a, b), [(2, 2), (2, 2)], None),
    "lstm_cell": (lambda zx, hc, wh: ag.lstm_cell(zx, hc, wh), [(2, 12), (2, 6), (3, 12)], None),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_gradients(name):
    op, shapes, gen = CASES[name]
    if name == "abs_error":
        gen = None
        f, params = _weighted(op, *shapes)
        params[1].data[...] = params[0].data + _away_from_zero(shapes[1])
    else:
        f, params = _weighted(op, *shapes, gen=gen)
    report = grad_check(f, params, numeric="extended")
    assert report.passed(1e-4), report.errors


def test_primitive_table_is_covered():
    covered = {n.split("_masked")[0].split("_vec")[0] for n in CASES}
    assert set(ag.PRIMITIVES) <= covered


def test_matches_hand_derivative():
    x = parameter(np.array([0.3, -1.2]))
    with Tape() as tape:
        y = (x * x * x).sum() + (x.tanh()).sum()
        g = tape.backward(y)[x]
    np.testing.assert_allclose(g, 3 * x.data ** 2 + 1 - np.tanh(x.data) ** 2, rtol=1e-12)


def test_fan_out_accumulates():
    x = parameter(np.array([2.0]))
    with Tape() as tape:
        y = x * 3.0 + x * x
        g = tape.backward(y)[x]
    assert g[0] == pytest.approx(3.0 + 4.0)


def test_backward_requires_scalar():
    x = parameter(np.ones(3))
    with Tape() as tape:
        y = x * 2.0
        with pytest.raises(ContractError):
            tape.backward(y)


def test_tape_cannot_be_reused():
    x = parameter(np.ones(2))
    with Tape() as tape:
        y = (x * x).sum()
        tape.backward(y)
        with pytest.raises(StateError):
            tape.backward(y)


def test_no_grad_records_nothing():
    x = parameter(np.ones(2))
    with Tape() as tape:
        with no_grad():
            y = (x * x).sum()
        assert len(tape) == 0
        assert not y.requires_grad


def test_unreachable_params_get_zero_gradient():
    x, z = parameter(np.ones(2)), parameter(np.ones(3))
    with Tape() as tape:
        g = tape.backward((x * 2.0).sum(), [x, z])
    np.testing.assert_array_equal(g[z], np.zeros(3))


def test_shape_errors_are_reported():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_unknown_primitive():
    with pytest.raises(ConfigError):
        ag.apply_primitive("nope", (Tensor(1.0),))


def test_grad_check_flags_wrong_gradient():
    x = parameter(np.array([0.5, 1.5]))

    def f():
        # the recorded backward (2x) disagrees with the value (x^2 + x)
        with no_grad():
            extra = x.data.sum()
        return (x * x).sum() + extra

    assert not grad_check(f, [x]).passed()


def test_grad_check_rejects_bad_precision():
    with pytest.raises(ConfigError):
        grad_check(lambda: Tensor(1.0), [], numeric="quad")


def test_extended_precision_resolves_tiny_gradients():
    # d/dx of 1e3 + 1e-7 * x^2 at x=1 is 2e-7: below the float64 central-difference floor
    x = parameter(np.array([1.0]))

    def f():
        return (x * x * 1e-7).sum() + 1e3

    assert grad_check(f, [x], numeric="extended").passed(1e-4)


@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-3, 3)))
def test_softmax_rows_are_distributions(x):
    p = Tensor(x).softmax().data
    assert np.all(p >= 0)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


@given(arrays(np.float64, (2, 3), elements=st.floats(-5, 5)), arrays(np.float64, (3,), elements=st.floats(-5, 5)))
def test_broadcast_gradient_shapes(a, b):
    pa, pb = parameter(a), parameter(b)
    with Tape() as tape:
        g = tape.backward((pa * pb).sum(), [pa, pb])
    assert g[pa].shape == a.shape and g[pb].shape == b.shape
    np.testing.assert_allclose(g[pb], a.sum(axis=0))
