import numpy as np
import pytest

from strandsim import grad
from strandsim.errors import NumericError
from strandsim.grad import Tape, check_gradient


def numeric_grad(f, x, h=1e-6):
    """Central differences of a scalar-valued f over a flat copy of x."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.size)
    for i in range(x.size):
        xp = x.reshape(-1).copy()
        xm = x.reshape(-1).copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return out.reshape(x.shape)


def test_square_scalar():
    tape = Tape()
    x = tape.leaf(3.0)
    y = x * x
    tape.backward(y)
    assert float(y.value) == 9.0
    assert float(tape.grad(x)) == 6.0


def test_sum_gradient_is_ones():
    tape = Tape()
    x = tape.leaf(np.arange(12.0).reshape(3, 4))
    tape.backward(grad.vsum(x))
    assert np.array_equal(tape.grad(x), np.ones((3, 4)))


def test_disconnected_leaf_gradient_is_exactly_zero():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    y = tape.leaf(np.ones(3))
    loss = grad.vsum(x * x)
    tape.backward(loss)
    assert np.array_equal(tape.grad(y), np.zeros(3))


def test_backward_rejects_foreign_tape():
    t1, t2 = Tape(), Tape()
    x = t1.leaf(2.0)
    y = x * x
    with pytest.raises(NumericError):
        t2.backward(y)


def test_backward_rejects_nonscalar():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(NumericError):
        tape.backward(x * x)


def test_detach_blocks_gradient():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    frozen = (x * 2.0).detach()  # plain ndarray from here on
    loss = grad.vsum(x * frozen)
    tape.backward(loss)
    assert np.allclose(tape.grad(x), frozen)


def test_broadcasting_unbroadcast():
    tape = Tape()
    a = tape.leaf(np.ones((4, 3)))
    b = tape.leaf(np.array([1.0, 2.0, 3.0]))
    loss = grad.vsum(a * b)
    tape.backward(loss)
    assert np.allclose(tape.grad(a), np.broadcast_to([1.0, 2.0, 3.0], (4, 3)))
    assert np.allclose(tape.grad(b), np.full(3, 4.0))


@pytest.mark.parametrize(
    "name,f",
    [
        ("add", lambda x: grad.vsum(x + np.array([0.3, -0.2, 0.5, 1.0]))),
        ("sub", lambda x: grad.vsum(1.5 - x)),
        ("mul", lambda x: grad.vsum(x * x * 0.7)),
        ("div", lambda x: grad.vsum(x / np.array([1.3, -2.0, 0.7, 2.2]))),
        ("rdiv", lambda x: grad.vsum(2.0 / x)),
        ("neg", lambda x: grad.vsum(-x * x)),
        ("sqrt", lambda x: grad.vsum(grad.sqrt(x * x + 1.0))),
        ("pow3", lambda x: grad.vsum(grad.pow3(x))),
        ("maximum", lambda x: grad.vsum(grad.maximum(x, 0.9))),
        ("leaky", lambda x: grad.vsum(grad.leaky_relu(x, 0.01))),
        ("reshape", lambda x: grad.vsum(grad.reshape(x, (2, 2)) * np.array([[1.0, 2.0], [3.0, 4.0]]))),
        ("getitem", lambda x: grad.vsum(x[1:3] * 2.0)),
        ("where", lambda x: grad.vsum(grad.where(np.array([True, False, True, False]), x * 2.0, x * x))),
    ],
)
def test_elementwise_against_finite_differences(name, f):
    x = np.array([0.8, -1.4, 1.1, 2.3])
    tape = Tape()
    xv = tape.leaf(x)
    tape.backward(f(xv))
    analytic = tape.grad(xv)
    numeric = numeric_grad(lambda a: float(grad.value_of(f(Tape().leaf(a)))), x)
    assert np.abs(analytic - numeric).max() < 1e-6


def test_vector_ops_against_finite_differences():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(5, 3))

    cases = [
        lambda x: grad.vsum(grad.dot(x, x * 0.5 + 0.1)),
        lambda x: grad.vsum(grad.cross(x, np.array([0.2, -0.7, 0.4]))),
        lambda x: grad.vsum(grad.norm(x)),
        lambda x: grad.vsum(grad.normalize(x) * np.array([1.0, 2.0, 3.0])),
    ]
    for f in cases:
        tape = Tape()
        xv = tape.leaf(a)
        tape.backward(f(xv))
        analytic = tape.grad(xv)
        numeric = numeric_grad(lambda v: float(grad.value_of(f(Tape().leaf(v)))), a)
        assert np.abs(analytic - numeric).max() < 1e-6


def test_matmul_gather_scatter_concat():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(4, 3))

    def f(x):
        y = grad.matmul(x, rng_w)
        idx = np.array([0, 2, 2, 1])
        g = grad.gather(y, idx)
        s = grad.scatter_add(g, np.array([0, 1, 1, 0]), 2)
        c = grad.concat([s, s * 2.0], axis=-1)
        return grad.vsum(c * c)

    rng_w = rng.normal(size=(3, 5))
    tape = Tape()
    xv = tape.leaf(w)
    tape.backward(f(xv))
    analytic = tape.grad(xv)
    numeric = numeric_grad(lambda v: float(grad.value_of(f(Tape().leaf(v)))), w)
    assert np.abs(analytic - numeric).max() < 1e-5


def test_quat_mul_identity():
    p = np.array([1.0, 0.0, 0.0, 0.0])
    q = np.array([0.5, 0.5, 0.5, 0.5])
    assert np.allclose(grad.quat_mul(p, q), q)
    assert np.allclose(grad.quat_mul(q, p), q)


def test_quat_ops_against_finite_differences():
    rng = np.random.default_rng(11)
    q = rng.normal(size=(6, 4))
    other = rng.normal(size=(6, 4))
    weights = rng.normal(size=(6, 4))

    def f(x):
        r = grad.quat_mul(grad.quat_conj(x), other)
        return grad.vsum(r * weights) + grad.vsum(grad.quat_imag(x))

    tape = Tape()
    xv = tape.leaf(q)
    tape.backward(f(xv))
    analytic = tape.grad(xv)
    numeric = numeric_grad(lambda v: float(grad.value_of(f(Tape().leaf(v)))), q)
    assert np.abs(analytic - numeric).max() < 1e-6


def test_rotate_vec_matches_rotation_helper_and_grads():
    from strandsim import rotation

    rng = np.random.default_rng(5)
    q = rotation.qnormalize(rng.normal(size=(8, 4)))
    v = rng.normal(size=(8, 3))
    out = grad.rotate_vec(q, v)
    assert np.allclose(out, rotation.qrot(q, v), atol=1e-12)

    w = rng.normal(size=(8, 3))
    def f(x):
        return grad.vsum(grad.rotate_vec(q, x) * w)

    tape = Tape()
    xv = tape.leaf(v)
    tape.backward(f(xv))
    numeric = numeric_grad(lambda a: float(grad.value_of(f(Tape().leaf(a)))), v)
    assert np.abs(tape.grad(xv) - numeric).max() < 1e-6


def test_random_composite_against_finite_differences():
    """A ~50-op random expression built from the whole primitive set."""
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(6, 3)) * 0.8 + 0.1

    def build(x):
        a = grad.normalize(x)
        b = grad.cross(a, np.array([0.3, 0.2, -0.5]))
        c = grad.maximum(b * b, 0.01)
        d = grad.sqrt(c + 0.5)
        e = grad.concat([a, d], axis=-1)
        f1 = grad.leaky_relu(e - 0.2, 0.01)
        g = grad.matmul(grad.reshape(f1, (6, 6)), const_w)
        h = grad.gather(g, np.array([0, 3, 3, 5]))
        i = grad.scatter_add(h, np.array([1, 0, 1, 1]), 2)
        j = grad.pow3(i * 0.3)
        k = grad.dot(x, x * 0.5)
        return grad.vsum(j) + grad.vsum(k) + grad.vsum(grad.norm(x))

    const_w = rng.normal(size=(6, 4))
    tape = Tape()
    xv = tape.leaf(x0)
    tape.backward(build(xv))
    analytic = tape.grad(xv)
    numeric = numeric_grad(lambda v: float(grad.value_of(build(Tape().leaf(v)))), x0, h=1e-6)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    assert rel.max() < 1e-5


def test_check_gradient_quadratic():
    err = check_gradient(lambda x: grad.vsum(x * x * 0.5), np.array([1.0, -2.0, 3.0]))
    assert err < 1e-9


def test_gradients_deterministic():
    rng = np.random.default_rng(42)
    x = rng.normal(size=(10, 3))

    def run():
        tape = Tape()
        xv = tape.leaf(x)
        loss = grad.vsum(grad.normalize(xv) * grad.pow3(xv))
        tape.backward(loss)
        return tape.grad(xv)

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)


def test_norm_rejects_zero_vector():
    tape = Tape()
    x = tape.leaf(np.zeros(3))
    with pytest.raises(NumericError):
        grad.norm(x)


def test_div_rejects_zero_denominator():
    with pytest.raises(NumericError):
        grad.div(1.0, np.array([1.0, 0.0]))


def test_edge_diff_forward_and_gradient():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 5, 3))
    out = grad.value_of(grad.edge_diff(x))
    assert np.array_equal(out, x[:, 1:] - x[:, :-1])
    err = grad.check_gradient(lambda v: grad.vsum(grad.edge_diff(v) * out), x)
    assert err < 1e-7


def test_transport_strain_matches_composite():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(3, 6))
    v = rng.normal(size=(3, 6, 3))
    out = grad.value_of(grad.transport_strain(w, v))
    ref = w[:, :-1, None] * v[:, 1:] - w[:, 1:, None] * v[:, :-1] - np.cross(v[:, :-1], v[:, 1:])
    assert np.allclose(out, ref, atol=1e-15)
    cotangent = rng.normal(size=out.shape)
    err_w = grad.check_gradient(lambda a: grad.vsum(grad.transport_strain(a, v) * cotangent), w)
    err_v = grad.check_gradient(lambda a: grad.vsum(grad.transport_strain(w, a) * cotangent), v)
    assert err_w < 1e-7 and err_v < 1e-7


def test_weighted_sqsum_value_and_gradient():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 5, 3))
    weights = rng.uniform(0.5, 2.0, size=(4, 5))
    out = float(grad.value_of(grad.weighted_sqsum(x, weights)))
    ref = float(np.sum(weights[..., None] * x * x))
    assert abs(out - ref) < 1e-12 * abs(ref)
    err = grad.check_gradient(lambda v: grad.weighted_sqsum(v, weights), x)
    assert err < 1e-7
