import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survwalk import diffcore as dc
from survwalk.errors import ShapeError

from conftest import numeric_grad, rel_error


def _away_from(x, points, gap=1e-3):
    for p in points:
        near = np.abs(x - p) < gap
        x[near] = p + np.where(x[near] >= p, gap, -gap) * 2
    return x


# each case: (builder of inputs, function of tensors)
def _cases():
    def mat(rng, *s):
        return rng.standard_normal(s)

    return {
        "matmul": (lambda r: [mat(r, 3, 4), mat(r, 4, 2)], lambda a, b: dc.matmul(a, b)),
        "matvec": (lambda r: [mat(r, 3, 4), mat(r, 4)], lambda a, b: dc.matmul(a, b)),
        "add": (lambda r: [mat(r, 3, 4), mat(r, 3, 4)], lambda a, b: a + b),
        "add_batch": (lambda r: [mat(r, 5, 3), mat(r, 3)], lambda a, b: a + b),
        "add_scalar": (lambda r: [mat(r, 5, 3), mat(r)], lambda a, b: a + b),
        "mul": (lambda r: [mat(r, 3, 4), mat(r, 3, 4)], lambda a, b: a * b),
        "mul_batch": (lambda r: [mat(r, 5, 3), mat(r, 3)], lambda a, b: a * b),
        "neg": (lambda r: [mat(r, 4)], lambda a: -a),
        "exp": (lambda r: [mat(r, 6)], dc.exp),
        "log": (lambda r: [r.uniform(0.1, 3.0, 6)], dc.log),
        "relu": (lambda r: [_away_from(mat(r, 6), [0.0])], dc.relu),
        "sigmoid": (lambda r: [3 * mat(r, 6)], dc.sigmoid),
        "softplus": (lambda r: [3 * mat(r, 6)], dc.softplus),
        "clip": (lambda r: [_away_from(2 * mat(r, 6), [-1.0, 1.0])], lambda a: dc.clip(a, -1.0, 1.0)),
        "sum_all": (lambda r: [mat(r, 3, 4)], lambda a: dc.reduce_sum(a)),
        "sum_axis0": (lambda r: [mat(r, 3, 4)], lambda a: dc.reduce_sum(a, 0)),
        "sum_axis1": (lambda r: [mat(r, 3, 4)], lambda a: dc.reduce_sum(a, 1)),
        "lse_all": (lambda r: [3 * mat(r, 7)], lambda a: dc.reduce_logsumexp(a)),
        "lse_axis1": (lambda r: [3 * mat(r, 3, 5)], lambda a: dc.reduce_logsumexp(a, 1)),
        "cumlse": (lambda r: [3 * mat(r, 8)], dc.cumlogsumexp),
        "slice": (lambda r: [mat(r, 4, 6)], lambda a: a[:, 1:4]),
        "concat": (lambda r: [mat(r, 3, 2), mat(r, 3, 4)], lambda a, b: dc.concat([a, b], axis=1)),
        "take": (lambda r: [mat(r, 5)], lambda a: dc.take(a, [4, 0, 0, 2])),
        "reshape": (lambda r: [mat(r, 2, 6)], lambda a: dc.reshape(a, (3, 4))),
    }


CASES = _cases()


@pytest.mark.parametrize("name", sorted(CASES))
def test_every_op_matches_finite_differences(name):
    make, fn = CASES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(100):
        arrays = make(rng)
        out_shape = fn(*[dc.constant(a) for a in arrays]).shape
        w = rng.standard_normal(out_shape)

        def f():
            return float(np.sum(w * fn(*[dc.constant(a) for a in arrays]).data))

        leaves = [dc.parameter(a) for a in arrays]
        grads = dc.backward(dc.reduce_sum(fn(*leaves) * w))
        worst = max(worst, rel_error([grads[t] for t in leaves], numeric_grad(f, arrays)))
    assert worst < 1e-5, f"{name}: worst relative error {worst:.2e}"


class TestForward:
    def test_exp_identity(self):
        assert dc.exp(dc.constant([0.0])).data.tolist() == [1.0]

    def test_logsumexp_of_two_zeros(self):
        assert dc.reduce_logsumexp(dc.constant([0.0, 0.0])).data == pytest.approx(0.693147, abs=1e-6)

    def test_matmul_identity(self):
        out = dc.matmul(dc.constant(np.eye(2)), dc.constant([[3.0], [4.0]]))
        assert out.data.tolist() == [[3.0], [4.0]]

    def test_cumlogsumexp_matches_naive(self, rng):
        x = rng.standard_normal(10)
        np.testing.assert_allclose(dc.cumlogsumexp(dc.constant(x)).data, np.log(np.cumsum(np.exp(x))))

    def test_exp_clamp_keeps_output_finite(self):
        out = dc.exp(dc.constant([1e6, 30.0, -1e6])).data
        assert np.all(np.isfinite(out))
        assert out[0] == out[1] == np.exp(30.0)

    def test_log_clamp_keeps_output_finite(self):
        out = dc.log(dc.constant([0.0, -5.0, 1e-300])).data
        assert np.all(out == np.log(1e-12))

    @settings(max_examples=200, deadline=None)
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_guards_are_finite_for_all_finite_inputs(self, v):
        assert np.isfinite(dc.exp(dc.constant([v])).data).all()
        assert np.isfinite(dc.log(dc.constant([v])).data).all()

    def test_shape_error_names_op_and_shapes(self):
        with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
            dc.matmul(dc.constant(np.ones((2, 3))), dc.constant(np.ones((2, 3))))
        with pytest.raises(ShapeError, match="add"):
            dc.constant(np.ones((2, 3))) + dc.constant(np.ones(2))

    def test_dtype_is_preserved(self):
        a = dc.constant(np.ones(3, dtype=np.float32))
        assert (a * 0.5 + 1.0).dtype == np.float32
        assert dc.reduce_logsumexp(a).dtype == np.float32


class TestBackward:
    def test_square(self):
        x = dc.parameter([3.0])
        assert dc.backward(dc.reduce_sum(x * x))[x].tolist() == [6.0]

    def test_logsumexp_equal_logits(self):
        r = dc.parameter([0.0, 0.0])
        np.testing.assert_allclose(dc.backward(dc.reduce_logsumexp(r))[r], [0.5, 0.5])

    def test_non_scalar_root_rejected(self):
        with pytest.raises(ShapeError):
            dc.backward(dc.parameter([1.0, 2.0]) * 2.0)

    def test_shared_subexpression_accumulates(self):
        x = dc.parameter([2.0])
        y = x * x
        g = dc.backward(dc.reduce_sum(y + y))
        assert g[x].tolist() == [8.0]

    def test_leaf_grad_slot_has_leaf_shape(self, rng):
        w = dc.parameter(rng.standard_normal((4, 3)))
        dc.backward(dc.reduce_sum(dc.matmul(dc.constant(rng.standard_normal((2, 4))), w)))
        assert w.grad.shape == w.shape

    def test_random_three_layer_net(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((5, 6))
        ws = [rng.standard_normal(s) for s in [(6, 8), (8,), (8, 5), (5,), (5, 1), (1,)]]

        def net(ts):
            h = dc.relu(dc.matmul(dc.constant(x), ts[0]) + ts[1])
            h = dc.sigmoid(dc.matmul(h, ts[2]) + ts[3])
            return dc.reduce_sum(dc.matmul(h, ts[4]) + ts[5])

        leaves = [dc.parameter(w) for w in ws]
        g = dc.backward(net(leaves))
        num = numeric_grad(lambda: float(net([dc.constant(w) for w in ws]).data), ws)
        assert rel_error([g[t] for t in leaves], num) < 1e-5

    def test_linearity_over_sum_of_graphs(self, rng):
        a = rng.standard_normal(5)

        def f1(t):
            return dc.reduce_sum(dc.exp(t) * 0.3)

        def f2(t):
            return dc.reduce_logsumexp(t * t)

        t = dc.parameter(a)
        both = dc.backward(f1(t) + f2(t))[t]
        t1, t2 = dc.parameter(a), dc.parameter(a)
        sep = dc.backward(f1(t1))[t1] + dc.backward(f2(t2))[t2]
        np.testing.assert_allclose(both, sep, rtol=1e-12)

    def test_constants_get_no_gradient(self):
        c = dc.constant([1.0])
        p = dc.parameter([2.0])
        g = dc.backward(dc.reduce_sum(c * p))
        assert c not in g and p in g


class TestAdam:
    def test_zero_gradient_is_a_fixed_point(self, rng):
        p = {"w": rng.standard_normal(4)}
        before = p["w"].copy()
        opt = dc.Adam(0.1)
        for _ in range(3):
            opt.step(p, {"w": np.zeros(4)})
        np.testing.assert_array_equal(p["w"], before)

    def test_first_step_moves_by_lr(self):
        p = {"w": np.array([1.0])}
        dc.Adam(0.1).step(p, {"w": np.array([1.0])})
        assert 1.0 - p["w"][0] == pytest.approx(0.1, rel=1e-6)

    def test_deterministic(self, rng):
        w0 = rng.standard_normal(5)
        grads = [rng.standard_normal(5) for _ in range(4)]
        out = []
        for _ in range(2):
            p = {"w": w0.copy()}
            opt = dc.Adam(1e-2)
            for g in grads:
                opt.step(p, {"w": g})
            out.append(p["w"].tobytes())
        assert out[0] == out[1]
        assert opt.t == 4

    def test_matches_textbook_update(self, rng):
        w = rng.standard_normal(3)
        g1, g2 = rng.standard_normal(3), rng.standard_normal(3)
        p = {"w": w.copy()}
        opt = dc.Adam(1e-3)
        opt.step(p, {"w": g1})
        opt.step(p, {"w": g2})
        m = 0.9 * (0.1 * g1) + 0.1 * g2
        v = 0.999 * (0.001 * g1**2) + 0.001 * g2**2
        m_hat, v_hat = m / (1 - 0.9**2), v / (1 - 0.999**2)
        first = w - 1e-3 * g1 / (np.abs(g1) + 1e-8)
        np.testing.assert_allclose(p["w"], first - 1e-3 * m_hat / (np.sqrt(v_hat) + 1e-8), rtol=1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dc.Adam(0.1).step({"w": np.zeros(2)}, {"w": np.zeros(3)})

    def test_state_roundtrip(self, rng):
        p = {"w": rng.standard_normal(3)}
        opt = dc.Adam(0.01)
        opt.step(p, {"w": np.ones(3)})
        clone = dc.Adam.from_state(opt.state_dict())
        q = {"w": p["w"].copy()}
        opt.step(p, {"w": np.ones(3)})
        clone.step(q, {"w": np.ones(3)})
        assert p["w"].tobytes() == q["w"].tobytes()
