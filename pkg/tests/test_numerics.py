import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from trajgan import numerics as nx

from .conftest import check_grads, rel_error


def leaf(rng, *shape, name=None, lo=-1.0, hi=1.0):
    return nx.Tensor(rng.uniform(lo, hi, size=shape), name=name)


class TestForwardOps:
    def test_softmax_uniform(self):
        np.testing.assert_allclose(nx.softmax(nx.Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_identity_matmul(self):
        m = np.arange(12.0).reshape(3, 4)
        out = nx.forward_op("matmul", nx.Tensor(np.eye(3)), nx.Tensor(m))
        np.testing.assert_array_equal(out.data, m)

    def test_tanh_sigmoid_at_zero(self):
        assert nx.tanh(nx.Tensor(0.0)).data == 0.0
        assert nx.sigmoid(nx.Tensor(0.0)).data == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(nx.DimensionError):
            nx.matmul(nx.Tensor(np.ones((2, 3))), nx.Tensor(np.ones((2, 3))))
        with pytest.raises(nx.DimensionError):
            nx.add(nx.Tensor(np.ones(3)), nx.Tensor(np.ones(4)))
        with pytest.raises(nx.DimensionError):
            nx.slice(nx.Tensor(np.ones(3)), 1, 5)

    def test_log_domain(self):
        with pytest.raises(nx.DomainError):
            nx.log(nx.Tensor([1.0, 0.0]))
        with pytest.raises(nx.DomainError):
            nx.log(nx.Tensor([-2.0]))

    def test_non_finite_is_an_error(self):
        with pytest.raises(nx.NonFiniteError):
            nx.exp(nx.Tensor([1000.0]))

    def test_unknown_kind(self):
        with pytest.raises(nx.UsageError):
            nx.forward_op("conv", nx.Tensor(1.0))

    def test_ops_record_on_active_tape_only(self):
        tape = nx.Tape()
        nx.add(1.0, 2.0)
        with tape:
            nx.add(1.0, 2.0)
            nx.mul(3.0, 2.0)
        assert len(tape) == 2

    def test_concat_and_slice_roundtrip(self):
        a, b = nx.Tensor(np.ones((2, 3))), nx.Tensor(np.zeros((2, 2)))
        c = nx.forward_op("concat", a, b)
        assert c.shape == (2, 5)
        np.testing.assert_array_equal(nx.slice(c, 3, 5).data, b.data)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-50, 50)))
def test_softmax_is_a_distribution(x):
    p = nx.softmax(nx.Tensor(x)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


class TestBackward:
    def test_square(self):
        x = nx.Tensor(3.0)
        tape = nx.Tape()
        with tape:
            y = nx.mul(x, x)
        (g,) = nx.backward(tape, y, [x])
        assert g == 6.0

    def test_sum_of_softmax_has_zero_gradient(self):
        v = nx.Tensor(np.random.default_rng(0).normal(size=5))
        tape = nx.Tape()
        with tape:
            y = nx.sum(nx.softmax(v))
        (g,) = nx.backward(tape, y, [v])
        np.testing.assert_allclose(g, 0.0, atol=1e-15)

    def test_unreached_leaf_gets_zeros(self):
        x, y = nx.Tensor(np.ones(3)), nx.Tensor(np.ones((2, 2)))
        tape = nx.Tape()
        with tape:
            loss = nx.sum(x)
        grads = nx.backward(tape, loss, {"x": x, "y": y})
        np.testing.assert_array_equal(grads["y"], np.zeros((2, 2)))
        np.testing.assert_array_equal(grads["x"], np.ones(3))

    def test_non_scalar_loss(self):
        x = nx.Tensor(np.ones(3))
        tape = nx.Tape()
        with tape:
            y = nx.mul(x, 2.0)
        with pytest.raises(nx.UsageError):
            nx.backward(tape, y, [x])

    def test_composite_five_parameter_graph(self):
        rng = np.random.default_rng(7)
        w1, b1 = leaf(rng, 3, 4, name="w1"), leaf(rng, 4, name="b1")
        w2, b2 = leaf(rng, 4, 2, name="w2"), leaf(rng, 2, name="b2")
        s = leaf(rng, 2, name="s", lo=0.5, hi=1.5)
        x = rng.normal(size=(5, 3))

        def build():
            h = nx.tanh(nx.add(nx.matmul(x, w1), b1))
            o = nx.sigmoid(nx.add(nx.matmul(h, w2), b2))
            z = nx.concat([nx.log(nx.mul(o, s)), nx.exp(nx.slice(h, 0, 2))], axis=-1)
            return nx.mean(nx.mul(nx.softmax(z), z))

        check_grads(build, [w1, b1, w2, b2, s])

    @pytest.mark.parametrize("kind", ["matmul", "add", "sub", "mul", "div", "concat", "slice", "tanh",
                                      "sigmoid", "relu", "leaky_relu", "exp", "log", "softmax", "sum", "mean"])
    def test_primitive_jacobians(self, kind):
        rng = np.random.default_rng(zlib.crc32(kind.encode()))
        a = leaf(rng, 3, 4, name="a", lo=0.3, hi=1.5)
        b = leaf(rng, 4, 4, name="b", lo=0.3, hi=1.5) if kind == "matmul" else leaf(rng, 3, 4, name="b", lo=0.3,
                                                                                       hi=1.5)
        proj = rng.normal(size=(3, 4 if kind not in ("concat", "slice") else 8))

        def build():
            if kind in ("matmul", "add", "sub", "mul", "div"):
                out = nx.forward_op(kind, a, b)
            elif kind == "concat":
                out = nx.concat([a, b])
            elif kind == "slice":
                out = nx.concat([nx.slice(a, 1, 3), nx.slice(b, 0, 4), nx.slice(a, 2, 4)])
            elif kind in ("sum", "mean"):
                out = nx.mul(nx.forward_op(kind, a, axis=-1)[:, None], b)
            else:
                out = nx.mul(nx.forward_op(kind, a), b)
            return nx.sum(nx.mul(out, proj[:, :out.shape[-1]]))

        check_grads(build, [a, b])

    def test_broadcast_gradients(self):
        rng = np.random.default_rng(3)
        a, b = leaf(rng, 2, 3, 4, name="a"), leaf(rng, 4, name="b")
        c = leaf(rng, 3, 1, name="c", lo=0.5, hi=2.0)
        check_grads(lambda: nx.sum(nx.div(nx.mul(nx.add(a, b), a), c)), [a, b, c])

    def test_take_segment_ops(self):
        rng = np.random.default_rng(4)
        a = leaf(rng, 5, 3, name="a")
        seg = np.array([0, 2, 2, 1, 0])
        w = rng.normal(size=(5,))

        def build():
            rows = nx.take(a, np.array([0, 4, 4, 2]))
            p = nx.segment_softmax(nx.sum(a, axis=-1), seg, 3)
            s = nx.segment_sum(a, seg, 3)
            return nx.add(nx.add(nx.sum(nx.mul(rows, rows)), nx.sum(nx.mul(p, w))), nx.sum(nx.tanh(s)))

        check_grads(build, [a])

    def test_segment_softmax_sums_to_one(self):
        x = nx.Tensor(np.random.default_rng(0).normal(size=9))
        seg = np.array([0, 0, 1, 1, 1, 2, 3, 3, 3])
        p = nx.segment_softmax(x, seg, 4).data
        np.testing.assert_allclose(np.bincount(seg, weights=p), 1.0, atol=1e-12)

    def test_lstm_cell_gradients(self, backend):
        rng = np.random.default_rng(5)
        x, h, c = leaf(rng, 3, 2, name="x"), leaf(rng, 3, 4, name="h"), leaf(rng, 3, 4, name="c")
        wi, wh, b = leaf(rng, 2, 16, name="wi"), leaf(rng, 4, 16, name="wh"), leaf(rng, 16, name="b")
        proj = rng.normal(size=(3, 8))
        check_grads(lambda: nx.sum(nx.mul(nx.lstm_cell(x, h, c, wi, wh, b), proj)), [x, h, c, wi, wh, b])

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        w = leaf(rng, 6, 6, name="w")
        x = rng.normal(size=(4, 6))

        def grads():
            tape = nx.Tape()
            with tape:
                loss = nx.sum(nx.mul(nx.softmax(nx.tanh(nx.matmul(nx.matmul(x, w), w))), x))
            return nx.backward(tape, loss, [w])[0]

        first = grads()
        assert np.any(first != 0)
        assert first.tobytes() == grads().tobytes()


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = {"w": nx.Tensor(np.array([1.0, -2.0]))}
        st_ = nx.AdamState()
        nx.adam_step(p, {"w": np.zeros(2)}, st_)
        np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])
        assert st_.step == 1

    def test_first_step_is_lr_times_sign(self):
        g = np.array([0.3, -5.0, 1e-3, -2e2])
        p = {"w": nx.Tensor(np.zeros(4))}
        nx.adam_step(p, {"w": g}, nx.AdamState(lr=1e-3))
        np.testing.assert_allclose(p["w"].data, -1e-3 * np.sign(g), rtol=1e-4)

    def test_matches_scripted_recurrences(self):
        rng = np.random.default_rng(2)
        w0 = rng.normal(size=(3, 2))
        gs = [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))]
        p = {"w": nx.Tensor(w0.copy())}
        st_ = nx.AdamState(lr=0.01)
        for g in gs:
            nx.adam_step(p, {"w": g}, st_)
        # independent scalar transcription
        ref = w0.copy()
        for idx in np.ndindex(ref.shape):
            m = v = 0.0
            for t, g in enumerate(gs, start=1):
                m = 0.9 * m + 0.1 * g[idx]
                v = 0.999 * v + 0.001 * g[idx] ** 2
                mhat, vhat = m / (1 - 0.9 ** t), v / (1 - 0.999 ** t)
                ref[idx] -= 0.01 * mhat / (vhat ** 0.5 + 1e-8)
        np.testing.assert_allclose(p["w"].data, ref, rtol=1e-13, atol=1e-15)
        assert st_.step == 2
        assert st_.m["w"].shape == w0.shape

    def test_shape_mismatch(self):
        with pytest.raises(nx.DimensionError):
            nx.adam_step({"w": nx.Tensor(np.zeros(2))}, {"w": np.zeros(3)}, nx.AdamState())

    def test_clip_by_global_norm(self):
        grads = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
        clipped, norm = nx.clip_by_global_norm(grads, 1.0)
        assert norm == 5.0
        assert nx.global_norm(clipped) == pytest.approx(1.0)
        same, _ = nx.clip_by_global_norm(grads, 10.0)
        assert same is grads

    def test_init_bounds(self):
        w = nx.init_weight(np.random.default_rng(0), 16, (16, 8))
        assert np.all(np.abs(w.data) <= 0.25)
        assert np.all(nx.init_bias((4,)).data == 0)


class TestCheckpoint:
    def test_roundtrip_lossless(self, tmp_path):
        rng = np.random.default_rng(0)
        params = {"generator.mdn.w": nx.Tensor(rng.normal(size=(3, 4))), "generator.mdn.b": nx.Tensor(rng.normal(size=4))}
        opt = nx.AdamState(lr=0.01)
        nx.adam_step(params, {k: rng.normal(size=v.shape) for k, v in params.items()}, opt)
        path = tmp_path / "c.json"
        nx.checkpoint.save(path, params, {"epoch": 3}, {"generator": opt})
        loaded, meta, opts = nx.checkpoint.load(path)
        assert meta == {"epoch": 3}
        for k, v in params.items():
            assert loaded[k].tobytes() == v.data.tobytes()
        assert opts["generator"].step == 1
        np.testing.assert_array_equal(opts["generator"].m["generator.mdn.w"], opt.m["generator.mdn.w"])
        text = path.read_text()
        nx.checkpoint.save(tmp_path / "d.json", params, {"epoch": 3}, {"generator": opt})
        assert (tmp_path / "d.json").read_text() == text

    def test_rejects_bad_files(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"format": "other", "version": 1}')
        with pytest.raises(nx.checkpoint.CheckpointError):
            nx.checkpoint.load(p)
        p.write_text('{"format": "trajgan-params", "version": 1, "meta": {}, '
                     '"params": {"w": {"shape": [2, 2], "values": [1, 2, 3]}}}')
        with pytest.raises(nx.checkpoint.CheckpointError):
            nx.checkpoint.load(p)


def test_rel_error_helper():
    assert rel_error([1.0], [1.0 + 1e-6]) < 1e-5
