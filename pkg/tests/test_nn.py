import struct

import numpy as np
import pytest

from autodiff import Tape, Tensor, apply, backward, grad_check_parameters
from config import CONFIG
from errors import ContractError, DataError, DimensionError
from nn import (
    AdamState,
    EmbeddingTable,
    LinearLayer,
    LSTMCellParams,
    adam_step,
    baseline_param_spec,
    clip_gradients,
    count_parameters,
    count_state_parameters,
    ddrstack_param_spec,
    embed,
    init_params,
    linear_forward,
    load_checkpoint,
    lstm_step,
    mean_l1,
    save_checkpoint,
    spec_parameter_count,
)


@pytest.mark.parametrize("spec,expected", [
    (ddrstack_param_spec(32), 16_993),
    (ddrstack_param_spec(8), 1_177),
    (baseline_param_spec(32, 1), 8_801),
    (baseline_param_spec(128, 1), 133_505),
    (baseline_param_spec(128, 2), 265_089),
])
def test_parameter_counts(spec, expected):
    assert spec_parameter_count(spec) == expected
    params = init_params(0, spec)
    assert count_parameters(params) == expected


def test_initial_state_is_stored_but_not_counted():
    params = init_params(0, ddrstack_param_spec(32))
    assert {"initial.h0", "initial.c0"} <= set(params)
    assert count_state_parameters(params) == 64


def test_init_is_seeded_and_bounded():
    a = init_params(5, ddrstack_param_spec(8))
    b = init_params(5, ddrstack_param_spec(8))
    c = init_params(6, ddrstack_param_spec(8))
    for name in a:
        np.testing.assert_array_equal(a[name].data, b[name].data)
    assert any(not np.array_equal(a[n].data, c[n].data) for n in a)
    k = 1.0 / np.sqrt(8)
    assert np.all(np.abs(a["cells.0.W"].data) <= k)


def test_forget_gate_bias_starts_at_one():
    params = init_params(1, ddrstack_param_spec(8))
    b = params["lstm.b"].data
    np.testing.assert_array_equal(b[8:16], np.ones(8))
    assert np.all(np.abs(b[:8]) <= 1.0 / np.sqrt(8))


def test_layer_shape_validation():
    with pytest.raises(DimensionError):
        LinearLayer(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))
    with pytest.raises(DimensionError):
        LSTMCellParams(Tensor(np.ones((8, 2))), Tensor(np.ones((8, 3))), Tensor(np.ones(8)))


def test_linear_forward_single_and_batched_agree():
    r = np.random.default_rng(0)
    layer = LinearLayer(Tensor(r.normal(size=(3, 4))), Tensor(r.normal(size=3)))
    x = r.normal(size=(2, 4))
    with Tape():
        batched = linear_forward(layer, Tensor(x)).data
        single = [linear_forward(layer, Tensor(row)).data for row in x]
    np.testing.assert_allclose(batched, np.stack(single), rtol=1e-12)


def test_linear_zero_and_identity_weights():
    with Tape():
        zero = linear_forward(LinearLayer(Tensor(np.zeros((2, 3))), Tensor(np.array([1.0, 2.0]))),
                              Tensor(np.array([7.0, -3.0, 0.5])))
        ident = linear_forward(LinearLayer(Tensor(np.eye(2)), Tensor(np.zeros(2))), Tensor(np.array([3.0, 4.0])))
    np.testing.assert_array_equal(zero.data, [1.0, 2.0])
    np.testing.assert_array_equal(ident.data, [3.0, 4.0])


@pytest.mark.parametrize("seed", range(5))
def test_linear_forward_matches_loop_product(seed):
    r = np.random.default_rng(100 + seed)
    W, b, x = r.normal(size=(4, 5)), r.normal(size=4), r.normal(size=(3, 5))
    expected = np.zeros((3, 4))
    for row in range(3):
        for out in range(4):
            total = b[out]
            for k in range(5):
                total += W[out, k] * x[row, k]
            expected[row, out] = total
    with Tape():
        y = linear_forward(LinearLayer(Tensor(W), Tensor(b)), Tensor(x)).data
    np.testing.assert_allclose(y, expected, rtol=1e-12, atol=1e-12)


def test_lstm_step_matches_reference_equations():
    r = np.random.default_rng(2)
    h = 3
    cell = LSTMCellParams(Tensor(r.normal(size=(4 * h, 2))), Tensor(r.normal(size=(4 * h, h))), Tensor(r.normal(size=4 * h)))
    x, h0, c0 = r.normal(size=2), r.normal(size=h), r.normal(size=h)
    with Tape():
        out, (h1, c1) = lstm_step(cell, Tensor(x), (Tensor(h0), Tensor(c0)))

    z = cell.W_ih.data @ x + cell.W_hh.data @ h0 + cell.b.data
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    i, f, g, o = sig(z[:h]), sig(z[h:2 * h]), np.tanh(z[2 * h:3 * h]), sig(z[3 * h:])
    c_ref = f * c0 + i * g
    np.testing.assert_allclose(c1.data, c_ref, rtol=1e-12)
    np.testing.assert_allclose(h1.data, o * np.tanh(c_ref), rtol=1e-12)
    assert out is h1


@pytest.mark.parametrize("seed", range(3))
def test_lstm_step_gradients(seed):
    r = np.random.default_rng(seed)
    h = 3
    cell = LSTMCellParams(Tensor(r.normal(size=(4 * h, h))), Tensor(r.normal(size=(4 * h, h))), Tensor(r.normal(size=4 * h)))
    x, h0, c0 = Tensor(r.normal(size=(2, h))), Tensor(r.normal(size=(2, h))), Tensor(r.normal(size=(2, h)))
    target = r.normal(size=(2, h))

    def loss():
        out, (h1, c1) = lstm_step(cell, x, (h0, c0))
        out2, _ = lstm_step(cell, out, (h1, c1))
        return mean_l1(out2, target)

    assert grad_check_parameters(loss, [cell.W_ih, cell.W_hh, cell.b, x, h0, c0]) < 1e-4


def test_lstm_step_with_zero_weights_halves_the_cell():
    h = 3
    cell = LSTMCellParams(Tensor(np.zeros((4 * h, 2))), Tensor(np.zeros((4 * h, h))), Tensor(np.zeros(4 * h)))
    c0 = np.array([0.0, 2.0, -1.0])
    with Tape():
        _, (h1, c1) = lstm_step(cell, Tensor(np.array([0.3, -0.8])), (Tensor(np.ones(h)), Tensor(c0)))
    np.testing.assert_allclose(c1.data, 0.5 * c0, rtol=1e-15)
    np.testing.assert_allclose(h1.data, 0.5 * np.tanh(0.5 * c0), rtol=1e-15)
    assert c1.data[0] == 0.0 and h1.data[0] == 0.0


def test_lstm_state_shape_mismatch():
    cell = LSTMCellParams(Tensor(np.ones((8, 2))), Tensor(np.ones((8, 2))), Tensor(np.ones(8)))
    with Tape(), pytest.raises(DimensionError):
        lstm_step(cell, Tensor(np.ones(2)), (Tensor(np.ones(3)), Tensor(np.ones(3))))


def test_embed_batched_lookup():
    table = EmbeddingTable(Tensor(np.arange(12.0).reshape(4, 3)))
    with Tape():
        rows = embed(table, np.array([3, 1]))
        backward(apply("sum", [rows]))
    np.testing.assert_array_equal(rows.data, [[9, 10, 11], [3, 4, 5]])
    np.testing.assert_array_equal(table.E.grad.sum(axis=1), [0, 3, 0, 3])


def test_mean_l1_shape_mismatch():
    with Tape(), pytest.raises(ContractError):
        mean_l1(Tensor(np.ones((1, 3))), np.ones((1, 2)))


# ── Adam ────────────────────────────────────────────────────────────────────

def test_adam_first_step_moves_by_lr_times_sign():
    w = Tensor(np.array([1.0, -2.0, 3.0]))
    w.grad = np.array([0.5, -4.0, 1e-3])
    opt = AdamState(lr=0.01)
    adam_step(opt, {"w": w})
    # bias-corrected first step: lr * g / (|g| + eps)
    np.testing.assert_allclose(w.data, [0.99, -1.99, 2.99], atol=1e-6)
    assert opt.t == 1


def test_adam_minimizes_quadratic():
    w = Tensor(np.array([5.0]))
    opt = AdamState(lr=0.1)
    history = []
    for _ in range(100):
        w.zero_grad()
        with Tape():
            backward(apply("mul", [w, w]))
        adam_step(opt, {"w": w})
        history.append(abs(float(w.data[0])))
    assert all(b < a for a, b in zip(history[:80], history[1:80]))
    assert all(v < 1.0 for v in history[49:])


def test_adam_zero_gradient_and_zero_lr_leave_parameters_unchanged():
    w = Tensor(np.array([1.0, -2.0]))
    adam_step(AdamState(lr=0.1), {"w": w}, grads={"w": np.zeros(2)})
    np.testing.assert_array_equal(w.data, [1.0, -2.0])

    opt = AdamState(lr=0.0)
    for g in ([0.5, -3.0], [1e-3, 7.0], [0.0, 0.0]):
        adam_step(opt, {"w": w}, grads={"w": np.array(g)})
    np.testing.assert_array_equal(w.data, [1.0, -2.0])
    assert opt.t == 3


def test_adam_missing_gradient():
    w = Tensor(np.ones(2))
    with pytest.raises(ContractError):
        adam_step(AdamState(), {"w": w})
    with pytest.raises(ContractError):
        adam_step(AdamState(), {"w": w}, grads={})


def test_adam_validates_before_updating():
    a, b = Tensor(np.ones(2)), Tensor(np.ones(2))
    a.grad = np.ones(2)
    with pytest.raises(ContractError):
        adam_step(AdamState(), {"a": a, "b": b})
    np.testing.assert_array_equal(a.data, np.ones(2))


def test_clip_gradients():
    a, b = Tensor(np.zeros(2)), Tensor(np.zeros(1))
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_gradients({"a": a, "b": b}, 0.0) == pytest.approx(5.0)
    np.testing.assert_array_equal(a.grad, [3.0, 0.0])
    clip_gradients({"a": a, "b": b}, 1.0)
    np.testing.assert_allclose(np.concatenate([a.grad, b.grad]), [0.6, 0.0, 0.8])


# ── Checkpoints ─────────────────────────────────────────────────────────────

def test_checkpoint_round_trip_is_exact(tmp_path):
    params = init_params(3, baseline_param_spec(4, 2))
    path = str(tmp_path / "model.ddrc")
    meta = {"model": "baseline", "hidden": 4, "layers": 2, "val_l1": 0.123456789}
    save_checkpoint(path, params, meta)
    ckpt = load_checkpoint(path)
    assert ckpt.meta == meta
    assert list(ckpt.tensors) == list(params)
    for name, t in params.items():
        np.testing.assert_array_equal(ckpt.tensors[name], t.data)
        assert ckpt.tensors[name].shape == t.shape
    assert not (tmp_path / "model.ddrc.tmp").exists()


def test_checkpoint_header_layout(tmp_path):
    path = str(tmp_path / "one.ddrc")
    save_checkpoint(path, {"w": np.array([[1.5, 2.5]])}, {})
    blob = open(path, "rb").read()
    assert blob[:4] == CONFIG.CHECKPOINT_MAGIC
    version, meta_len = struct.unpack("<II", blob[4:12])
    assert version == CONFIG.CHECKPOINT_VERSION
    assert blob[12:12 + meta_len] == b"{}"
    assert blob[-16:] == np.array([1.5, 2.5], dtype="<f8").tobytes()


def _replace_meta(blob, meta):
    (meta_len,) = struct.unpack("<I", blob[8:12])
    return blob[:8] + struct.pack("<I", len(meta)) + meta + blob[12 + meta_len:]


@pytest.mark.parametrize("corrupt", [
    lambda blob: b"XXXX" + blob[4:],
    lambda blob: blob[:-3],
    lambda blob: blob + b"\x00",
    lambda blob: blob[:4] + struct.pack("<I", 99) + blob[8:],
    lambda blob: blob[:12] + b"[" + blob[13:],
    lambda blob: blob[:12] + b"\xff" + blob[13:],
    lambda blob: _replace_meta(blob, b"[1, 2]"),
])
def test_checkpoint_corruption_is_a_data_error(tmp_path, corrupt):
    path = tmp_path / "bad.ddrc"
    save_checkpoint(str(path), {"w": np.ones(3)}, {"model": "x"})
    path.write_bytes(corrupt(path.read_bytes()))
    with pytest.raises(DataError):
        load_checkpoint(str(path))


def test_missing_checkpoint(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(str(tmp_path / "absent.ddrc"))
