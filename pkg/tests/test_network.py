import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from nnam.cells import LayerState, ZoneoutConfig, lstm_step
from nnam.errors import DataError, ShapeError
from nnam.gradcheck import check_network, random_case, run_battery
from nnam.network import (Normalizer, RecurrentNetwork, init_network, load_model,
                          model_from_text, model_to_text, save_model)
from nnam.numeric import Rng, log_softmax


def small_net(kind="lstm", input_dim=3, hidden=(2,), classes=4, seed=0, **kw):
    return init_network(kind, input_dim, list(hidden), classes, Rng(seed), **kw)


class TestForward:
    def test_single_frame_no_delay_equals_stacked_step(self):
        net = small_net()
        x = Rng(1).normal((1, 3))
        state = lstm_step(net.layers[0], x[0], LayerState(h=np.zeros(2), c=np.zeros(2)))
        expected = log_softmax(net.w_out @ state.h + net.b_out)
        assert_allclose(net.forward_sequence(x), [expected], atol=1e-12)

    def test_delay_indexing(self):
        # With delay d, the row for frame t must equal the no-delay network's
        # output at time t+d on the explicitly extended input.
        net = small_net(output_delay=2)
        x = Rng(2).normal((3, 3))
        got = net.forward_sequence(x)
        net0 = RecurrentNetwork("lstm", net.layers, net.w_out, net.b_out,
                                net.normalizer, output_delay=0)
        extended = np.vstack([x, x[-1], x[-1]])
        ref = net0.forward_sequence(extended)
        assert_allclose(got, ref[2:], atol=1e-15)
        assert got.shape == (3, 4)

    def test_manual_unroll_oracle(self):
        net = small_net(hidden=(2, 2), seed=5, output_delay=0)
        x = Rng(6).normal((4, 3))
        got = net.forward_sequence(x)
        s1 = LayerState(h=np.zeros(2), c=np.zeros(2))
        s2 = LayerState(h=np.zeros(2), c=np.zeros(2))
        for t in range(4):
            s1 = lstm_step(net.layers[0], x[t], s1)
            s2 = lstm_step(net.layers[1], s1.h, s2)
            expected = log_softmax(net.w_out @ s2.h + net.b_out)
            assert_allclose(got[t], expected, atol=1e-12)

    def test_eval_mode_deterministic(self):
        net = small_net("zoneout", zoneout=ZoneoutConfig(0.5, 0.5), dropout_p=0.2)
        x = Rng(7).normal((5, 3))
        assert_array_equal(net.forward_sequence(x), net.forward_sequence(x))

    def test_empty_sequence_rejected(self):
        with pytest.raises(DataError):
            small_net().forward_sequence(np.zeros((0, 3)))

    def test_wrong_dim_rejected(self):
        with pytest.raises(ShapeError):
            small_net().forward_sequence(np.zeros((4, 2)))

    def test_normalizer_applied(self):
        net = small_net()
        net.normalizer = Normalizer(shift=np.full(3, 2.0), scale=np.full(3, 4.0))
        x = Rng(8).normal((3, 3))
        ref = small_net().forward_sequence((x - 2.0) / 4.0)
        assert_allclose(net.forward_sequence(x), ref, atol=1e-15)

    def test_zoneout_net_with_zero_rates_equals_lstm_bitwise(self):
        lstm = small_net("lstm", hidden=(3, 3), seed=9)
        zo = RecurrentNetwork("zoneout", lstm.layers, lstm.w_out, lstm.b_out,
                              lstm.normalizer, zoneout=ZoneoutConfig(0.0, 0.0))
        x = Rng(10).normal((6, 3))
        assert_array_equal(zo.forward_sequence(x), lstm.forward_sequence(x))


class TestFeedForward:
    def test_zero_hidden_weights_posterior_from_output_bias(self):
        net = small_net("ff", hidden=(4,))
        for _, arr in net.layers[0].blocks():
            arr[...] = 0.0
        net.b_out[...] = np.array([0.5, -0.5, 1.0, 0.0])
        x = Rng(11).normal((3, 3))
        got = net.forward_sequence(x)
        expected = log_softmax(net.b_out)
        for row in got:
            assert_allclose(row, expected, atol=1e-12)

    def test_uniform_when_everything_zero(self):
        net = small_net("ff", hidden=(4,))
        for _, arr in net.parameter_blocks():
            arr[...] = 0.0
        got = net.forward_sequence(np.ones((2, 3)))
        assert_allclose(np.exp(got), 0.25, atol=1e-12)

    def test_hand_sized_case(self):
        net = small_net("ff", input_dim=2, hidden=(2,), classes=2)
        net.layers[0].w[...] = [[1.0, -1.0], [0.5, 0.25]]
        net.layers[0].b[...] = [0.1, -0.2]
        net.w_out[...] = [[1.0, 0.0], [0.0, 2.0]]
        net.b_out[...] = [0.0, 0.3]
        x = np.array([[0.3, -0.4]])
        h = np.maximum(net.layers[0].w @ x[0] + net.layers[0].b, 0.0)
        logits = net.w_out @ h + net.b_out
        expected = logits - np.log(np.sum(np.exp(logits)))
        assert_allclose(net.forward_sequence(x)[0], expected, atol=1e-12)

    def test_dropout_zero_train_equals_eval(self):
        net = small_net("ff", hidden=(4, 4), dropout_p=0.0)
        x = Rng(12).normal((3, 3))
        assert_array_equal(net.forward_sequence(x, "train", Rng(0)),
                           net.forward_sequence(x, "eval"))

    def test_ff_rejects_delay(self):
        with pytest.raises(ValueError):
            small_net("ff", output_delay=3)


class TestBackward:
    def test_loss_at_zero_output_weights_is_log_classes(self):
        net = small_net(classes=5)
        net.w_out[...] = 0.0
        net.b_out[...] = 0.0
        x = Rng(13).normal((4, 3))
        loss, _ = net.backward_sequence(x, np.array([0, 1, 2, 3]), "eval")
        assert loss == pytest.approx(np.log(5), abs=1e-12)

    def test_unused_recurrent_weights_get_zero_gradient(self):
        # T=1 from zero state: every W_h* sees a zero input vector.
        net = small_net()
        x = Rng(14).normal((1, 3))
        _, grads = net.backward_sequence(x, np.array([1]), "eval")
        gd = dict(grads)
        for name in ("w_hi", "w_hf", "w_ho", "w_hc"):
            assert_array_equal(gd[f"layer0.{name}"], np.zeros((2, 2)))

    def test_gradient_shapes_match_parameters(self):
        net = small_net("gru", hidden=(3, 2))
        x = Rng(15).normal((5, 3))
        y = np.array([0, 1, 2, 3, 0])
        _, grads = net.backward_sequence(x, y, "eval")
        for (pname, parr), (gname, garr) in zip(net.parameter_blocks(), grads):
            assert pname == gname
            assert parr.shape == garr.shape

    @pytest.mark.parametrize("kind", ["lstm", "gru", "zoneout", "ff"])
    def test_gradcheck_spot(self, kind):
        out = run_battery([kind], n_seeds=3)
        assert out[kind].max_rel_error < 1e-4, \
            f"{kind} worst {out[kind].max_rel_error:.2e} at {out[kind].worst_block}"

    def test_corrupt_hook_fails_and_names_block(self):
        net, x, y = random_case("lstm", 0)
        res = check_network(net, x, y, mask_seed=0, corrupt_block="layer0.b_i")
        assert not res.passed()
        assert res.worst_block == "layer0.b_i"


class TestModelIO:
    @pytest.mark.parametrize("kind,extra", [
        ("lstm", {"output_delay": 5, "context": 1, "dropout_p": 0.2}),
        ("gru", {"output_delay": 2}),
        ("zoneout", {"zoneout": ZoneoutConfig(0.25, 0.75)}),
        ("ff", {"context": 11}),
    ])
    def test_round_trip_bit_exact(self, kind, extra):
        net = small_net(kind, hidden=(3, 2), seed=21, **extra)
        net.normalizer = Normalizer(shift=Rng(1).normal(3), scale=np.abs(Rng(2).normal(3)) + 0.5)
        text = model_to_text(net)
        back = model_from_text(text)
        assert back.kind == net.kind
        assert back.output_delay == net.output_delay
        assert back.context == net.context
        assert back.dropout_p == net.dropout_p
        if net.zoneout is not None:
            assert back.zoneout.d_c == net.zoneout.d_c
            assert back.zoneout.d_h == net.zoneout.d_h
        assert_array_equal(back.normalizer.shift, net.normalizer.shift)
        assert_array_equal(back.normalizer.scale, net.normalizer.scale)
        for (n1, a1), (n2, a2) in zip(net.parameter_blocks(), back.parameter_blocks()):
            assert n1 == n2
            assert_array_equal(a1, a2)
        assert model_to_text(back) == text

    def test_save_load_file(self, tmp_path):
        net = small_net()
        path = tmp_path / "model.txt"
        save_model(net, path)
        back = load_model(path)
        assert_array_equal(back.w_out, net.w_out)

    def test_bad_header_rejected(self):
        with pytest.raises(DataError):
            model_from_text("not-a-model v1 lstm\n")

    def test_missing_end_rejected(self):
        net = small_net()
        text = model_to_text(net).replace("\nend\n", "\n")
        with pytest.raises(DataError):
            model_from_text(text)
