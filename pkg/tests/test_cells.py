import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from nnam.cells import (FfParams, GruParams, LayerState, LstmParams, ZoneoutConfig,
                        ff_layer_forward, gru_layer_forward, gru_step,
                        lstm_layer_forward, lstm_step, zoneout_lstm_step)
from nnam.errors import ShapeError
from nnam.numeric import Rng
from oracles import gru_step_reference, lstm_step_reference


def random_lstm(rng: Rng, input_dim=3, hidden=3) -> LstmParams:
    p = LstmParams.init(input_dim, hidden, rng)
    for _, arr in p.blocks():
        arr += rng.uniform(-1.0, 1.0, arr.shape)
    return p


def random_gru(rng: Rng, input_dim=3, hidden=3) -> GruParams:
    p = GruParams.init(input_dim, hidden, rng)
    for _, arr in p.blocks():
        arr += rng.uniform(-1.0, 1.0, arr.shape)
    return p


def zero_lstm(input_dim=2, hidden=2) -> LstmParams:
    z = lambda r, c: np.zeros((r, c))
    return LstmParams(
        w_xi=z(hidden, input_dim), w_hi=z(hidden, hidden),
        w_xf=z(hidden, input_dim), w_hf=z(hidden, hidden),
        w_xo=z(hidden, input_dim), w_ho=z(hidden, hidden),
        w_xc=z(hidden, input_dim), w_hc=z(hidden, hidden),
        b_i=np.zeros(hidden), b_f=np.zeros(hidden),
        b_o=np.zeros(hidden), b_c=np.zeros(hidden))


class TestLstmStep:
    def test_zero_params_zero_state(self):
        p = zero_lstm()
        out = lstm_step(p, np.array([5.0, -3.0]), LayerState(h=np.zeros(2), c=np.zeros(2)))
        assert_allclose(out.h, 0.0)
        assert_allclose(out.c, 0.0)

    def test_saturated_forget_gate_preserves_cell(self):
        p = zero_lstm()
        p.b_f[:] = 50.0
        c_prev = np.ones(2)
        out = lstm_step(p, np.zeros(2), LayerState(h=np.zeros(2), c=c_prev))
        assert_allclose(out.c, c_prev, atol=1e-12)

    def test_matches_independent_transcription(self):
        for seed in range(100):
            rng = Rng(seed)
            p = random_lstm(rng)
            x = rng.normal(3)
            h_prev = rng.normal(3)
            c_prev = rng.normal(3)
            got = lstm_step(p, x, LayerState(h=h_prev.copy(), c=c_prev.copy()))
            ref_h, ref_c = lstm_step_reference(
                p.w_xi, p.w_hi, p.w_xf, p.w_hf, p.w_xo, p.w_ho, p.w_xc, p.w_hc,
                p.b_i, p.b_f, p.b_o, p.b_c, x, h_prev, c_prev)
            assert_allclose(got.h, ref_h, atol=1e-12)
            assert_allclose(got.c, ref_c, atol=1e-12)

    def test_dimension_mismatch(self):
        p = zero_lstm()
        with pytest.raises(ShapeError):
            lstm_step(p, np.zeros(3), LayerState(h=np.zeros(2), c=np.zeros(2)))

    def test_cell_growth_bound(self):
        # |c_t| <= |c_{t-1}| + 1 elementwise: f,i in (0,1), |tanh| < 1.
        rng = Rng(77)
        p = random_lstm(rng)
        c = rng.normal(3)
        state = LayerState(h=rng.normal(3), c=c)
        out = lstm_step(p, rng.normal(3), state)
        assert np.all(np.abs(out.c) <= np.abs(c) + 1.0)


class TestGruStep:
    def test_zero_params_zero_state(self):
        p = GruParams.init(2, 2, Rng(0))
        for _, arr in p.blocks():
            arr[...] = 0.0
        out = gru_step(p, np.array([1.0, 2.0]), np.zeros(2))
        assert_allclose(out, 0.0)

    def test_closed_update_gate_keeps_state(self):
        rng = Rng(1)
        p = random_gru(rng)
        p.b_z[:] = -50.0
        p.w_z[...] = 0.0
        p.u_z[...] = 0.0
        h_prev = rng.normal(3)
        out = gru_step(p, rng.normal(3), h_prev)
        assert_allclose(out, h_prev, atol=1e-12)

    def test_matches_independent_transcription(self):
        for seed in range(100):
            rng = Rng(10_000 + seed)
            p = random_gru(rng)
            x = rng.normal(3)
            h_prev = rng.normal(3)
            got = gru_step(p, x, h_prev)
            ref = gru_step_reference(p.w_r, p.u_r, p.w_z, p.u_z, p.w, p.u,
                                     p.b_r, p.b_z, p.b_h, x, h_prev)
            assert_allclose(got, ref, atol=1e-12)

    def test_output_is_convex_combination(self):
        rng = Rng(2)
        for _ in range(20):
            p = random_gru(rng)
            x = rng.normal(3)
            h_prev = rng.normal(3)
            r = 1.0 / (1.0 + np.exp(-(p.w_r @ x + p.u_r @ h_prev + p.b_r)))
            cand = np.tanh(p.w @ x + p.u @ (r * h_prev) + p.b_h)
            out = gru_step(p, x, h_prev)
            lo = np.minimum(h_prev, cand) - 1e-12
            hi = np.maximum(h_prev, cand) + 1e-12
            assert np.all(out >= lo) and np.all(out <= hi)


class TestZoneoutStep:
    def test_disabled_equals_lstm_bitwise(self):
        rng = Rng(3)
        p = random_lstm(rng)
        x = rng.normal(3)
        state = LayerState(h=rng.normal(3), c=rng.normal(3))
        plain = lstm_step(p, x, state)
        for mode in ("train", "eval"):
            zo = zoneout_lstm_step(p, ZoneoutConfig(0.0, 0.0), x, state, mode, Rng(0))
            assert_array_equal(zo.h, plain.h)
            assert_array_equal(zo.c, plain.c)

    def test_fully_zoned_freezes_state(self):
        rng = Rng(4)
        p = random_lstm(rng)
        state = LayerState(h=rng.normal(3), c=rng.normal(3))
        for mode in ("train", "eval"):
            zo = zoneout_lstm_step(p, ZoneoutConfig(1.0, 1.0), rng.normal(3), state, mode, Rng(0))
            assert_array_equal(zo.h, state.h)
            assert_array_equal(zo.c, state.c)

    def test_eval_expectation_hand_case(self):
        # Zero params, c_prev = h_prev = (2,): candidate c' = 0.5*2 = 1,
        # h' = 0.5*tanh(1); interpolation at d = 0.5 gives 1.5 and 1 + tanh(1)/4.
        p = zero_lstm(input_dim=1, hidden=1)
        state = LayerState(h=np.array([2.0]), c=np.array([2.0]))
        out = zoneout_lstm_step(p, ZoneoutConfig(0.5, 0.5), np.zeros(1), state, "eval")
        assert_allclose(out.c, [1.5], atol=1e-15)
        assert_allclose(out.h, [1.0 + np.tanh(1.0) / 4.0], atol=1e-15)

    def test_train_mask_values(self):
        rng = Rng(5)
        p = random_lstm(rng)
        x = rng.normal(3)
        state = LayerState(h=rng.normal(3), c=rng.normal(3))
        cand = lstm_step(p, x, state)
        out = zoneout_lstm_step(p, ZoneoutConfig(0.5, 0.5), x, state, "train", Rng(42))
        # Each unit is either kept or replaced, never in between.
        for k in range(3):
            assert out.c[k] in (state.c[k], cand.c[k])
            assert out.h[k] in (state.h[k], cand.h[k])


class TestLayerKernels:
    def test_lstm_layer_matches_repeated_steps(self):
        rng = Rng(6)
        p = random_lstm(rng, input_dim=4, hidden=3)
        x_seq = rng.normal((6, 4))
        out, _ = lstm_layer_forward(p, x_seq, None, "eval", None)
        state = LayerState(h=np.zeros(3), c=np.zeros(3))
        for t in range(6):
            state = lstm_step(p, x_seq[t], state)
            assert_allclose(out[t], state.h, atol=1e-12)

    def test_gru_layer_matches_repeated_steps(self):
        rng = Rng(7)
        p = random_gru(rng, input_dim=4, hidden=3)
        x_seq = rng.normal((6, 4))
        out, _ = gru_layer_forward(p, x_seq, "eval", None)
        h = np.zeros(3)
        for t in range(6):
            h = gru_step(p, x_seq[t], h)
            assert_allclose(out[t], h, atol=1e-12)

    def test_zoneout_layer_matches_manual_interpolation(self):
        rng = Rng(8)
        p = random_lstm(rng, input_dim=2, hidden=3)
        x_seq = rng.normal((4, 2))
        zc = ZoneoutConfig(0.4, 0.7)
        out, _ = lstm_layer_forward(p, x_seq, zc, "eval", None)
        h = np.zeros(3)
        c = np.zeros(3)
        for t in range(4):
            cand = lstm_step(p, x_seq[t], LayerState(h=h, c=c))
            c = zc.d_c * c + (1 - zc.d_c) * cand.c
            h = zc.d_h * h + (1 - zc.d_h) * cand.h
            assert_allclose(out[t], h, atol=1e-12)

    def test_gate_activations_in_unit_interval(self):
        rng = Rng(9)
        p = random_lstm(rng)
        x_seq = rng.normal((5, 3))
        _, cache = lstm_layer_forward(p, x_seq, None, "eval", None)
        for gate in ("i", "f", "o"):
            assert np.all(cache[gate] > 0.0) and np.all(cache[gate] < 1.0)

    def test_ff_layer_relu(self):
        p = FfParams(w=np.array([[1.0, -1.0], [2.0, 0.0]]), b=np.array([0.0, -1.0]))
        out, _ = ff_layer_forward(p, np.array([[1.0, 2.0]]))
        assert_allclose(out, [[0.0, 1.0]])
