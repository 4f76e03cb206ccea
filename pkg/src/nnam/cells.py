"""Recurrent cell parameters, step equations, and BPTT layer kernels.

Step functions (`lstm_step`, `gru_step`, `zoneout_lstm_step`) are direct
transcriptions of the cell equations, one line per equation. The
``*_layer_forward`` / ``*_layer_backward`` pairs run a whole sequence through
one layer and produce exact gradients of whatever loss is fed in from above;
they fuse the four (three) gate projections into single matrices for speed
but are mathematically identical to repeated step calls.

Gate order in all fused tensors: i, f, o, g for LSTM; r, z, candidate for GRU.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ShapeError
from .numeric import Rng, sigmoid


def glorot(rng: Rng, rows: int, cols: int) -> np.ndarray:
    s = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-s, s, (rows, cols))


@dataclass
class LayerState:
    """Hidden state of one recurrent layer; ``c`` is None for GRU."""

    h: np.ndarray
    c: np.ndarray | None = None


@dataclass
class ZoneoutConfig:
    """Per-unit probabilities of keeping the previous cell/hidden value."""

    d_c: float = 0.5
    d_h: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.d_c <= 1.0 and 0.0 <= self.d_h <= 1.0):
            raise ValueError(f"zoneout probabilities must be in [0,1], got {self.d_c}, {self.d_h}")


@dataclass
class LstmParams:
    w_xi: np.ndarray
    w_hi: np.ndarray
    w_xf: np.ndarray
    w_hf: np.ndarray
    w_xo: np.ndarray
    w_ho: np.ndarray
    w_xc: np.ndarray
    w_hc: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    FIELDS = ("w_xi", "w_hi", "w_xf", "w_hf", "w_xo", "w_ho", "w_xc", "w_hc",
              "b_i", "b_f", "b_o", "b_c")

    @property
    def input_dim(self) -> int:
        return self.w_xi.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_xi.shape[0]

    def blocks(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in self.FIELDS:
            yield name, getattr(self, name)

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: Rng) -> "LstmParams":
        """Glorot-uniform weights, zero biases except forget-gate bias 1."""
        ws = {}
        for name in cls.FIELDS[:8]:
            cols = input_dim if name.startswith("w_x") else hidden_dim
            ws[name] = glorot(rng, hidden_dim, cols)
        ws["b_i"] = np.zeros(hidden_dim)
        ws["b_f"] = np.ones(hidden_dim)
        ws["b_o"] = np.zeros(hidden_dim)
        ws["b_c"] = np.zeros(hidden_dim)
        return cls(**ws)


@dataclass
class GruParams:
    w_r: np.ndarray
    u_r: np.ndarray
    w_z: np.ndarray
    u_z: np.ndarray
    w: np.ndarray
    u: np.ndarray
    b_r: np.ndarray
    b_z: np.ndarray
    b_h: np.ndarray

    FIELDS = ("w_r", "u_r", "w_z", "u_z", "w", "u", "b_r", "b_z", "b_h")

    @property
    def input_dim(self) -> int:
        return self.w_r.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_r.shape[0]

    def blocks(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in self.FIELDS:
            yield name, getattr(self, name)

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: Rng) -> "GruParams":
        ws = {}
        for name in cls.FIELDS[:6]:
            cols = hidden_dim if name.startswith("u") else input_dim
            ws[name] = glorot(rng, hidden_dim, cols)
        for name in cls.FIELDS[6:]:
            ws[name] = np.zeros(hidden_dim)
        return cls(**ws)


@dataclass
class FfParams:
    """One fully connected ReLU layer."""

    w: np.ndarray
    b: np.ndarray

    FIELDS = ("w", "b")

    @property
    def input_dim(self) -> int:
        return self.w.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w.shape[0]

    def blocks(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in self.FIELDS:
            yield name, getattr(self, name)

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: Rng) -> "FfParams":
        return cls(w=glorot(rng, hidden_dim, input_dim), b=np.zeros(hidden_dim))


def _check_step_dims(kind: str, input_dim: int, hidden_dim: int,
                     x: np.ndarray, h: np.ndarray, c: np.ndarray | None = None) -> None:
    if x.shape != (input_dim,):
        raise ShapeError(f"{kind} input has shape {x.shape}, params expect ({input_dim},)")
    if h.shape != (hidden_dim,):
        raise ShapeError(f"{kind} hidden state has shape {h.shape}, params expect ({hidden_dim},)")
    if c is not None and c.shape != (hidden_dim,):
        raise ShapeError(f"{kind} cell state has shape {c.shape}, params expect ({hidden_dim},)")


def lstm_step(p: LstmParams, x: np.ndarray, state: LayerState) -> LayerState:
    """One LSTM time step.

    i = sigmoid(W_xi x + W_hi h + b_i)
    f = sigmoid(W_xf x + W_hf h + b_f)
    o = sigmoid(W_xo x + W_ho h + b_o)
    c' = f * c + i * tanh(W_xc x + W_hc h + b_c)
    h' = o * tanh(c')
    """
    h, c = state.h, state.c
    _check_step_dims("lstm", p.input_dim, p.hidden_dim, x, h, c)
    i = sigmoid(p.w_xi @ x + p.w_hi @ h + p.b_i)
    f = sigmoid(p.w_xf @ x + p.w_hf @ h + p.b_f)
    o = sigmoid(p.w_xo @ x + p.w_ho @ h + p.b_o)
    c_new = f * c + i * np.tanh(p.w_xc @ x + p.w_hc @ h + p.b_c)
    h_new = o * np.tanh(c_new)
    return LayerState(h=h_new, c=c_new)


def gru_step(p: GruParams, x: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    """One GRU time step.

    r = sigmoid(W_r x + U_r h + b_r)
    z = sigmoid(W_z x + U_z h + b_z)
    h~ = tanh(W x + U (r * h) + b_h)
    h' = (1 - z) * h + z * h~
    """
    _check_step_dims("gru", p.input_dim, p.hidden_dim, x, h_prev)
    r = sigmoid(p.w_r @ x + p.u_r @ h_prev + p.b_r)
    z = sigmoid(p.w_z @ x + p.u_z @ h_prev + p.b_z)
    h_cand = np.tanh(p.w @ x + p.u @ (r * h_prev) + p.b_h)
    return (1.0 - z) * h_prev + z * h_cand


def zoneout_lstm_step(p: LstmParams, z: ZoneoutConfig, x: np.ndarray, state: LayerState,
                      mode: str, rng: Rng | None = None) -> LayerState:
    """LSTM step where each unit keeps its previous c/h value with probability d.

    Train mode draws independent Bernoulli keep-masks (c first, then h); eval
    mode uses the expectation, a linear interpolation with weights d.
    """
    cand = lstm_step(p, x, state)
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode zoneout needs an rng")
        m_c = rng.bernoulli(z.d_c, p.hidden_dim)
        m_h = rng.bernoulli(z.d_h, p.hidden_dim)
    elif mode == "eval":
        m_c = np.full(p.hidden_dim, z.d_c)
        m_h = np.full(p.hidden_dim, z.d_h)
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    c_new = m_c * state.c + (1.0 - m_c) * cand.c
    h_new = m_h * state.h + (1.0 - m_h) * cand.h
    return LayerState(h=h_new, c=c_new)


# ---------------------------------------------------------------------------
# Whole-sequence layer kernels with caches for the backward pass.
# ---------------------------------------------------------------------------


def lstm_layer_forward(p: LstmParams, x_seq: np.ndarray, zoneout: ZoneoutConfig | None,
                       mode: str, rng: Rng | None) -> tuple[np.ndarray, dict]:
    """Run one (zoneout-)LSTM layer over a T x D sequence from zero state."""
    t_len = x_seq.shape[0]
    hd = p.hidden_dim
    if x_seq.shape[1] != p.input_dim:
        raise ShapeError(f"layer input dim {x_seq.shape[1]} != param input dim {p.input_dim}")
    wx = np.vstack([p.w_xi, p.w_xf, p.w_xo, p.w_xc])
    wh = np.vstack([p.w_hi, p.w_hf, p.w_ho, p.w_hc])
    b = np.concatenate([p.b_i, p.b_f, p.b_o, p.b_c])
    ax = x_seq @ wx.T + b

    m_c = m_h = None
    if zoneout is not None:
        if mode == "train":
            m_c = rng.bernoulli(zoneout.d_c, (t_len, hd))
            m_h = rng.bernoulli(zoneout.d_h, (t_len, hd))
        else:
            m_c = np.full((t_len, hd), zoneout.d_c)
            m_h = np.full((t_len, hd), zoneout.d_h)

    gi = np.empty((t_len, hd))
    gf = np.empty((t_len, hd))
    go = np.empty((t_len, hd))
    gg = np.empty((t_len, hd))
    c_prevs = np.empty((t_len, hd))
    h_prevs = np.empty((t_len, hd))
    tc = np.empty((t_len, hd))
    out = np.empty((t_len, hd))

    h = np.zeros(hd)
    c = np.zeros(hd)
    for t in range(t_len):
        a = ax[t] + wh @ h
        i = sigmoid(a[:hd])
        f = sigmoid(a[hd:2 * hd])
        o = sigmoid(a[2 * hd:3 * hd])
        g = np.tanh(a[3 * hd:])
        c_cand = f * c + i * g
        tanh_c = np.tanh(c_cand)
        h_cand = o * tanh_c
        gi[t], gf[t], go[t], gg[t] = i, f, o, g
        c_prevs[t], h_prevs[t], tc[t] = c, h, tanh_c
        if m_c is not None:
            c = m_c[t] * c + (1.0 - m_c[t]) * c_cand
            h = m_h[t] * h + (1.0 - m_h[t]) * h_cand
        else:
            c, h = c_cand, h_cand
        out[t] = h

    cache = {"x": x_seq, "wx": wx, "wh": wh, "i": gi, "f": gf, "o": go, "g": gg,
             "c_prev": c_prevs, "h_prev": h_prevs, "tanh_c": tc,
             "m_c": m_c, "m_h": m_h}
    return out, cache


def lstm_layer_backward(p: LstmParams, cache: dict, d_out: np.ndarray
                        ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Exact gradients through one LSTM layer; masks from the cache are held fixed."""
    x_seq = cache["x"]
    wx, wh = cache["wx"], cache["wh"]
    gi, gf, go, gg = cache["i"], cache["f"], cache["o"], cache["g"]
    c_prevs, h_prevs, tc = cache["c_prev"], cache["h_prev"], cache["tanh_c"]
    m_c, m_h = cache["m_c"], cache["m_h"]
    t_len, hd = d_out.shape

    da = np.empty((t_len, 4 * hd))
    dh_carry = np.zeros(hd)
    dc_carry = np.zeros(hd)
    for t in reversed(range(t_len)):
        dh = d_out[t] + dh_carry
        dc = dc_carry
        if m_c is not None:
            dh_cand = dh * (1.0 - m_h[t])
            dh_direct = dh * m_h[t]
            dcc = dc * (1.0 - m_c[t])
            dc_direct = dc * m_c[t]
        else:
            dh_cand, dh_direct = dh, 0.0
            dcc, dc_direct = dc, 0.0
        i, f, o, g = gi[t], gf[t], go[t], gg[t]
        do = dh_cand * tc[t]
        dcc = dcc + dh_cand * o * (1.0 - tc[t] ** 2)
        df = dcc * c_prevs[t]
        di = dcc * g
        dg = dcc * i
        dc_carry = dc_direct + dcc * f
        da[t, :hd] = di * i * (1.0 - i)
        da[t, hd:2 * hd] = df * f * (1.0 - f)
        da[t, 2 * hd:3 * hd] = do * o * (1.0 - o)
        da[t, 3 * hd:] = dg * (1.0 - g ** 2)
        dh_carry = dh_direct + wh.T @ da[t]

    dwx = da.T @ x_seq
    dwh = da.T @ h_prevs
    db = da.sum(axis=0)
    dx = da @ wx
    grads = {
        "w_xi": dwx[:hd], "w_xf": dwx[hd:2 * hd], "w_xo": dwx[2 * hd:3 * hd], "w_xc": dwx[3 * hd:],
        "w_hi": dwh[:hd], "w_hf": dwh[hd:2 * hd], "w_ho": dwh[2 * hd:3 * hd], "w_hc": dwh[3 * hd:],
        "b_i": db[:hd], "b_f": db[hd:2 * hd], "b_o": db[2 * hd:3 * hd], "b_c": db[3 * hd:],
    }
    return dx, grads


def gru_layer_forward(p: GruParams, x_seq: np.ndarray, mode: str, rng: Rng | None
                      ) -> tuple[np.ndarray, dict]:
    """Run one GRU layer over a T x D sequence from zero state."""
    t_len = x_seq.shape[0]
    hd = p.hidden_dim
    if x_seq.shape[1] != p.input_dim:
        raise ShapeError(f"layer input dim {x_seq.shape[1]} != param input dim {p.input_dim}")
    wx = np.vstack([p.w_r, p.w_z, p.w])
    b = np.concatenate([p.b_r, p.b_z, p.b_h])
    ax = x_seq @ wx.T + b

    gr = np.empty((t_len, hd))
    gz = np.empty((t_len, hd))
    hc = np.empty((t_len, hd))
    rh = np.empty((t_len, hd))
    h_prevs = np.empty((t_len, hd))
    out = np.empty((t_len, hd))

    h = np.zeros(hd)
    for t in range(t_len):
        r = sigmoid(ax[t, :hd] + p.u_r @ h)
        z = sigmoid(ax[t, hd:2 * hd] + p.u_z @ h)
        r_h = r * h
        cand = np.tanh(ax[t, 2 * hd:] + p.u @ r_h)
        gr[t], gz[t], hc[t], rh[t], h_prevs[t] = r, z, cand, r_h, h
        h = (1.0 - z) * h + z * cand
        out[t] = h

    cache = {"x": x_seq, "wx": wx, "r": gr, "z": gz, "hc": hc, "rh": rh, "h_prev": h_prevs}
    return out, cache


def gru_layer_backward(p: GruParams, cache: dict, d_out: np.ndarray
                       ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    x_seq = cache["x"]
    wx = cache["wx"]
    gr, gz, hc, rh, h_prevs = cache["r"], cache["z"], cache["hc"], cache["rh"], cache["h_prev"]
    t_len, hd = d_out.shape

    da = np.empty((t_len, 3 * hd))
    dh_carry = np.zeros(hd)
    for t in reversed(range(t_len)):
        dh = d_out[t] + dh_carry
        r, z, cand, h_prev = gr[t], gz[t], hc[t], h_prevs[t]
        dz = dh * (cand - h_prev)
        dcand = dh * z
        dh_prev = dh * (1.0 - z)
        dac = dcand * (1.0 - cand ** 2)
        drh = p.u.T @ dac
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r
        dar = dr * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dh_prev = dh_prev + p.u_r.T @ dar + p.u_z.T @ daz
        da[t, :hd] = dar
        da[t, hd:2 * hd] = daz
        da[t, 2 * hd:] = dac
        dh_carry = dh_prev

    dwx = da.T @ x_seq
    db = da.sum(axis=0)
    dx = da @ wx
    grads = {
        "w_r": dwx[:hd], "w_z": dwx[hd:2 * hd], "w": dwx[2 * hd:],
        "u_r": da[:, :hd].T @ h_prevs,
        "u_z": da[:, hd:2 * hd].T @ h_prevs,
        "u": da[:, 2 * hd:].T @ rh,
        "b_r": db[:hd], "b_z": db[hd:2 * hd], "b_h": db[2 * hd:],
    }
    return dx, grads


def ff_layer_forward(p: FfParams, x_seq: np.ndarray) -> tuple[np.ndarray, dict]:
    """Fully connected ReLU layer applied to every frame independently."""
    if x_seq.shape[1] != p.input_dim:
        raise ShapeError(f"layer input dim {x_seq.shape[1]} != param input dim {p.input_dim}")
    pre = x_seq @ p.w.T + p.b
    out = np.maximum(pre, 0.0)
    return out, {"x": x_seq, "pre": pre}


def ff_layer_backward(p: FfParams, cache: dict, d_out: np.ndarray
                      ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    dpre = d_out * (cache["pre"] > 0.0)
    grads = {"w": dpre.T @ cache["x"], "b": dpre.sum(axis=0)}
    return dpre @ p.w, grads
