"""Independent reference implementations used only by the test suite.

These are deliberately written as plain straight-line numpy (or arbitrary
precision) code sharing nothing with the package internals, so that an error
in the package cannot cancel out in the comparison.
"""

import mpmath
import numpy as np


def lstm_step_reference(w_xi, w_hi, w_xf, w_hf, w_xo, w_ho, w_xc, w_hc,
                        b_i, b_f, b_o, b_c, x_t, h_prev, c_prev):
    """Straight-line transcription of the five LSTM equations."""
    i_t = 1.0 / (1.0 + np.exp(-(w_xi @ x_t + w_hi @ h_prev + b_i)))
    f_t = 1.0 / (1.0 + np.exp(-(w_xf @ x_t + w_hf @ h_prev + b_f)))
    o_t = 1.0 / (1.0 + np.exp(-(w_xo @ x_t + w_ho @ h_prev + b_o)))
    c_t = f_t * c_prev + i_t * np.tanh(w_xc @ x_t + w_hc @ h_prev + b_c)
    h_t = o_t * np.tanh(c_t)
    return h_t, c_t


def gru_step_reference(w_r, u_r, w_z, u_z, w, u, b_r, b_z, b_h, x_t, h_prev):
    """Straight-line transcription of the four GRU equations."""
    r_t = 1.0 / (1.0 + np.exp(-(w_r @ x_t + u_r @ h_prev + b_r)))
    z_t = 1.0 / (1.0 + np.exp(-(w_z @ x_t + u_z @ h_prev + b_z)))
    h_cand = np.tanh(w @ x_t + u @ (r_t * h_prev) + b_h)
    return (1.0 - z_t) * h_prev + z_t * h_cand


def softmax_mpmath(values, dps: int = 60) -> np.ndarray:
    """Softmax evaluated in 60-digit arithmetic."""
    with mpmath.workdps(dps):
        exps = [mpmath.e ** mpmath.mpf(float(v)) for v in values]
        total = mpmath.fsum(exps)
        return np.array([float(e / total) for e in exps])


def levenshtein_distance(ref, hyp) -> int:
    """Classic two-row edit distance with unit costs."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i]
        for j, h in enumerate(hyp, start=1):
            cur.append(min(prev[j] + 1,            # deletion
                           cur[j - 1] + 1,         # insertion
                           prev[j - 1] + (r != h)))  # substitution / match
        prev = cur
    return prev[-1]
