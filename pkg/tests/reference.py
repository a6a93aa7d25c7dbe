"""Independent step-by-step recomputation of the architecture's math.

Plain numpy only, no autodiff imports: these references stay independent of
the code paths they verify. Weight arrays are plucked out of blocks with
the ``*_arrays`` helpers.
"""

import math

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5


def ref_relu(x):
    return np.maximum(x, 0.0)


def ref_gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def ref_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def ref_softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def ref_layer_norm(x, gamma, beta, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def ref_project(w, b, x):
    return ref_relu(x @ w.T + b)


def acar_arrays(block):
    return {
        "w_q": [t.data for t in block.w_q],
        "w_k": [t.data for t in block.w_k],
        "w_v": [t.data for t in block.w_v],
        "w_o": block.w_o.data,
        "w_down": block.w_down.data,
        "w_up": block.w_up.data,
        "lam": float(block.lam.data),
        "gamma": block.ln_gamma.data,
        "beta": block.ln_beta.data,
    }


def dfa_arrays(block):
    return {
        "w_g": block.w_g.data,
        "b_g": float(block.b_g.data),
        "w_down": block.w_down.data,
        "w_up": block.w_up.data,
        "gamma": block.ln_gamma.data,
        "beta": block.ln_beta.data,
    }


def ref_cross_attention(p, q, kv):
    d_k = p["w_q"][0].shape[1]
    heads = []
    for wq, wk, wv in zip(p["w_q"], p["w_k"], p["w_v"]):
        scores = (q @ wq) @ (kv @ wk).T / math.sqrt(d_k)
        heads.append(ref_softmax(scores) @ (kv @ wv))
    return np.concatenate(heads, axis=-1) @ p["w_o"]


def ref_acar(p, q, kv):
    a = ref_cross_attention(p, q, kv)
    adapted = p["lam"] * (ref_gelu(a @ p["w_down"].T) @ p["w_up"].T)
    return ref_layer_norm(q + a + adapted, p["gamma"], p["beta"])


def ref_dfa(p, z):
    gate = ref_sigmoid(z.mean(axis=-2, keepdims=True) @ p["w_g"].T + p["b_g"])
    gated = gate * (ref_gelu(z @ p["w_down"].T) @ p["w_up"].T)
    return ref_layer_norm(z + gated, p["gamma"], p["beta"])


def ref_block(block, x_img, x_txt):
    if block.acar_i2t is not None:
        z_i2t = ref_acar(acar_arrays(block.acar_i2t), x_img, x_txt)
        z_t2i = ref_acar(acar_arrays(block.acar_t2i), x_txt, x_img)
    else:
        z_i2t, z_t2i = x_img, x_txt
    z_fuse = 0.5 * (z_i2t + z_t2i)
    tap = ref_dfa(dfa_arrays(block.dfa), z_fuse) if block.dfa is not None else z_fuse
    return z_i2t, z_t2i, tap


def ref_aggregate(taps):
    return np.mean(taps, axis=0).mean(axis=-2)


def ref_classify(w_c, f_final, sigma):
    f2 = np.atleast_2d(f_final)
    f_unit = f2 / np.linalg.norm(f2, axis=-1, keepdims=True)
    w_unit = w_c / np.linalg.norm(w_c, axis=-1, keepdims=True)
    logits = sigma * (f_unit @ w_unit.T)
    return logits[0] if np.ndim(f_final) == 1 else logits


def ref_model_forward(model, f_img, f_txt):
    if model.proj_img is not None:
        x_img = ref_project(model.proj_img.w.data, model.proj_img.b.data, f_img)
        x_txt = ref_project(model.proj_txt.w.data, model.proj_txt.b.data, f_txt)
    else:
        x_img, x_txt = f_img, f_txt
    taps = []
    for block in model.blocks:
        x_img, x_txt, tap = ref_block(block, x_img, x_txt)
        taps.append(tap)
    return ref_classify(model.w_c.data, ref_aggregate(taps), model.config.sigma_scale)
