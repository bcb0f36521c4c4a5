"""Full-sequence backpropagation-through-time trainer.

Sequences are teacher-forced in one padded batch; the loss is the mean
next-step mixture-density NLL over all real timesteps.  Gradients are
clipped at a global norm and applied with plain SGD (optionally Adam).
The forward pass mirrors the step functions in net.py exactly, including
the exponential clamps, whose inactive regions carry zero gradient.
"""

from __future__ import annotations

import math

import numpy as np

from .net import (
    EXP_CLAMP,
    LOG_DENSITY_FLOOR,
    PEN_DIM,
    PROB_EPS,
    RHO_MAX,
    SynthNet,
)

_LOG_2PI = math.log(2.0 * math.pi)
GRAD_CLIP_NORM = 10.0


def _sigmoid(x):
    z = np.exp(-np.abs(x))
    return np.where(np.asarray(x) >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def prepare_batch(config, corpus):
    """Pad sequences and texts into one teacher-forcing batch.

    inputs[b, t] is the previous stroke (zeros at t=0), targets[b, t] the
    stroke to predict; mask flags real steps.
    """
    n_seq = len(corpus)
    lengths = [strokes.shape[0] for strokes, _, _ in corpus]
    t_max = max(lengths)
    u_max = max(len(text) for _, text, _ in corpus)
    a = config.alphabet_size
    inputs = np.zeros((n_seq, t_max, PEN_DIM))
    targets = np.zeros((n_seq, t_max, PEN_DIM))
    mask = np.zeros((n_seq, t_max))
    charseqs = np.zeros((n_seq, u_max, a))
    for b, (strokes, text, _) in enumerate(corpus):
        strokes = np.asarray(strokes, dtype=np.float64)
        t_len = strokes.shape[0]
        inputs[b, 1:t_len] = strokes[: t_len - 1]
        targets[b, :t_len] = strokes
        mask[b, :t_len] = 1.0
        charseqs[b, : len(text)] = config.one_hot(text)
    return inputs, targets, mask, charseqs


def loss_and_gradients(params, config, inputs, targets, mask, charseqs):
    """Mean NLL of the batch and its gradient for every parameter tensor."""
    n = config.units_per_layer
    k = config.attention_components
    m = config.mixture_components
    a = config.alphabet_size
    n_seq, t_max = mask.shape
    u_max = charseqs.shape[1]
    u_grid = np.arange(u_max, dtype=np.float64)
    total_steps = float(mask.sum())

    h = [np.zeros((n_seq, n)) for _ in range(3)]
    c = [np.zeros((n_seq, n)) for _ in range(3)]
    kappa = np.zeros((n_seq, k))
    window = np.zeros((n_seq, a))

    caches = []
    total_nll = 0.0
    for t in range(t_max):
        x = inputs[:, t]
        cache = {"x": x, "window_prev": window, "h_prev": [hl.copy() for hl in h]}

        def cell(layer, in_vec, idx):
            z = in_vec @ params[f"lstm{layer}_wx"].T + h[idx] @ params[f"lstm{layer}_wh"].T
            z = z + params[f"lstm{layer}_b"]
            gi = _sigmoid(z[:, 0:n])
            gf = _sigmoid(z[:, n : 2 * n])
            gg = np.tanh(z[:, 2 * n : 3 * n])
            go = _sigmoid(z[:, 3 * n : 4 * n])
            c_new = gf * c[idx] + gi * gg
            tanh_c = np.tanh(c_new)
            h_new = go * tanh_c
            cache[f"l{layer}"] = (in_vec, gi, gf, gg, go, c[idx], tanh_c)
            c[idx] = c_new
            h[idx] = h_new
            return h_new

        in1 = np.concatenate([x, window], axis=1)
        h1 = cell(1, in1, 0)

        raw_attn = h1 @ params["attn_w"].T + params["attn_b"]
        ra, rb, rk = raw_attn[:, 0:k], raw_attn[:, k : 2 * k], raw_attn[:, 2 * k : 3 * k]
        mask_a, mask_b, mask_k = ra <= EXP_CLAMP, rb <= EXP_CLAMP, rk <= EXP_CLAMP
        alpha = np.exp(np.minimum(ra, EXP_CLAMP))
        beta = np.exp(np.minimum(rb, EXP_CLAMP))
        exp_k = np.exp(np.minimum(rk, EXP_CLAMP))
        kappa = kappa + exp_k
        diffu = kappa[:, None, :] - u_grid[None, :, None]
        gauss = np.exp(-beta[:, None, :] * diffu**2)
        phi = np.sum(alpha[:, None, :] * gauss, axis=2)
        window = np.einsum("bu,bua->ba", phi, charseqs)
        cache["attn"] = (alpha, beta, exp_k, diffu, gauss, mask_a, mask_b, mask_k)

        in2 = np.concatenate([x, window, h1], axis=1)
        h2 = cell(2, in2, 1)
        in3 = np.concatenate([x, window, h2], axis=1)
        h3 = cell(3, in3, 2)

        y = (
            h1 @ params["out_w1"].T
            + h2 @ params["out_w2"].T
            + h3 @ params["out_w3"].T
            + params["out_b"]
        )
        e_hat = y[:, 0]
        pil = y[:, 1 : 1 + m]
        mux = y[:, 1 + m : 1 + 2 * m]
        muy = y[:, 1 + 2 * m : 1 + 3 * m]
        sxh_raw = y[:, 1 + 3 * m : 1 + 4 * m]
        syh_raw = y[:, 1 + 4 * m : 1 + 5 * m]
        rhoh = y[:, 1 + 5 * m : 1 + 6 * m]

        mask_sx = np.abs(sxh_raw) <= EXP_CLAMP
        mask_sy = np.abs(syh_raw) <= EXP_CLAMP
        sxh = np.clip(sxh_raw, -EXP_CLAMP, EXP_CLAMP)
        syh = np.clip(syh_raw, -EXP_CLAMP, EXP_CLAMP)
        sx = np.exp(sxh)
        sy = np.exp(syh)
        tanh_rho = np.tanh(rhoh)
        mask_rho = np.abs(tanh_rho) < RHO_MAX
        rho = np.clip(tanh_rho, -RHO_MAX, RHO_MAX)

        tx, ty, tp = targets[:, t, 0], targets[:, t, 1], targets[:, t, 2]
        xn = (tx[:, None] - mux) / sx
        yn = (ty[:, None] - muy) / sy
        omr = 1.0 - rho**2
        cr = 1.0 / omr
        z_quad = xn**2 + yn**2 - 2.0 * rho * xn * yn
        log_pi = pil - _logsumexp(pil)
        lg = -_LOG_2PI - sxh - syh - 0.5 * np.log(omr) - 0.5 * z_quad * cr
        comp = log_pi + lg
        llmix_raw = _logsumexp(comp)[:, 0]
        floor_on = llmix_raw > LOG_DENSITY_FLOOR
        llmix = np.maximum(llmix_raw, LOG_DENSITY_FLOOR)

        s_e = _sigmoid(e_hat)
        mask_e = (s_e > PROB_EPS) & (s_e < 1.0 - PROB_EPS)
        e = np.clip(s_e, PROB_EPS, 1.0 - PROB_EPS)
        lbern = tp * np.log(e) + (1.0 - tp) * np.log(1.0 - e)
        nll = -(llmix + lbern)
        total_nll += float(np.sum(nll * mask[:, t]))

        cache["mdn"] = (
            comp,
            llmix_raw,
            floor_on,
            log_pi,
            xn,
            yn,
            rho,
            cr,
            z_quad,
            sx,
            sy,
            s_e,
            tp,
            mask_sx,
            mask_sy,
            mask_rho,
            mask_e,
        )
        cache["h"] = [hl.copy() for hl in h]
        caches.append(cache)

    loss = total_nll / total_steps

    grads = {key: np.zeros_like(value) for key, value in params.items()}
    dh_carry = [np.zeros((n_seq, n)) for _ in range(3)]
    dc_carry = [np.zeros((n_seq, n)) for _ in range(3)]
    dkappa_next = np.zeros((n_seq, k))
    dwindow_l1_next = np.zeros((n_seq, a))

    def cell_backward(layer, cache_entry, h_prev, dh, dc_in):
        in_vec, gi, gf, gg, go, c_prev, tanh_c = cache_entry
        do = dh * tanh_c
        dc = dc_in + dh * go * (1.0 - tanh_c**2)
        di = dc * gg
        dg = dc * gi
        df = dc * c_prev
        dc_prev = dc * gf
        dz = np.concatenate(
            [
                di * gi * (1.0 - gi),
                df * gf * (1.0 - gf),
                dg * (1.0 - gg**2),
                do * go * (1.0 - go),
            ],
            axis=1,
        )
        grads[f"lstm{layer}_wx"] += dz.T @ in_vec
        grads[f"lstm{layer}_wh"] += dz.T @ h_prev
        grads[f"lstm{layer}_b"] += dz.sum(axis=0)
        din = dz @ params[f"lstm{layer}_wx"]
        dh_prev = dz @ params[f"lstm{layer}_wh"]
        return din, dh_prev, dc_prev

    for t in reversed(range(t_max)):
        cache = caches[t]
        h1, h2, h3 = cache["h"]
        (
            comp,
            llmix_raw,
            floor_on,
            log_pi,
            xn,
            yn,
            rho,
            cr,
            z_quad,
            sx,
            sy,
            s_e,
            tp,
            mask_sx,
            mask_sy,
            mask_rho,
            mask_e,
        ) = cache["mdn"]

        scale = mask[:, t] / total_steps
        dllmix = -scale * floor_on
        gamma = np.exp(comp - llmix_raw[:, None])
        dcomp = gamma * dllmix[:, None]
        pi = np.exp(log_pi)
        dpil = dcomp - pi * dcomp.sum(axis=1, keepdims=True)
        dlg = dcomp
        dmux = dlg * cr * (xn - rho * yn) / sx
        dmuy = dlg * cr * (yn - rho * xn) / sy
        dsxh = dlg * (-1.0 + cr * xn * (xn - rho * yn)) * mask_sx
        dsyh = dlg * (-1.0 + cr * yn * (yn - rho * xn)) * mask_sy
        drhoh = dlg * (xn * yn + rho * (1.0 - cr * z_quad)) * mask_rho
        de_hat = (s_e - tp) * scale * mask_e

        dy = np.concatenate(
            [de_hat[:, None], dpil, dmux, dmuy, dsxh, dsyh, drhoh], axis=1
        )
        grads["out_w1"] += dy.T @ h1
        grads["out_w2"] += dy.T @ h2
        grads["out_w3"] += dy.T @ h3
        grads["out_b"] += dy.sum(axis=0)

        dh3 = dy @ params["out_w3"] + dh_carry[2]
        din3, dh_carry[2], dc_carry[2] = cell_backward(
            3, cache["l3"], cache["h_prev"][2], dh3, dc_carry[2]
        )
        dwin3 = din3[:, PEN_DIM : PEN_DIM + a]
        dh2_from3 = din3[:, PEN_DIM + a :]

        dh2 = dy @ params["out_w2"] + dh_carry[1] + dh2_from3
        din2, dh_carry[1], dc_carry[1] = cell_backward(
            2, cache["l2"], cache["h_prev"][1], dh2, dc_carry[1]
        )
        dwin2 = din2[:, PEN_DIM : PEN_DIM + a]
        dh1_from2 = din2[:, PEN_DIM + a :]

        dwindow = dwin3 + dwin2 + dwindow_l1_next
        alpha, beta, exp_k, diffu, gauss, mask_a, mask_b, mask_k = cache["attn"]
        dphi = np.einsum("ba,bua->bu", dwindow, charseqs)
        weighted = alpha[:, None, :] * gauss
        dalpha = np.sum(dphi[:, :, None] * gauss, axis=1)
        dbeta = np.sum(dphi[:, :, None] * weighted * (-(diffu**2)), axis=1)
        dkappa = (
            np.sum(dphi[:, :, None] * weighted * (-2.0 * beta[:, None, :] * diffu), axis=1)
            + dkappa_next
        )
        draw = np.concatenate(
            [dalpha * alpha * mask_a, dbeta * beta * mask_b, dkappa * exp_k * mask_k],
            axis=1,
        )
        grads["attn_w"] += draw.T @ h1
        grads["attn_b"] += draw.sum(axis=0)
        dh1_attn = draw @ params["attn_w"]
        dkappa_next = dkappa

        dh1 = dy @ params["out_w1"] + dh_carry[0] + dh1_from2 + dh1_attn
        din1, dh_carry[0], dc_carry[0] = cell_backward(
            1, cache["l1"], cache["h_prev"][0], dh1, dc_carry[0]
        )
        dwindow_l1_next = din1[:, PEN_DIM : PEN_DIM + a]

    return loss, grads


def _logsumexp(x):
    top = np.max(x, axis=-1, keepdims=True)
    return top + np.log(np.sum(np.exp(x - top), axis=-1, keepdims=True))


def clip_gradients(grads, max_norm: float = GRAD_CLIP_NORM):
    """Scale all gradients together so their global norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g**2)) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / total
        grads = {key: g * factor for key, g in grads.items()}
    return grads, total


def train(
    net: SynthNet,
    corpus,
    epochs: int,
    learning_rate: float,
    seed=0,
    optimizer: str = "sgd",
    clip_norm: float = GRAD_CLIP_NORM,
):
    """Train on (strokes, text, style_id) sequences; returns (net, loss_curve).

    Full-batch gradient steps in a fixed order keep runs bit-reproducible.
    The default optimizer is plain SGD; "adam" is available for the small
    desk-scale budgets where SGD converges too slowly.  A non-finite loss
    aborts with an error naming the epoch.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    for strokes, text, _ in corpus:
        if np.asarray(strokes).shape[0] < 2:
            raise ValueError("every training sequence needs length >= 2")
        if not text:
            raise ValueError("empty text in corpus")
    del seed  # reserved for minibatch schedules; full-batch training is deterministic

    config = net.config
    params = {key: value.copy() for key, value in net.params.items()}
    batch = prepare_batch(config, corpus)

    if optimizer not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    adam_m = {key: np.zeros_like(value) for key, value in params.items()}
    adam_v = {key: np.zeros_like(value) for key, value in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    loss_curve = []
    for epoch in range(epochs):
        loss, grads = loss_and_gradients(params, config, *batch)
        if not math.isfinite(loss):
            raise ValueError(f"divergence at epoch {epoch}: loss is not finite")
        loss_curve.append(loss)
        grads, _ = clip_gradients(grads, clip_norm)
        if optimizer == "sgd":
            for key in params:
                params[key] -= learning_rate * grads[key]
        else:
            step = epoch + 1
            for key in params:
                adam_m[key] = beta1 * adam_m[key] + (1 - beta1) * grads[key]
                adam_v[key] = beta2 * adam_v[key] + (1 - beta2) * grads[key] ** 2
                m_hat = adam_m[key] / (1 - beta1**step)
                v_hat = adam_v[key] / (1 - beta2**step)
                params[key] -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return SynthNet(config=config, params=params), loss_curve
