"""Stroke sampling, optionally primed on a real pen sequence.

Priming teacher-forces the network over the priming strokes against the
concatenated priming text + target text, then sampling continues
autoregressively from the resulting state.  Per-layer hidden vectors are
recorded at sampled timesteps only; a synthesis ends when the fastest
attention center passes the last character, or at max_steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import LstmState, SynthNet, attention_step, lstm_step, mdn_params, split_raw_output

MAX_STEPS_PER_CHAR = 60


@dataclass
class SynthesisResult:
    strokes: np.ndarray            # T x 3 sampled pen steps
    activations: list              # 3 matrices T x n, one per layer
    attention_trace: np.ndarray    # T x U window weights (U covers priming + target)
    charseq: str                   # the attended character sequence


def _layer_params(net: SynthNet, layer: int):
    p = net.params
    return (p[f"lstm{layer}_wx"], p[f"lstm{layer}_wh"], p[f"lstm{layer}_b"])


def _step(net: SynthNet, x, states, kappa, window_prev, charseq_onehot):
    """One full network step; returns layer outputs, attention, and raw output."""
    p = net.params
    h1, s1 = lstm_step(_layer_params(net, 1), np.concatenate([x, window_prev]), states[0])
    window, attn = attention_step((p["attn_w"], p["attn_b"]), h1, kappa, charseq_onehot)
    h2, s2 = lstm_step(_layer_params(net, 2), np.concatenate([x, window, h1]), states[1])
    h3, s3 = lstm_step(_layer_params(net, 3), np.concatenate([x, window, h2]), states[2])
    raw = h1 @ p["out_w1"].T + h2 @ p["out_w2"].T + h3 @ p["out_w3"].T + p["out_b"]
    return (s1, s2, s3), attn, window, raw


def _sample_pen_step(params, rng):
    j = int(rng.choice(params.pi.shape[0], p=params.pi / params.pi.sum()))
    z1, z2 = rng.standard_normal(2)
    sx, sy = params.sigma[j]
    rho = params.rho[j]
    dx = params.mu[j, 0] + sx * z1
    dy = params.mu[j, 1] + sy * (rho * z1 + np.sqrt(1.0 - rho**2) * z2)
    pen_up = 1.0 if rng.uniform() < params.e else 0.0
    return np.array([dx, dy, pen_up])


def synthesize(
    net: SynthNet,
    text: str,
    priming=None,
    seed=0,
    max_steps: int | None = None,
) -> SynthesisResult:
    """Sample strokes for `text`, recording per-layer activations.

    priming, when given, is (strokes T x 3, priming_text); the recorded
    activations and attention rows cover sampled steps only.  Deterministic
    in all arguments including seed.
    """
    if not text:
        raise ValueError("empty text")
    cfg = net.config
    n = cfg.units_per_layer
    if priming is not None:
        priming_strokes, priming_text = priming
        priming_strokes = np.asarray(priming_strokes, dtype=np.float64)
        if priming_strokes.ndim != 2 or priming_strokes.shape[1] != 3 or priming_strokes.shape[0] < 1:
            raise ValueError("priming strokes must be a nonempty T x 3 matrix")
        charseq = priming_text + text
    else:
        priming_strokes, priming_text = None, ""
        charseq = text
    onehot = cfg.one_hot(charseq)
    big_u = len(charseq)
    if max_steps is None:
        max_steps = MAX_STEPS_PER_CHAR * len(text)

    rng = np.random.default_rng(seed)
    states = tuple(LstmState(h=np.zeros(n), c=np.zeros(n)) for _ in range(3))
    kappa = np.zeros(cfg.attention_components)
    window = np.zeros(cfg.alphabet_size)
    x = np.zeros(3)

    if priming_strokes is not None:
        for t in range(priming_strokes.shape[0]):
            states, attn, window, _ = _step(net, x, states, kappa, window, onehot)
            kappa = attn.kappa
            x = priming_strokes[t]

    strokes = []
    recorded = [[], [], []]
    trace = []
    for _ in range(max_steps):
        states, attn, window, raw = _step(net, x, states, kappa, window, onehot)
        kappa = attn.kappa
        step = _sample_pen_step(mdn_params(raw), rng)
        strokes.append(step)
        for layer in range(3):
            recorded[layer].append(states[layer].h)
        trace.append(attn.phi_row)
        x = step
        if float(np.max(kappa)) > big_u - 0.5:
            break

    if not strokes:
        raise ValueError("no steps sampled (max_steps too small?)")
    return SynthesisResult(
        strokes=np.vstack(strokes),
        activations=[np.vstack(rows) for rows in recorded],
        attention_trace=np.vstack(trace),
        charseq=charseq,
    )


def split_raw(net: SynthNet, raw):
    """Expose the raw-output slicing for diagnostics."""
    return split_raw_output(raw, net.config.mixture_components)
