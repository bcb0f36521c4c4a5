"""Stacked-LSTM pen-stroke generator with attention and a mixture-density head.

Three LSTM layers all receive the 3-value pen state (dx, dy, pen_up).
Layer 1 additionally receives the previous character window; its output
drives a mixture-of-Gaussians attention over character positions whose
centers only ever move forward.  The resulting window vector feeds layers
2 and 3 alongside the previous layer's output, and all three layer
outputs map affinely to the mixture-density parameters for the next pen
state: pen-up probability, component weights, bivariate means, scales
and correlations.

All step functions accept a single vector or any batch of leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..tensorio import load_tensors, save_tensors

DEFAULT_ALPHABET = "abcdefghij "
PEN_DIM = 3
EXP_CLAMP = 50.0
PROB_EPS = 1e-12
RHO_MAX = 1.0 - 1e-12
LOG_DENSITY_FLOOR = math.log(1e-300)
FORGET_BIAS = 1.0
KAPPA_RATE_INIT = 0.2


@dataclass
class SynthConfig:
    num_layers: int = 3
    units_per_layer: int = 32
    mixture_components: int = 5
    attention_components: int = 3
    alphabet: str = DEFAULT_ALPHABET

    def __post_init__(self):
        if self.num_layers != 3:
            raise ValueError("the generator is defined with exactly 3 recurrent layers")
        if min(self.units_per_layer, self.mixture_components, self.attention_components) < 1:
            raise ValueError("all size parameters must be >= 1")
        if len(self.alphabet) != len(set(self.alphabet)):
            raise ValueError("alphabet characters must be unique")

    @property
    def alphabet_size(self) -> int:
        return len(self.alphabet)

    @property
    def output_dim(self) -> int:
        return 1 + 6 * self.mixture_components

    def input_dim(self, layer: int) -> int:
        base = PEN_DIM + self.alphabet_size
        return base if layer == 1 else base + self.units_per_layer

    def one_hot(self, text: str) -> np.ndarray:
        index = {ch: i for i, ch in enumerate(self.alphabet)}
        out = np.zeros((len(text), self.alphabet_size))
        for u, ch in enumerate(text):
            if ch not in index:
                raise ValueError(f"character {ch!r} outside alphabet {self.alphabet!r}")
            out[u, index[ch]] = 1.0
        return out


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class AttentionState:
    kappa: np.ndarray     # K nonnegative, non-decreasing over a synthesis
    phi_row: np.ndarray   # U nonnegative weights over character positions


@dataclass
class MixtureParams:
    e: float
    pi: np.ndarray        # M, sums to 1
    mu: np.ndarray        # M x 2
    sigma: np.ndarray     # M x 2, positive
    rho: np.ndarray       # M, |rho| < 1


@dataclass
class PenStep:
    dx: float
    dy: float
    pen_up: float


@dataclass
class SynthNet:
    """Parameter container; immutable by convention during synthesis."""

    config: SynthConfig
    params: dict

    def save(self, path):
        scalars = {
            "units_per_layer": self.config.units_per_layer,
            "mixture_components": self.config.mixture_components,
            "attention_components": self.config.attention_components,
            "alphabet": self.config.alphabet,
        }
        save_tensors(path, self.params, scalars=scalars, kind="synthnet")

    @classmethod
    def load(cls, path):
        tensors, scalars = load_tensors(path, kind="synthnet")
        config = SynthConfig(
            units_per_layer=int(scalars["units_per_layer"]),
            mixture_components=int(scalars["mixture_components"]),
            attention_components=int(scalars["attention_components"]),
            alphabet=scalars["alphabet"],
        )
        return cls(config=config, params=tensors)


def init_net(config: SynthConfig, seed) -> SynthNet:
    """Seeded random initialization.

    Weights are scaled by 1/sqrt(fan_in); forget-gate biases start at +1
    and the attention center-advance bias at log(KAPPA_RATE_INIT) so the
    window moves roughly one template point per step before training.
    """
    rng = np.random.default_rng(seed)
    n = config.units_per_layer
    k = config.attention_components
    params = {}

    def weight(rows, cols):
        return rng.standard_normal((rows, cols)) / math.sqrt(cols)

    for layer in (1, 2, 3):
        d_in = config.input_dim(layer)
        params[f"lstm{layer}_wx"] = weight(4 * n, d_in)
        params[f"lstm{layer}_wh"] = weight(4 * n, n)
        bias = np.zeros(4 * n)
        bias[n : 2 * n] = FORGET_BIAS
        params[f"lstm{layer}_b"] = bias
    params["attn_w"] = weight(3 * k, n)
    attn_b = np.zeros(3 * k)
    attn_b[2 * k : 3 * k] = math.log(KAPPA_RATE_INIT)
    params["attn_b"] = attn_b
    for layer in (1, 2, 3):
        params[f"out_w{layer}"] = weight(config.output_dim, n)
    params["out_b"] = np.zeros(config.output_dim)
    return SynthNet(config=config, params=params)


def _sigmoid(x):
    z = np.exp(-np.abs(x))
    return np.where(np.asarray(x) >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def lstm_step(layer_params, input_vec, state: LstmState):
    """One LSTM step with logistic gates and tanh squashing.

    layer_params is (wx, wh, b) with gate rows ordered input, forget,
    candidate, output.  Returns (h_out, new_state) with h_out == new_state.h.
    """
    wx, wh, b = layer_params
    n = wh.shape[1]
    if input_vec.shape[-1] != wx.shape[1]:
        raise ValueError(f"input size {input_vec.shape[-1]} != expected {wx.shape[1]}")
    z = input_vec @ wx.T + state.h @ wh.T + b
    i = _sigmoid(z[..., 0:n])
    f = _sigmoid(z[..., n : 2 * n])
    g = np.tanh(z[..., 2 * n : 3 * n])
    o = _sigmoid(z[..., 3 * n : 4 * n])
    c = f * state.c + i * g
    h = o * np.tanh(c)
    return h, LstmState(h=h, c=c)


def attention_window(alpha, beta, kappa, charseq):
    """Window weights phi(u) and the blended character vector.

    phi(u) = sum_k alpha_k exp(-beta_k (kappa_k - u)^2) for u = 0..U-1.
    """
    u_grid = np.arange(charseq.shape[0], dtype=np.float64)
    diff = kappa[..., None, :] - u_grid[:, None]          # ... x U x K
    phi = np.sum(alpha[..., None, :] * np.exp(-beta[..., None, :] * diff**2), axis=-1)
    window = phi @ charseq
    return phi, window


def attention_step(attn_params, h1, kappa_prev, charseq):
    """Advance the attention window from the layer-1 output.

    Produces (alpha, beta, kappa_hat) by an affine map; alpha and beta
    through exp, and kappa_k = kappa_prev_k + exp(kappa_hat_k) so centers
    never decrease.  Exponential arguments are clamped at EXP_CLAMP.
    """
    w, b = attn_params
    k = kappa_prev.shape[-1]
    raw = h1 @ w.T + b
    alpha = np.exp(np.minimum(raw[..., 0:k], EXP_CLAMP))
    beta = np.exp(np.minimum(raw[..., k : 2 * k], EXP_CLAMP))
    kappa = kappa_prev + np.exp(np.minimum(raw[..., 2 * k : 3 * k], EXP_CLAMP))
    phi, window = attention_window(alpha, beta, kappa, charseq)
    return window, AttentionState(kappa=kappa, phi_row=phi)


def _softmax(x):
    shifted = x - np.max(x, axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=-1, keepdims=True)


def split_raw_output(raw, m: int):
    """Slices of the raw output vector: e, pi logits, mu, sigma logs, rho raw."""
    e_hat = raw[..., 0]
    pi_hat = raw[..., 1 : 1 + m]
    mu = np.stack([raw[..., 1 + m : 1 + 2 * m], raw[..., 1 + 2 * m : 1 + 3 * m]], axis=-1)
    sigma_hat = np.stack(
        [raw[..., 1 + 3 * m : 1 + 4 * m], raw[..., 1 + 4 * m : 1 + 5 * m]], axis=-1
    )
    rho_hat = raw[..., 1 + 5 * m : 1 + 6 * m]
    return e_hat, pi_hat, mu, sigma_hat, rho_hat


def mdn_params(raw_output: np.ndarray) -> MixtureParams:
    """Transform a raw 1+6M output vector into valid mixture parameters."""
    m = (raw_output.shape[-1] - 1) // 6
    if raw_output.shape[-1] != 1 + 6 * m:
        raise ValueError(f"raw output length {raw_output.shape[-1]} is not 1+6M")
    e_hat, pi_hat, mu, sigma_hat, rho_hat = split_raw_output(raw_output, m)
    e = float(np.clip(_sigmoid(e_hat), PROB_EPS, 1.0 - PROB_EPS))
    pi = _softmax(pi_hat)
    sigma = np.exp(np.clip(sigma_hat, -EXP_CLAMP, EXP_CLAMP))
    rho = np.clip(np.tanh(rho_hat), -RHO_MAX, RHO_MAX)
    return MixtureParams(e=e, pi=pi, mu=mu, sigma=sigma, rho=rho)


def mdn_nll(params: MixtureParams, target: PenStep) -> float:
    """Negative log density of one pen step under the mixture.

    The mixture log density is clamped below at log(1e-300).
    """
    xn = (target.dx - params.mu[:, 0]) / params.sigma[:, 0]
    yn = (target.dy - params.mu[:, 1]) / params.sigma[:, 1]
    one_m_rho2 = 1.0 - params.rho**2
    z = xn**2 + yn**2 - 2.0 * params.rho * xn * yn
    log_comp = (
        -math.log(2.0 * math.pi)
        - np.log(params.sigma[:, 0])
        - np.log(params.sigma[:, 1])
        - 0.5 * np.log(one_m_rho2)
        - 0.5 * z / one_m_rho2
    )
    stacked = np.log(params.pi) + log_comp
    top = np.max(stacked)
    log_mix = top + math.log(np.sum(np.exp(stacked - top)))
    log_mix = max(log_mix, LOG_DENSITY_FLOOR)
    log_bern = target.pen_up * math.log(params.e) + (1.0 - target.pen_up) * math.log(
        1.0 - params.e
    )
    return float(-(log_mix + log_bern))
