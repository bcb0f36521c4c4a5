from .net import (
    AttentionState,
    LstmState,
    MixtureParams,
    PenStep,
    SynthConfig,
    SynthNet,
    attention_step,
    init_net,
    lstm_step,
    mdn_nll,
    mdn_params,
)
from .corpus import StyleParams, gen_corpus, glyph_template, make_styles, render_word
from .sample import SynthesisResult, synthesize
from .train import train
