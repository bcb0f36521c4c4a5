"""Synthetic multi-style stroke corpus.

Each alphabet character gets a fixed polyline glyph template drawn from a
glyph seed; a style renders templates through its slant shear, global
scale and speed-dependent resampling, plus additive point jitter.  Texts
are random words shared across styles, so two styles differ only in how
the same words are rendered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..datamodel import ConditionLabel, TrialBundle, TrialRecord
from .net import DEFAULT_ALPHABET

GLYPH_POINTS = 5
ADVANCE_WIDTH = 1.2
CORPUS_STREAM = 17
JITTER_STREAM = 23


@dataclass(frozen=True)
class StyleParams:
    slant: float = 0.0
    scale: float = 1.0
    speed: float = 1.0
    jitter: float = 0.0
    base_glyph_seed: int = 0


def make_styles(count: int, base_glyph_seed: int = 0, jitter: float = 0.02):
    """A spread of visibly distinct styles sharing one glyph family."""
    presets = [
        StyleParams(slant=-0.5, scale=0.7, speed=1.0, jitter=jitter, base_glyph_seed=base_glyph_seed),
        StyleParams(slant=0.5, scale=1.4, speed=1.0, jitter=jitter, base_glyph_seed=base_glyph_seed),
        StyleParams(slant=0.0, scale=1.0, speed=0.6, jitter=jitter, base_glyph_seed=base_glyph_seed),
        StyleParams(slant=0.25, scale=0.9, speed=1.5, jitter=jitter, base_glyph_seed=base_glyph_seed),
        StyleParams(slant=-0.25, scale=1.2, speed=0.8, jitter=jitter, base_glyph_seed=base_glyph_seed),
    ]
    if count <= len(presets):
        return presets[:count]
    extra = []
    rng = np.random.default_rng(np.random.SeedSequence(base_glyph_seed, spawn_key=(99,)))
    for _ in range(count - len(presets)):
        extra.append(
            StyleParams(
                slant=float(rng.uniform(-0.6, 0.6)),
                scale=float(rng.uniform(0.6, 1.6)),
                speed=float(rng.uniform(0.6, 1.6)),
                jitter=jitter,
                base_glyph_seed=base_glyph_seed,
            )
        )
    return presets + extra


def glyph_template(char: str, alphabet: str, base_glyph_seed: int):
    """Polyline template (points in the unit box) and per-point pen-up flags.

    The space character is a straight pen-up travel; letters are seeded
    random polylines with the pen lifting after the last point.
    """
    if char == " ":
        points = np.array([[0.3, 0.0], [0.9, 0.0]])
        pen_up = np.ones(2)
        return points, pen_up
    index = alphabet.index(char)
    rng = np.random.default_rng(np.random.SeedSequence(base_glyph_seed, spawn_key=(index,)))
    points = rng.uniform(0.0, 1.0, size=(GLYPH_POINTS, 2))
    pen_up = np.zeros(GLYPH_POINTS)
    pen_up[-1] = 1.0
    return points, pen_up


def _resample(points, pen_up, speed):
    """Parameter-uniform resampling: higher speed means fewer points."""
    n_in = points.shape[0]
    if n_in < 2:
        return points, pen_up
    n_out = max(2, int(round((n_in - 1) / speed)) + 1)
    s_in = np.linspace(0.0, 1.0, n_in)
    s_out = np.linspace(0.0, 1.0, n_out)
    resampled = np.column_stack(
        [np.interp(s_out, s_in, points[:, 0]), np.interp(s_out, s_in, points[:, 1])]
    )
    flags = np.zeros(n_out)
    flags[-1] = pen_up[-1]
    if np.all(pen_up == 1.0):
        flags[:] = 1.0
    return resampled, flags


def render_word(text: str, style: StyleParams, alphabet: str, jitter_rng) -> np.ndarray:
    """Absolute glyph path -> stroke offsets (T x 3) for one word."""
    abs_points = []
    pen_flags = []
    origin_x = 0.0
    for ch in text:
        template, pen_up = glyph_template(ch, alphabet, style.base_glyph_seed)
        pts, flags = _resample(template, pen_up, style.speed)
        if style.jitter > 0.0:
            pts = pts + jitter_rng.normal(0.0, style.jitter, size=pts.shape)
        sheared_x = pts[:, 0] + style.slant * pts[:, 1]
        xs = style.scale * (origin_x + sheared_x)
        ys = style.scale * pts[:, 1]
        abs_points.append(np.column_stack([xs, ys]))
        pen_flags.append(flags)
        origin_x += ADVANCE_WIDTH
    path = np.vstack(abs_points)
    flags = np.concatenate(pen_flags)
    offsets = np.diff(np.vstack([[0.0, 0.0], path]), axis=0)
    return np.column_stack([offsets, flags])


def gen_corpus(styles, chars_per_word: int, words: int, seed, alphabet: str = DEFAULT_ALPHABET):
    """Render `words` random words in every style.

    Word texts depend only on (seed, word index), so all styles write the
    same words; jitter noise is drawn per (style, word).  Returns a list
    of (strokes T x 3, text, style_id) with style_id indexing `styles`.
    """
    if len(styles) < 2:
        raise ValueError("need at least 2 styles for style-contrast experiments")
    letters = alphabet.replace(" ", "")
    word_texts = []
    for w in range(words):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(CORPUS_STREAM, w)))
        word_texts.append("".join(rng.choice(list(letters), size=chars_per_word)))
    corpus = []
    for style_id, style in enumerate(styles):
        for w, text in enumerate(word_texts):
            jitter_rng = np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(JITTER_STREAM, style_id, w))
            )
            strokes = render_word(text, style, alphabet, jitter_rng)
            corpus.append((strokes, text, style_id))
    return corpus


def corpus_to_bundle(corpus, styles, alphabet: str = DEFAULT_ALPHABET) -> TrialBundle:
    """Persist a corpus in the trial-bundle format (strokes as T x 3 matrices).

    Bundle style ids are 1-based (0 is reserved for the unprimed label).
    """
    texts = []
    text_index = {}
    trials = []
    for item_id, (strokes, text, style_id) in enumerate(corpus):
        if text not in text_index:
            text_index[text] = len(texts)
            texts.append(text)
        trials.append(
            TrialRecord(
                id=f"word_{item_id:04d}",
                condition=ConditionLabel(style_id + 1, text_index[text], item_id),
                layer_index=0,
                activations=strokes,
            )
        )
    style_descriptors = [
        {
            "slant": s.slant,
            "scale": s.scale,
            "speed": s.speed,
            "jitter": s.jitter,
            "base_glyph_seed": int(s.base_glyph_seed),
        }
        for s in styles
    ]
    return TrialBundle(texts=texts, styles=style_descriptors, trials=trials)


def bundle_to_corpus(bundle: TrialBundle):
    """Inverse of corpus_to_bundle: (strokes, text, style_id) triples."""
    corpus = []
    for trial in bundle.trials:
        corpus.append(
            (trial.activations, bundle.texts[trial.condition.text_id], trial.condition.style_id - 1)
        )
    return corpus


def styles_from_descriptors(descriptors):
    return [
        StyleParams(
            slant=float(d["slant"]),
            scale=float(d["scale"]),
            speed=float(d["speed"]),
            jitter=float(d["jitter"]),
            base_glyph_seed=int(d["base_glyph_seed"]),
        )
        for d in descriptors
    ]
