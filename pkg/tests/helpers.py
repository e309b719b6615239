"""Builders for small hand-made and random pages used across the tests."""

import numpy as np

from cspot.maps import Alphabet, PageMaps, normalize_query
from cspot.synth import place_lines, render_page

ABC = Alphabet.from_chars("abc")
LOWER = Alphabet.default()


def blank_prob(h, w, alphabet=ABC):
    prob = np.zeros((h, w, alphabet.size))
    prob[:, :, alphabet.blank_index] = 1.0
    return prob


def make_page(scale, prob=None, alphabet=ABC, page_id="p", downscale=8):
    scale = np.asarray(scale, dtype=np.float64)
    if prob is None:
        prob = blank_prob(*scale.shape, alphabet)
    return PageMaps(page_id, prob, scale, alphabet, downscale)


def random_prob(rng, h, w, n_channels):
    return rng.dirichlet(np.ones(n_channels), size=(h, w))


def dyadic_scale(rng, h, w, density=0.3, denom=64):
    """Sparse scale values k/denom: every partial sum is exact in float64."""
    k = rng.integers(1, denom // 4 + 1, size=(h, w))
    return np.where(rng.random((h, w)) < density, k / denom, 0.0)


def random_page(rng, h, w, alphabet=ABC, density=0.3, page_id="p"):
    prob = random_prob(rng, h, w, alphabet.size).astype(np.float32)
    return PageMaps(page_id, prob, dyadic_scale(rng, h, w, density), alphabet)


def text_page(lines, height, width, alphabet=LOWER, noise=0.0, seed=0, page_id="p", **layout):
    """Render lines of words with fixed glyph sizes onto a blank page."""
    placements = place_lines(lines, **layout)
    rng = np.random.default_rng(seed)
    return render_page(page_id, placements, height, width, alphabet, noise, rng)


def query(text, alphabet=LOWER):
    return normalize_query(text, alphabet)
