"""Deterministic synthetic pages with exact ground truth.

Glyphs are uniform-mass blocks: every cell of a ``h x w`` glyph carries scale
``1 / (h * w)``, so the scale mass of each character is exactly one.  Glyph
cells put ``1 - u`` of their probability on the true character and spread
``u`` uniformly over the other non-blank characters, with ``u`` drawn per
cell from ``[0, noise)``.  Background cells are pure blank with zero scale.

Glyphs of a word touch each other except between identical consecutive
letters, which are always split by at least one blank column (an alignment
cannot emit a doubled letter without a blank in between).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .exceptions import GridTooLargeError, InvalidSpecError, LayoutOverflowError
from .maps import Alphabet, Box, PageMaps, write_page_maps
from .metrics import GtWord, write_ground_truth
from .proposal import MASS_EPS, SpotConfig

__all__ = [
    "DEFAULT_LEXICON",
    "ORACLE_MAX_GRID",
    "SynthPage",
    "SynthSpec",
    "WordPlacement",
    "generate",
    "naive_spot_oracle",
    "place_lines",
    "render_page",
    "write_corpus",
]

DEFAULT_LEXICON = (
    "and", "the", "for", "with", "from", "that", "this", "they", "were", "have",
    "been", "which", "their", "would", "there", "about", "could", "other", "into",
    "more", "only", "some", "time", "then", "them", "over", "such", "made", "after",
    "first", "also", "most", "down", "must", "well", "very", "upon", "said", "each",
    "house", "world", "water", "light", "night", "place", "right", "small", "great",
    "young", "point",
)

ORACLE_MAX_GRID = (32, 48)


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    pages: int = 4
    height_cells: int = 96
    width_cells: int = 192
    lines_per_page: tuple = (6, 8)
    words_per_line: tuple = (2, 4)
    lexicon: tuple = DEFAULT_LEXICON
    char_width_cells: tuple = (4, 5)
    char_height_cells: tuple = (4, 5)
    noise: float = 0.0
    spacing: tuple = (4, 7)
    line_gap: tuple = (3, 5)
    char_gap: tuple = (0, 0)
    margin: int = 2
    distractor_fraction: float = 0.0
    downscale: int = 8
    chars: str = "abcdefghijklmnopqrstuvwxyz"

    def __post_init__(self):
        for name in ("lines_per_page", "words_per_line", "char_width_cells",
                     "char_height_cells", "spacing", "line_gap", "char_gap"):
            value = tuple(int(v) for v in getattr(self, name))
            if len(value) != 2 or value[0] > value[1] or value[0] < 0:
                raise InvalidSpecError(f"{name} must be a non-empty range [lo, hi], got {value}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "lexicon", tuple(self.lexicon))
        problems = []
        if self.pages < 0:
            problems.append("pages must be >= 0")
        if not 0.0 <= self.noise < 1.0:
            problems.append(f"noise={self.noise} not in [0, 1)")
        if not 0.0 <= self.distractor_fraction <= 1.0:
            problems.append(f"distractor_fraction={self.distractor_fraction} not in [0, 1]")
        if self.char_width_cells[0] < 1 or self.char_height_cells[0] < 1:
            problems.append("glyph sizes must be >= 1 cell")
        if self.words_per_line[0] < 1 or self.lines_per_page[0] < 1:
            problems.append("lines_per_page and words_per_line must start at >= 1")
        if not self.lexicon:
            problems.append("lexicon is empty")
        bad = sorted({ch for w in self.lexicon for ch in w if ch not in self.chars})
        if bad:
            problems.append(f"lexicon uses characters outside chars: {bad}")
        if self.downscale < 1:
            problems.append("downscale must be >= 1")
        if problems:
            raise InvalidSpecError("invalid SynthSpec: " + "; ".join(problems))

    @property
    def alphabet(self):
        return Alphabet.from_chars(self.chars)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidSpecError(f"unknown SynthSpec fields: {unknown}")
        return cls(**data)


@dataclass(frozen=True)
class WordPlacement:
    """Grid placement of one word; ``gaps`` holds the blank columns between glyphs."""

    text: str
    row: int
    col: int
    char_h: int
    char_w: int
    gaps: tuple = ()

    @property
    def width(self):
        return len(self.text) * self.char_w + sum(self.gaps)

    @property
    def box(self):
        return Box(self.row, self.col, self.row + self.char_h, self.col + self.width)

    def glyph_boxes(self):
        col = self.col
        for i, ch in enumerate(self.text):
            yield ch, Box(self.row, col, self.row + self.char_h, col + self.char_w)
            col += self.char_w + (self.gaps[i] if i < len(self.gaps) else 0)


@dataclass(frozen=True, eq=False)
class SynthPage:
    maps: PageMaps
    gts: list = field(default_factory=list)
    placements: list = field(default_factory=list, repr=False)


def render_page(page_id, placements, height, width, alphabet, noise=0.0, rng=None,
                downscale=8):
    """Rasterize word placements into a :class:`SynthPage`."""
    rng = rng if rng is not None else np.random.default_rng(0)
    n_channels = alphabet.size
    blank = alphabet.blank_index
    prob = np.zeros((height, width, n_channels), dtype=np.float64)
    prob[:, :, blank] = 1.0
    scale = np.zeros((height, width), dtype=np.float64)
    others = n_channels - 2
    gts = []
    for pl in placements:
        if not pl.box.within(height, width):
            raise LayoutOverflowError(page_id, f"word {pl.text!r} at {pl.box.as_tuple()} "
                                               f"leaves the {height}x{width} grid")
        for ch, gb in pl.glyph_boxes():
            k = alphabet.index(ch)
            rows = slice(gb.row_start, gb.row_end)
            cols = slice(gb.col_start, gb.col_end)
            if noise > 0:
                u = rng.uniform(0.0, noise, size=(gb.height, gb.width))
            else:
                u = np.zeros((gb.height, gb.width))
            cell = np.zeros((gb.height, gb.width, n_channels))
            if others > 0:
                cell[:] = (u / others)[..., None]
                cell[:, :, blank] = 0.0
                cell[:, :, k] = 1.0 - u
            else:
                cell[:, :, k] = 1.0
            prob[rows, cols] = cell
            scale[rows, cols] = 1.0 / gb.area
        gts.append(GtWord(page_id, pl.text, pl.box.scaled(downscale)))
    maps = PageMaps(page_id, prob, scale, alphabet, downscale)
    return SynthPage(maps, gts, list(placements))


def _gaps(text, sizes):
    return tuple(max(g, 1) if a == b else g for g, a, b in zip(sizes, text, text[1:]))


def place_lines(lines, char_h=4, char_w=4, char_gap=0, spacing=5, line_gap=4,
                margin=2):
    """Fixed-size layout helper: one list of words per text line."""
    placements = []
    row = margin
    for words in lines:
        col = margin
        for text in words:
            gaps = _gaps(text, (char_gap,) * (len(text) - 1))
            pl = WordPlacement(text, row, col, char_h, char_w, gaps)
            placements.append(pl)
            col += pl.width + spacing
        row += char_h + line_gap
    return placements


def _randint(rng, bounds):
    return int(rng.integers(bounds[0], bounds[1] + 1))


def _permutation_of(rng, word):
    if len(set(word)) < 2:
        return None
    for _ in range(20):
        perm = "".join(rng.permutation(list(word)))
        if perm != word:
            return perm
    return word[1:] + word[0]


def _page_words(rng, spec):
    lines = [[spec.lexicon[int(rng.integers(len(spec.lexicon)))]
              for _ in range(_randint(rng, spec.words_per_line))]
             for _ in range(_randint(rng, spec.lines_per_page))]
    if spec.distractor_fraction > 0 and rng.random() < spec.distractor_fraction:
        candidates = [w for w in spec.lexicon if len(set(w)) >= 2]
        if candidates:
            word = candidates[int(rng.integers(len(candidates)))]
            line = lines[int(rng.integers(len(lines)))]
            if len(line) < 2:
                line.append(word)
            i, j = rng.choice(len(line), size=2, replace=False)
            line[int(i)] = word
            line[int(j)] = _permutation_of(rng, word)
    return lines


def _layout(rng, spec, page_index, lines):
    h, w = spec.height_cells, spec.width_cells
    placements = []
    row = spec.margin
    for words in lines:
        col = spec.margin
        line_h = 0
        for text in words:
            ch = _randint(rng, spec.char_height_cells)
            cw = _randint(rng, spec.char_width_cells)
            gaps = _gaps(text, [_randint(rng, spec.char_gap) for _ in range(len(text) - 1)])
            pl = WordPlacement(text, row, col, ch, cw, gaps)
            if col + pl.width > w - spec.margin:
                raise LayoutOverflowError(
                    page_index, f"line at row {row} needs {col + pl.width + spec.margin} "
                                f"columns, page has {w}")
            placements.append(pl)
            line_h = max(line_h, ch)
            col += pl.width + _randint(rng, spec.spacing)
        if row + line_h > h - spec.margin:
            raise LayoutOverflowError(
                page_index, f"{len(lines)} lines need more than the {h} available rows")
        row += line_h + _randint(rng, spec.line_gap)
    return placements


def generate(spec):
    """Generate ``spec.pages`` synthetic pages.

    Page ``i`` draws from its own generator seeded with ``(seed, i)``, so
    pages are reproducible individually and in any order.
    """
    alphabet = spec.alphabet
    pages = []
    for i in range(spec.pages):
        rng = np.random.default_rng([spec.seed, i])
        lines = _page_words(rng, spec)
        placements = _layout(rng, spec, i, lines)
        pages.append(render_page(f"page{i:04d}", placements, spec.height_cells,
                                 spec.width_cells, alphabet, spec.noise, rng,
                                 spec.downscale))
    return pages


def write_corpus(pages, outdir):
    """Write one ``.cpmap`` per page plus a combined ``gt.json``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    gts = []
    for page in pages:
        write_page_maps(page.maps, outdir / f"{page.maps.page_id}.cpmap")
        gts.extend(page.gts)
    write_ground_truth(gts, outdir / "gt.json")
    return outdir


def naive_spot_oracle(page, query, cfg=None):
    """Brute-force reference for the proposal stage on tiny pages.

    Every box anchored at every cell is checked with direct array sums (no
    integral images, no binary search).  A box qualifies when its start cell
    is near the first query character, its height is the smallest square
    side holding unit scale mass, its width is the smallest reaching the
    query's count, and its mass is centred.  Returns ``(box, distance)``
    pairs where ``distance`` is the L1 gap between the box's non-blank count
    histogram and the query histogram.
    """
    cfg = cfg or SpotConfig()
    maps = page.maps if isinstance(page, SynthPage) else page
    h, w = maps.shape
    if h > ORACLE_MAX_GRID[0] or w > ORACLE_MAX_GRID[1]:
        raise GridTooLargeError(f"oracle grid limited to {ORACLE_MAX_GRID}, got {(h, w)}")
    scale = maps.scale.astype(np.float64)
    fs = maps.prob.astype(np.float64) * scale[..., None]
    first = maps.prob[:, :, int(query.labels[0])].astype(np.float64)
    rad = cfg.dilation // 2
    cap = max(1, min(h, w) // 2)
    target = query.total_count - cfg.count_tolerance
    blank = maps.alphabet.blank_index

    out = []
    for r in range(h):
        for c in range(w):
            near = first[max(r - rad, 0):r + rad + 1, max(c - rad, 0):c + rad + 1].max()
            if near < cfg.p_thres:
                continue
            side = 0
            for s in range(1, min(cap, h - r, w - c) + 1):
                if scale[r:r + s, c:c + s].sum() >= 1.0 - MASS_EPS:
                    side = s
                    break
            if side == 0:
                continue
            width = 0
            for x in range(1, w - c + 1):
                if scale[r:r + side, c:c + x].sum() >= target - MASS_EPS:
                    width = x
                    break
            if width == 0:
                continue
            total = scale[r:r + side, c:c + width].sum()
            trim = int(side * (1.0 - cfg.center_frac) / 2.0)
            band = scale[r + trim:r + side - trim, c:c + width].sum()
            if total <= 0 or band / total < cfg.r_thres:
                continue
            hist = fs[r:r + side, c:c + width].sum(axis=(0, 1))
            hist[blank] = 0.0
            out.append((Box(r, c, r + side, c + width),
                        float(np.abs(hist - query.count_hist).sum())))
    return out
