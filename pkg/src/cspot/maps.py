"""Data model for pages and queries plus the ``.cpmap`` binary format.

A page is described by a character-probability tensor ``prob`` of shape
``(H_r, W_r, C)`` and a scale map ``scale`` of shape ``(H_r, W_r)``, both on
a grid that is ``downscale`` times smaller than the page image.  Summing
``prob * scale[..., None]`` over a word region yields its character counts.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import EmptyQueryError, MapFormatError, UnknownSymbolError

__all__ = [
    "BLANK_SYMBOL",
    "Alphabet",
    "Box",
    "Detection",
    "PageMaps",
    "Query",
    "Stage",
    "decode_page_maps",
    "encode_page_maps",
    "load_page_maps",
    "normalize_query",
    "scaled_prob_at",
    "write_page_maps",
]

MAGIC = b"CPM1"
_HEADER = struct.Struct("<4s5I")
BLANK_SYMBOL = "\x00"
PROB_SUM_TOL = 1e-3


@dataclass(frozen=True)
class Alphabet:
    """Ordered channel symbols; ``blank_index`` names the CTC blank channel."""

    symbols: tuple
    blank_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be unique")
        if any(len(s) != 1 for s in self.symbols):
            raise ValueError("alphabet symbols must be single characters")
        if not 0 <= self.blank_index < len(self.symbols):
            raise ValueError(
                f"blank_index {self.blank_index} outside [0, {len(self.symbols)})"
            )
        object.__setattr__(
            self, "_lookup", {s: i for i, s in enumerate(self.symbols)}
        )

    @classmethod
    def from_chars(cls, chars, blank=BLANK_SYMBOL):
        """Alphabet with ``blank`` at channel 0 followed by ``chars``."""
        return cls((blank, *chars), 0)

    @classmethod
    def default(cls, digits=False):
        chars = "abcdefghijklmnopqrstuvwxyz"
        if digits:
            chars += "0123456789"
        return cls.from_chars(chars)

    def __len__(self):
        return len(self.symbols)

    def index(self, symbol):
        return self._lookup[symbol]

    def __contains__(self, symbol):
        return symbol in self._lookup and self._lookup[symbol] != self.blank_index

    @property
    def size(self):
        return len(self.symbols)


@dataclass(frozen=True, order=True)
class Box:
    """Half-open grid rectangle ``[row_start, row_end) x [col_start, col_end)``."""

    row_start: int
    col_start: int
    row_end: int
    col_end: int

    def __post_init__(self):
        for name in ("row_start", "col_start", "row_end", "col_end"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.row_start >= self.row_end or self.col_start >= self.col_end:
            raise ValueError(f"degenerate box {self.as_tuple()}")

    @classmethod
    def from_xyxy(cls, x0, y0, x1, y1):
        return cls(y0, x0, y1, x1)

    def as_tuple(self):
        return (self.row_start, self.col_start, self.row_end, self.col_end)

    def as_xyxy(self):
        return (self.col_start, self.row_start, self.col_end, self.row_end)

    @property
    def height(self):
        return self.row_end - self.row_start

    @property
    def width(self):
        return self.col_end - self.col_start

    @property
    def area(self):
        return self.height * self.width

    def scaled(self, factor):
        """Multiply every coordinate by ``factor`` (grid -> pixel space)."""
        f = int(factor)
        return Box(self.row_start * f, self.col_start * f,
                   self.row_end * f, self.col_end * f)

    def intersection(self, other):
        h = min(self.row_end, other.row_end) - max(self.row_start, other.row_start)
        w = min(self.col_end, other.col_end) - max(self.col_start, other.col_start)
        return max(h, 0) * max(w, 0)

    def contains(self, other):
        return (self.row_start <= other.row_start and self.col_start <= other.col_start
                and self.row_end >= other.row_end and self.col_end >= other.col_end)

    def within(self, height, width):
        return (0 <= self.row_start and 0 <= self.col_start
                and self.row_end <= height and self.col_end <= width)


class Stage(str, enum.Enum):
    COUNTING = "counting"
    PYRAMID = "pyramid"
    CTC_ONE_WAY = "ctc_one_way"
    CTC_TWO_WAY = "ctc_two_way"


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float
    page_id: str
    stage: Stage = Stage.COUNTING

    def to_pixels(self, downscale):
        return Detection(self.box.scaled(downscale), self.score, self.page_id, self.stage)


@dataclass(frozen=True)
class Query:
    """A normalized text query and its target count histogram."""

    raw: str
    normalized: str
    count_hist: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    @property
    def total_count(self):
        return len(self.normalized)

    def __len__(self):
        return len(self.normalized)


def normalize_query(raw, alphabet, fold_case=True):
    """Map ``raw`` onto ``alphabet`` and tally its character histogram.

    Surrounding whitespace is stripped; with ``fold_case`` the string is
    lower-cased first.  Every remaining character must be a non-blank symbol
    of the alphabet.
    """
    if not raw:
        raise EmptyQueryError("query is empty")
    text = raw.strip()
    if fold_case:
        text = text.lower()
    if not text:
        raise EmptyQueryError(f"query {raw!r} is empty after normalization")
    unknown = sorted({ch for ch in text if ch not in alphabet})
    if unknown:
        raise UnknownSymbolError(
            f"query {raw!r} contains symbols outside the alphabet: {unknown!r}"
        )
    labels = np.array([alphabet.index(ch) for ch in text], dtype=np.int64)
    hist = np.bincount(labels, minlength=alphabet.size).astype(np.float64)
    labels.setflags(write=False)
    hist.setflags(write=False)
    return Query(raw, text, hist, labels)


def _first_bad_cell(mask):
    idx = np.argwhere(mask)
    return tuple(int(i) for i in idx[0]), len(idx)


def validate_maps(prob, scale, alphabet, downscale):
    """Raise ``MapFormatError`` (invariant-violation) on any broken invariant."""
    def fail(msg):
        raise MapFormatError("invariant-violation", msg)

    if prob.ndim != 3:
        fail(f"prob must be 3-D, got shape {prob.shape}")
    if scale.shape != prob.shape[:2]:
        fail(f"scale shape {scale.shape} does not match prob grid {prob.shape[:2]}")
    if prob.shape[2] != alphabet.size:
        fail(f"prob has {prob.shape[2]} channels but alphabet has {alphabet.size}")
    if downscale < 1:
        fail(f"downscale must be >= 1, got {downscale}")
    for name, arr in (("scale", scale), ("prob", prob)):
        bad = ~np.isfinite(arr)
        if bad.any():
            cell, n = _first_bad_cell(bad)
            fail(f"{name} has {n} non-finite values, first at {cell}")
        bad = (arr < 0) | (arr > 1)
        if bad.any():
            cell, n = _first_bad_cell(bad)
            fail(f"{name} value {float(arr[cell]):g} at {cell} outside [0, 1] "
                 f"({n} values affected)")
    sums = prob.sum(axis=2, dtype=np.float64)
    bad = np.abs(sums - 1.0) > PROB_SUM_TOL
    if bad.any():
        cell, n = _first_bad_cell(bad)
        fail(f"prob channels at cell {cell} sum to {float(sums[cell]):.6f} "
             f"({n} cells outside 1 +/- {PROB_SUM_TOL})")


@dataclass(frozen=True, eq=False)
class PageMaps:
    """Character-probability map and scale map of one page.

    Arrays are stored as read-only float32; construction validates every
    invariant listed in :func:`validate_maps`.
    """

    page_id: str
    prob: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)
    alphabet: Alphabet = field(repr=False)
    downscale: int = 8

    def __post_init__(self):
        prob = np.array(self.prob, dtype=np.float32, order="C")
        scale = np.array(self.scale, dtype=np.float32, order="C")
        validate_maps(prob, scale, self.alphabet, int(self.downscale))
        prob.setflags(write=False)
        scale.setflags(write=False)
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "downscale", int(self.downscale))

    @property
    def height_r(self):
        return self.prob.shape[0]

    @property
    def width_r(self):
        return self.prob.shape[1]

    @property
    def n_channels(self):
        return self.prob.shape[2]

    @property
    def shape(self):
        return self.prob.shape[:2]

    def scaled_prob(self):
        """Materialize the full scaled map ``prob * scale`` in float64."""
        return self.prob.astype(np.float64) * self.scale[..., None].astype(np.float64)


def scaled_prob_at(page, cell, channel):
    """Return ``prob[i, j, k] * scale[i, j]`` for a single cell and channel."""
    i, j = cell
    if not (0 <= i < page.height_r and 0 <= j < page.width_r):
        raise IndexError(f"cell {cell} outside grid {page.shape}")
    if not 0 <= channel < page.n_channels:
        raise IndexError(f"channel {channel} outside [0, {page.n_channels})")
    return float(page.prob[i, j, channel]) * float(page.scale[i, j])


def encode_page_maps(page):
    """Serialize ``page`` to the little-endian ``.cpmap`` layout."""
    h, w, c = page.prob.shape
    parts = [
        _HEADER.pack(MAGIC, h, w, c, page.downscale, page.alphabet.blank_index),
        np.array([ord(s) for s in page.alphabet.symbols], dtype="<u4").tobytes(),
        page.scale.astype("<f4").tobytes(),
        page.prob.astype("<f4").tobytes(),
    ]
    return b"".join(parts)


def decode_page_maps(data, page_id):
    if len(data) < 4 or data[:4] != MAGIC:
        raise MapFormatError("bad-magic", f"{page_id}: expected {MAGIC!r}, got {bytes(data[:4])!r}")
    if len(data) < _HEADER.size:
        raise MapFormatError("truncated-payload", f"{page_id}: header needs {_HEADER.size} bytes, got {len(data)}")
    _, h, w, c, downscale, blank = _HEADER.unpack_from(data, 0)
    expected = _HEADER.size + 4 * c + 4 * h * w + 4 * h * w * c
    if len(data) < expected:
        raise MapFormatError(
            "truncated-payload",
            f"{page_id}: {h}x{w}x{c} page needs {expected} bytes, got {len(data)}",
        )
    if len(data) > expected:
        raise MapFormatError(
            "invariant-violation",
            f"{page_id}: {len(data) - expected} trailing bytes after payload",
        )
    off = _HEADER.size
    codes = np.frombuffer(data, dtype="<u4", count=c, offset=off)
    off += 4 * c
    scale = np.frombuffer(data, dtype="<f4", count=h * w, offset=off).reshape(h, w)
    off += 4 * h * w
    prob = np.frombuffer(data, dtype="<f4", count=h * w * c, offset=off).reshape(h, w, c)
    try:
        alphabet = Alphabet(tuple(chr(int(x)) for x in codes), int(blank))
    except ValueError as exc:
        raise MapFormatError("invariant-violation", f"{page_id}: alphabet: {exc}") from None
    return PageMaps(page_id, prob, scale, alphabet, downscale)


def load_page_maps(path, page_id=None):
    """Read a ``.cpmap`` file; ``page_id`` defaults to the file stem."""
    path = Path(path)
    return decode_page_maps(path.read_bytes(), page_id or path.stem)


def write_page_maps(page, path):
    Path(path).write_bytes(encode_page_maps(page))
