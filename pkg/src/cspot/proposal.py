"""Box proposal by binary searches over the scale-map integral.

Every search runs on the integral image of the scale map only, so the
proposal stage is character-agnostic except for the first query character
used to seed start points.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np
from numba import njit
from scipy.ndimage import maximum_filter

from .exceptions import InvalidSpecError
from .maps import Box

__all__ = [
    "HEIGHT_UNREACHABLE",
    "MASS_EPS",
    "HeightMap",
    "SpotConfig",
    "build_height_map",
    "candidate_starts",
    "center_band",
    "centering_filter",
    "dilate",
    "estimate_box",
    "propose",
    "propose_array",
]

HEIGHT_UNREACHABLE = 0
# slack on ">= target" mass comparisons; absorbs cumulative-sum rounding
MASS_EPS = 1e-9

_CTC_MODES = ("off", "one_way", "two_way")
_DESCRIPTORS = ("pcount", "phoc")


@dataclass(frozen=True)
class SpotConfig:
    """Every tunable of the spotting pipeline.

    Defaults follow the selected operating point: ``p_thres=0.05``,
    ``r_thres=0.5``, one-level counting descriptor, two-way CTC re-scoring,
    NMS at IoU 0.2 and the top 30 boxes per page sent to re-scoring.
    """

    p_thres: float = 0.05
    r_thres: float = 0.5
    dilation: int = 3
    levels: int = 1
    descriptor: str = "pcount"
    ctc: str = "two_way"
    nms_iou: float = 0.2
    top_k: int = 30
    end_overestimate: float = 0.3
    count_tolerance: float = 0.15
    center_frac: float = 0.5
    sigma_frac: float = 0.3
    fold_case: bool = True

    def __post_init__(self):
        problems = []
        for name in ("p_thres", "r_thres", "center_frac"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                problems.append(f"{name}={v} not in (0, 1)")
        if not 0.0 <= self.nms_iou <= 1.0:
            problems.append(f"nms_iou={self.nms_iou} not in [0, 1]")
        if self.dilation < 1 or self.dilation % 2 == 0:
            problems.append(f"dilation={self.dilation} must be a positive odd integer")
        if self.levels < 1:
            problems.append(f"levels={self.levels} must be >= 1")
        if self.top_k < 1:
            problems.append(f"top_k={self.top_k} must be >= 1")
        if self.end_overestimate < 0:
            problems.append(f"end_overestimate={self.end_overestimate} must be >= 0")
        if self.count_tolerance < 0:
            problems.append(f"count_tolerance={self.count_tolerance} must be >= 0")
        if self.sigma_frac <= 0:
            problems.append(f"sigma_frac={self.sigma_frac} must be > 0")
        if self.ctc not in _CTC_MODES:
            problems.append(f"ctc={self.ctc!r} not in {_CTC_MODES}")
        if self.descriptor not in _DESCRIPTORS:
            problems.append(f"descriptor={self.descriptor!r} not in {_DESCRIPTORS}")
        if problems:
            raise InvalidSpecError("invalid SpotConfig: " + "; ".join(problems))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidSpecError(f"unknown SpotConfig fields: {unknown}")
        return cls(**data)

    def replace(self, **changes):
        return type(self).from_dict({**self.to_dict(), **changes})


@dataclass(frozen=True, eq=False)
class HeightMap:
    """Per-cell side of the smallest top-left-anchored square holding unit scale mass.

    ``HEIGHT_UNREACHABLE`` (0) marks cells where no square up to ``max_side``
    reaches a full character.
    """

    side: np.ndarray = field(repr=False)
    max_side: int

    @property
    def shape(self):
        return self.side.shape


@njit(cache=True, nogil=True, inline="always")
def _rect(d, r0, c0, r1, c1):
    return d[r1, c1] - d[r0, c1] - d[r1, c0] + d[r0, c0]


@njit(cache=True, nogil=True)
def _height_kernel(d, cap, out):
    h = d.shape[0] - 1
    w = d.shape[1] - 1
    for r in range(h):
        for c in range(w):
            hi = min(cap, h - r, w - c)
            if hi < 1 or _rect(d, r, c, r + hi, c + hi) < 1.0 - MASS_EPS:
                out[r, c] = HEIGHT_UNREACHABLE
                continue
            lo = 1
            while lo < hi:
                mid = (lo + hi) // 2
                if _rect(d, r, c, r + mid, c + mid) >= 1.0 - MASS_EPS:
                    hi = mid
                else:
                    lo = mid + 1
            out[r, c] = lo


@njit(cache=True, nogil=True)
def _smallest_width(d, r0, r1, c0, target):
    """Smallest w with mass of rows [r0, r1) x cols [c0, c0+w) >= target, else 0."""
    hi = d.shape[1] - 1 - c0
    if hi < 1 or _rect(d, r0, c0, r1, c0 + hi) < target - MASS_EPS:
        return 0
    lo = 1
    while lo < hi:
        mid = (lo + hi) // 2
        if _rect(d, r0, c0, r1, c0 + mid) >= target - MASS_EPS:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True, nogil=True)
def _is_centered(d, r0, c0, r1, c1, center_frac, r_thres):
    total = _rect(d, r0, c0, r1, c1)
    if total <= 0.0:
        return False
    trim = int((r1 - r0) * (1.0 - center_frac) / 2.0)
    band = _rect(d, r0 + trim, c0, r1 - trim, c1)
    return band / total >= r_thres


@njit(cache=True, nogil=True)
def _propose_kernel(d, side, starts, target, center_frac, r_thres, out):
    n = 0
    for k in range(starts.shape[0]):
        r = starts[k, 0]
        c = starts[k, 1]
        h = side[r, c]
        if h == HEIGHT_UNREACHABLE:
            continue
        w = _smallest_width(d, r, r + h, c, target)
        if w == 0:
            continue
        if not _is_centered(d, r, c, r + h, c + w, center_frac, r_thres):
            continue
        out[n, 0] = r
        out[n, 1] = c
        out[n, 2] = r + h
        out[n, 3] = c + w
        n += 1
    return n


def build_height_map(stack, max_side=None):
    """Binary-search the unit-count square side at every cell of the page.

    ``max_side`` defaults to ``min(H_r, W_r) // 2`` (at least 1).  Squares
    never leave the page, so cells near the bottom/right margins are capped
    further.
    """
    h, w = stack.shape
    cap = max(1, min(h, w) // 2) if max_side is None else int(max_side)
    side = np.empty((h, w), dtype=np.int32)
    _height_kernel(stack.scale_int.data, cap, side)
    side.setflags(write=False)
    return HeightMap(side, cap)


def dilate(channel, size):
    """Max-pool a 2-D map with a ``size`` x ``size`` kernel (zero padding)."""
    channel = np.asarray(channel)
    if size == 1:
        return channel
    return maximum_filter(channel, size=size, mode="constant", cval=0.0)


def candidate_starts(page, query, cfg, dilated=None):
    """Row-major cells whose dilated first-character probability is >= ``p_thres``.

    ``dilated`` may carry a precomputed dilation of the first-character
    channel.
    """
    if dilated is None:
        dilated = dilate(page.prob[:, :, int(query.labels[0])], cfg.dilation)
    rows, cols = np.nonzero(dilated >= cfg.p_thres)
    return list(zip(rows.tolist(), cols.tolist()))


def estimate_box(stack, hmap, start, query, cfg):
    """Grow a box from ``start`` until it holds the query's character count.

    Returns ``None`` when the start has no height estimate or no width within
    the page reaches ``total_count - count_tolerance``.
    """
    r, c = start
    h, w = stack.shape
    if not (0 <= r < h and 0 <= c < w):
        raise IndexError(f"start {start} outside grid {(h, w)}")
    side = int(hmap.side[r, c])
    if side == HEIGHT_UNREACHABLE:
        return None
    target = query.total_count - cfg.count_tolerance
    width = _smallest_width(stack.scale_int.data, r, r + side, c, target)
    if width == 0:
        return None
    return Box(r, c, r + side, c + width)


def center_band(box, center_frac=0.5):
    """Rows of ``box`` kept by the centering test (middle ``center_frac``)."""
    trim = int(box.height * (1.0 - center_frac) / 2.0)
    return Box(box.row_start + trim, box.col_start, box.row_end - trim, box.col_end)


def centering_filter(stack, box, cfg):
    """True when the middle band of ``box`` carries at least ``r_thres`` of its mass.

    Boxes summing character parts of two neighbouring lines put most of their
    mass near the top and bottom edges and fail this test.
    """
    return bool(_is_centered(stack.scale_int.data, box.row_start, box.col_start,
                             box.row_end, box.col_end, cfg.center_frac, cfg.r_thres))


def propose_array(stack, hmap, query, cfg, dilated_first):
    """Vectorized proposal stage; returns an ``(n, 4)`` int64 array of boxes.

    Rows are ordered by the row-major position of their start cell.  A box
    is anchored at its start, so rows are unique by construction.
    """
    rows, cols = np.nonzero(dilated_first >= cfg.p_thres)
    if rows.size == 0:
        return np.empty((0, 4), dtype=np.int64)
    starts = np.stack([rows, cols], axis=1).astype(np.int64)
    out = np.empty((starts.shape[0], 4), dtype=np.int64)
    n = _propose_kernel(stack.scale_int.data, hmap.side, starts,
                        float(query.total_count - cfg.count_tolerance),
                        float(cfg.center_frac), float(cfg.r_thres), out)
    return out[:n]


def propose(page, stack, hmap, query, cfg, dilated_first=None):
    """Candidate starts -> width search -> centering filter, as ``Box`` objects."""
    if dilated_first is None:
        dilated_first = dilate(page.prob[:, :, int(query.labels[0])], cfg.dilation)
    return [Box(*row) for row in propose_array(stack, hmap, query, cfg, dilated_first).tolist()]
