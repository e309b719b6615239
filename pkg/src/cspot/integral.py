"""Summed-area tables over the scale map and the scaled probability map."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "IntegralImage",
    "IntegralStack",
    "build_integrals",
    "count_histogram",
    "count_histograms",
    "integral_image",
    "rect_sum",
]


def integral_image(values):
    """Cumulative sums of ``values`` padded with a zero top row and left column.

    Accumulation is always float64.  Trailing axes beyond the first two are
    carried along, so a ``(H, W, C)`` input gives ``(H+1, W+1, C)``.
    """
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros((values.shape[0] + 1, values.shape[1] + 1) + values.shape[2:])
    np.cumsum(values, axis=0, out=out[1:, 1:])
    np.cumsum(out[1:, 1:], axis=1, out=out[1:, 1:])
    return out


def _check_box(shape, box):
    if not box.within(shape[0] - 1, shape[1] - 1):
        raise IndexError(f"box {box.as_tuple()} outside grid {(shape[0] - 1, shape[1] - 1)}")


@dataclass(frozen=True, eq=False)
class IntegralImage:
    data: np.ndarray = field(repr=False)

    @classmethod
    def from_values(cls, values):
        data = integral_image(values)
        data.setflags(write=False)
        return cls(data)

    @property
    def shape(self):
        """Grid shape of the source array."""
        return (self.data.shape[0] - 1, self.data.shape[1] - 1)

    def rect_sum(self, box):
        return rect_sum(self, box)


def rect_sum(img, box):
    """O(1) sum of the source array over ``box``."""
    d = img.data
    _check_box(d.shape, box)
    return float(d[box.row_end, box.col_end] - d[box.row_start, box.col_end]
                 - d[box.row_end, box.col_start] + d[box.row_start, box.col_start])


@dataclass(frozen=True, eq=False)
class IntegralStack:
    """Integral of the scale map plus one integral per scaled-probability channel.

    ``channels`` has shape ``(H+1, W+1, C)`` so a rectangle lookup yields the
    whole count histogram in one vectorized step.
    """

    scale_int: IntegralImage
    channels: np.ndarray = field(repr=False)
    page_id: str
    blank_index: int

    @property
    def shape(self):
        return self.scale_int.shape

    @property
    def n_channels(self):
        return self.channels.shape[2]

    def channel_int(self, c):
        return IntegralImage(self.channels[:, :, c])


def build_integrals(page):
    """Build the :class:`IntegralStack` of a :class:`~cspot.maps.PageMaps`."""
    scale = page.scale.astype(np.float64)
    scale_int = IntegralImage.from_values(scale)
    channels = integral_image(page.prob.astype(np.float64) * scale[..., None])
    channels.setflags(write=False)
    return IntegralStack(scale_int, channels, page.page_id, page.alphabet.blank_index)


def count_histogram(stack, box):
    """Length-C vector of expected character counts inside ``box``.

    The blank channel is reported as-is; callers that compare against query
    histograms drop it (see ``stack.blank_index``).
    """
    d = stack.channels
    _check_box(d.shape, box)
    return (d[box.row_end, box.col_end] - d[box.row_start, box.col_end]
            - d[box.row_end, box.col_start] + d[box.row_start, box.col_start])


def count_histograms(channels, boxes):
    """Vectorized histograms for an ``(n, 4)`` integer array of boxes.

    ``boxes`` rows are ``(row_start, col_start, row_end, col_end)``; no bounds
    checking is done.
    """
    r0, c0, r1, c1 = boxes.T
    return channels[r1, c1] - channels[r0, c1] - channels[r1, c0] + channels[r0, c0]
