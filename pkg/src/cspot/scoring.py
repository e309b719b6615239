"""Proposal ranking: descriptor similarity, then CTC re-scoring with suppression."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.ndimage import maximum_filter1d
from scipy.special import ndtr

from .integral import count_histogram, count_histograms
from .maps import Box, Detection, Stage
from .proposal import SpotConfig, dilate, propose_array

__all__ = [
    "PyramidDescriptor",
    "box_descriptors",
    "cosine_count_score",
    "cosine_scores",
    "best_completion",
    "ctc_completion_log",
    "ctc_end_states_log",
    "ctc_forced_score",
    "ctc_log_probs",
    "descriptor_length",
    "min_ctc_steps",
    "nms",
    "nms_indices",
    "phoc_descriptor",
    "pyramid_descriptor_box",
    "pyramid_descriptor_query",
    "spot",
]

NEG_INF = -np.inf


@dataclass(frozen=True, eq=False)
class PyramidDescriptor:
    """Level-major concatenation of per-segment count histograms.

    Level ``k`` contributes ``k`` histograms of length C, so ``values`` has
    ``l(l+1)C/2`` entries; the first C entries are the plain histogram.
    """

    levels: int
    values: np.ndarray = field(repr=False)

    def level(self, k):
        """Return the ``(k, C)`` block of level ``k`` (1-based)."""
        c = self.values.shape[0] * 2 // (self.levels * (self.levels + 1))
        start = (k - 1) * k // 2 * c
        return self.values[start:start + k * c].reshape(k, c)


def descriptor_length(levels, n_channels):
    return levels * (levels + 1) * n_channels // 2


def _cosine(a, b):
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def cosine_scores(query_vec, box_vecs):
    """Cosine similarity of one descriptor against each row of ``box_vecs``."""
    qn = np.linalg.norm(query_vec)
    bn = np.linalg.norm(box_vecs, axis=1)
    denom = qn * bn
    dots = box_vecs @ query_vec
    out = np.zeros(box_vecs.shape[0])
    np.divide(dots, denom, out=out, where=denom > 0)
    return out


def cosine_count_score(stack, box, query):
    """Cosine between the box's count histogram (blank dropped) and the query's."""
    hist = np.array(count_histogram(stack, box))
    hist[stack.blank_index] = 0.0
    return _cosine(hist, query.count_hist)


def pyramid_descriptor_query(query, levels, sigma_frac=0.3):
    """Pyramidal count descriptor of the query string.

    Character ``i`` of an ``n``-character query sits at ``(i + 0.5) / n`` on
    the unit interval.  At level ``k`` its unit mass is split over the ``k``
    equal segments by a Gaussian of standard deviation ``sigma_frac / n``,
    truncated to ``[0, 1]`` and renormalized.
    """
    n = len(query)
    n_channels = query.count_hist.shape[0]
    centers = (np.arange(n) + 0.5) / n
    sigma = sigma_frac / n
    lo_cdf = ndtr((0.0 - centers) / sigma)
    total = ndtr((1.0 - centers) / sigma) - lo_cdf
    blocks = []
    for k in range(1, levels + 1):
        edges = np.linspace(0.0, 1.0, k + 1)
        cdf = ndtr((edges[None, :] - centers[:, None]) / sigma)
        mass = np.diff(cdf, axis=1) / total[:, None]
        block = np.zeros((k, n_channels))
        np.add.at(block.T, query.labels, mass)
        blocks.append(block.ravel())
    return PyramidDescriptor(levels, np.concatenate(blocks))


def _slice_boxes(boxes, k, j):
    width = boxes[:, 3] - boxes[:, 1]
    base = width // k
    out = boxes.copy()
    out[:, 1] = boxes[:, 1] + j * base
    if j < k - 1:
        out[:, 3] = boxes[:, 1] + (j + 1) * base
    return out


def box_descriptors(channels, boxes, levels, blank_index):
    """``(n, l(l+1)C/2)`` pyramid descriptors for an ``(n, 4)`` box array.

    Level ``k`` splits each box into ``k`` column slices of ``width // k``
    columns, the last slice taking the remainder.
    """
    parts = []
    for k in range(1, levels + 1):
        for j in range(k):
            hist = count_histograms(channels, _slice_boxes(boxes, k, j))
            hist[:, blank_index] = 0.0
            parts.append(hist)
    return np.concatenate(parts, axis=1)


def pyramid_descriptor_box(stack, box, levels):
    arr = np.array([box.as_tuple()], dtype=np.int64)
    values = box_descriptors(stack.channels, arr, levels, stack.blank_index)[0]
    return PyramidDescriptor(levels, values)


def phoc_descriptor(desc):
    """Clip every bin at 1 (binary-occurrence flavour of the count descriptor)."""
    return PyramidDescriptor(desc.levels, np.minimum(desc.values, 1.0))


# --- CTC -------------------------------------------------------------------


@njit(cache=True, nogil=True, inline="always")
def _lse(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True, nogil=True)
def _ctc_kernel(logp, labels, blank, out):
    steps = logp.shape[0]
    n_states = 2 * labels.shape[0] + 1
    alpha = np.full(n_states, NEG_INF)
    nxt = np.empty(n_states)
    alpha[0] = logp[0, blank]
    alpha[1] = logp[0, labels[0]]
    out[0, 0] = alpha[n_states - 2]
    out[0, 1] = alpha[n_states - 1]
    for t in range(1, steps):
        for s in range(n_states):
            a = alpha[s]
            if s >= 1:
                a = _lse(a, alpha[s - 1])
            if s % 2 == 1:
                lab = labels[s // 2]
                if s >= 3 and lab != labels[s // 2 - 1]:
                    a = _lse(a, alpha[s - 2])
            else:
                lab = blank
            nxt[s] = a + logp[t, lab]
        alpha, nxt = nxt, alpha
        out[t, 0] = alpha[n_states - 2]
        out[t, 1] = alpha[n_states - 1]


def ctc_end_states_log(logp, labels, blank):
    """Forward log-probabilities of the two final CTC states at every step.

    ``logp`` is a ``(T, C)`` array of per-step log-probabilities.  Column 0
    of the ``(T, 2)`` result is the log-probability that steps ``0..t``
    collapse to ``labels`` with step ``t`` emitting the last label; column 1
    is the same with step ``t`` emitting a trailing blank.  Impossible
    prefixes are ``-inf``.
    """
    logp = np.ascontiguousarray(logp, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    out = np.full((logp.shape[0], 2), NEG_INF)
    if logp.shape[0] and labels.shape[0]:
        _ctc_kernel(logp, labels, int(blank), out)
    return out


def ctc_completion_log(logp, labels, blank):
    """Log-probability that steps ``0..t`` collapse exactly to ``labels``, per ``t``."""
    return np.logaddexp.reduce(ctc_end_states_log(logp, labels, blank), axis=1)


def min_ctc_steps(labels):
    """Shortest alignment length: one step per label plus a blank per repeat."""
    labels = np.asarray(labels)
    return int(labels.shape[0] + np.count_nonzero(labels[1:] == labels[:-1]))


def ctc_log_probs(prob, rows=None):
    """Vertically max-pool (kernel 3) ``prob``, renormalize per cell, take logs.

    ``rows`` restricts the output to the given row indices.
    """
    prob = np.asarray(prob)
    if rows is None:
        pooled = maximum_filter1d(prob.astype(np.float64), size=3, axis=0,
                                  mode="constant", cval=0.0)
    else:
        rows = np.asarray(rows, dtype=np.int64)
        above = np.maximum(rows - 1, 0)
        below = np.minimum(rows + 1, prob.shape[0] - 1)
        pooled = np.maximum(np.maximum(prob[above], prob[rows]), prob[below]).astype(np.float64)
    total = pooled.sum(axis=-1, keepdims=True)
    np.divide(pooled, total, out=pooled, where=total > 0)
    with np.errstate(divide="ignore"):
        return np.log(pooled)


def best_completion(states):
    """Pick the alignment end from :func:`ctc_end_states_log` output.

    A query counts as complete at step ``t`` once a blank follows its last
    label (the blank step itself is excluded), or at the final step in
    either end state.  Returns ``(steps_used, log_prob)`` for the most
    probable end, earliest on ties.
    """
    steps = states.shape[0]
    t = int(np.argmax(states[:, 1]))
    best_steps, best = t, float(states[t, 1])
    if states[steps - 1, 0] > best:
        best_steps, best = steps, float(states[steps - 1, 0])
    return best_steps, best


def ctc_forced_score(page, box, query, alphabet, two_way=True, cfg=None, logp=None):
    """Forced-alignment score of ``query`` along the centre row of ``box``.

    The step sequence runs over the box columns extended to the right by
    ``cfg.end_overestimate`` of the box width.  The best completion step
    (see :func:`best_completion`) gives the corrected right edge; with
    ``two_way`` the reversed sequence and reversed query correct the left
    edge too.  Returns ``(score, box)``
    where ``score = exp(log p / |query|)``; degenerate boxes score 0 and are
    returned unchanged.

    ``logp`` may hold the page-wide output of :func:`ctc_log_probs` (or any
    mapping from row index to that row's ``(W, C)`` log-probabilities).
    """
    cfg = cfg or SpotConfig()
    labels = query.labels
    n = labels.shape[0]
    row = (box.row_start + box.row_end - 1) // 2
    extend = int(math.ceil(cfg.end_overestimate * box.width))
    col_end = min(page.width_r, box.col_end + extend)
    if logp is None:
        seq = ctc_log_probs(page.prob, rows=[row])[0, box.col_start:col_end]
    else:
        seq = logp[row][box.col_start:col_end]
    if seq.shape[0] < min_ctc_steps(labels):
        return 0.0, box
    used, log_score = best_completion(ctc_end_states_log(seq, labels, alphabet.blank_index))
    if log_score == NEG_INF:
        return 0.0, box
    right = box.col_start + used
    left = box.col_start
    if two_way:
        rev = ctc_end_states_log(seq[:used][::-1], labels[::-1], alphabet.blank_index)
        used_rev, log_score = best_completion(rev)
        left = right - used_rev
    score = math.exp(log_score / n)
    return score, Box(box.row_start, left, box.row_end, right)


# --- NMS -------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _nms_kernel(boxes, thr, max_keep, keep):
    n = boxes.shape[0]
    suppressed = np.zeros(n, dtype=np.bool_)
    k = 0
    for i in range(n):
        if suppressed[i]:
            continue
        keep[k] = i
        k += 1
        if k >= max_keep:
            break
        r0, c0, r1, c1 = boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3]
        area_i = (r1 - r0) * (c1 - c0)
        for j in range(i + 1, n):
            if suppressed[j]:
                continue
            ih = min(r1, boxes[j, 2]) - max(r0, boxes[j, 0])
            iw = min(c1, boxes[j, 3]) - max(c0, boxes[j, 1])
            if ih <= 0 or iw <= 0:
                continue
            inter = ih * iw
            union = area_i + (boxes[j, 2] - boxes[j, 0]) * (boxes[j, 3] - boxes[j, 1]) - inter
            if inter > thr * union:
                suppressed[j] = True
    return k


def rank_order(boxes, scores):
    """Descending score, ties by smaller ``(row_start, col_start, row_end, col_end)``."""
    return np.lexsort((boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0], -scores))


def nms_indices(boxes, scores, iou_thres, max_keep=None):
    """Greedy NMS over an ``(n, 4)`` box array; returns kept indices in rank order.

    Stops once ``max_keep`` boxes are kept, which is equivalent to running
    full NMS and truncating.
    """
    boxes = np.asarray(boxes, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if boxes.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    order = rank_order(boxes, scores)
    keep = np.empty(boxes.shape[0], dtype=np.int64)
    limit = boxes.shape[0] if max_keep is None else int(max_keep)
    k = _nms_kernel(np.ascontiguousarray(boxes[order]), float(iou_thres), limit, keep)
    return order[keep[:k]]


def nms(dets, iou_thres):
    """Greedy non-maximum suppression over :class:`Detection` objects.

    Boxes are compared within a page only.
    """
    out = []
    by_page = {}
    for det in dets:
        by_page.setdefault(det.page_id, []).append(det)
    for page_dets in by_page.values():
        boxes = np.array([d.box.as_tuple() for d in page_dets], dtype=np.int64)
        scores = np.array([d.score for d in page_dets])
        out.extend(page_dets[i] for i in nms_indices(boxes, scores, iou_thres))
    out.sort(key=lambda d: (-d.score, d.page_id, d.box.as_tuple()))
    return out


# --- pipeline --------------------------------------------------------------


def first_step_stage(cfg):
    return Stage.COUNTING if cfg.levels == 1 else Stage.PYRAMID


def spot(page, stack, hmap, query, cfg, dilated_first=None, logp=None):
    """Full spotting pipeline for one (page, query) pair.

    Proposals are scored with the pyramid descriptor, thinned by NMS to the
    top ``cfg.top_k``, optionally re-scored (and re-bounded) by CTC, and
    thinned again.  Returns detections in rank order.
    """
    if dilated_first is None:
        dilated_first = dilate(page.prob[:, :, int(query.labels[0])], cfg.dilation)
    boxes = propose_array(stack, hmap, query, cfg, dilated_first)
    if boxes.shape[0] == 0:
        return []

    qdesc = pyramid_descriptor_query(query, cfg.levels, cfg.sigma_frac).values
    bdesc = box_descriptors(stack.channels, boxes, cfg.levels, stack.blank_index)
    if cfg.descriptor == "phoc":
        qdesc = np.minimum(qdesc, 1.0)
        np.minimum(bdesc, 1.0, out=bdesc)
    scores = cosine_scores(qdesc, bdesc)
    keep = nms_indices(boxes, scores, cfg.nms_iou, cfg.top_k)
    boxes, scores = boxes[keep], scores[keep]

    if cfg.ctc == "off":
        stage = first_step_stage(cfg)
    else:
        two_way = cfg.ctc == "two_way"
        stage = Stage.CTC_TWO_WAY if two_way else Stage.CTC_ONE_WAY
        if logp is None:
            rows = np.unique((boxes[:, 0] + boxes[:, 2] - 1) // 2)
            logp = dict(zip(rows.tolist(), ctc_log_probs(page.prob, rows=rows)))
        rescored = np.empty_like(boxes)
        new_scores = np.empty(boxes.shape[0])
        for i, row in enumerate(boxes.tolist()):
            s, b = ctc_forced_score(page, Box(*row), query, page.alphabet, two_way, cfg, logp)
            new_scores[i] = s
            rescored[i] = b.as_tuple()
        keep = nms_indices(rescored, new_scores, cfg.nms_iou)
        boxes, scores = rescored[keep], new_scores[keep]

    return [Detection(Box(*b), float(s), page.page_id, stage)
            for b, s in zip(boxes.tolist(), scores.tolist())]
