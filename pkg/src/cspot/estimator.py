"""scikit-learn style front end: ``fit`` indexes pages, ``predict`` spots queries."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.ndimage import maximum_filter
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .integral import IntegralStack, build_integrals
from .maps import PageMaps
from .metrics import evaluate
from .proposal import HeightMap, SpotConfig, build_height_map
from .scoring import ctc_log_probs, spot
from .validation import check_pages, check_query

__all__ = ["KeywordSpotter", "PageIndex", "index_page"]


@dataclass(frozen=True, eq=False)
class PageIndex:
    """Query-independent precomputation for one page."""

    page: PageMaps
    stack: IntegralStack
    hmap: HeightMap
    dilated: np.ndarray = field(repr=False)
    logp: np.ndarray = field(repr=False)

    def spot(self, query, cfg):
        first = int(query.labels[0])
        return spot(self.page, self.stack, self.hmap, query, cfg,
                    dilated_first=self.dilated[:, :, first], logp=self.logp)


def index_page(page, dilation=3):
    """Build the query-independent :class:`PageIndex` of ``page``."""
    stack = build_integrals(page)
    hmap = build_height_map(stack)
    if dilation > 1:
        dilated = maximum_filter(page.prob, size=(dilation, dilation, 1),
                                 mode="constant", cval=0.0)
    else:
        dilated = page.prob
    return PageIndex(page, stack, hmap, dilated, ctc_log_probs(page.prob))


class KeywordSpotter(BaseEstimator):
    """Segmentation-free query-by-string keyword spotter.

    Parameters mirror :class:`~cspot.proposal.SpotConfig` one-to-one, plus
    ``n_jobs`` for page-level thread parallelism.

    Examples
    --------
    >>> from cspot.synth import SynthSpec, generate
    >>> pages = [p.maps for p in generate(SynthSpec(pages=2))]
    >>> spotter = KeywordSpotter().fit(pages)
    >>> hits = spotter.spot("the")
    """

    def __init__(self, p_thres=0.05, r_thres=0.5, dilation=3, levels=1,
                 descriptor="pcount", ctc="two_way", nms_iou=0.2, top_k=30,
                 end_overestimate=0.3, count_tolerance=0.15, center_frac=0.5,
                 sigma_frac=0.3, fold_case=True, n_jobs=None):
        self.p_thres = p_thres
        self.r_thres = r_thres
        self.dilation = dilation
        self.levels = levels
        self.descriptor = descriptor
        self.ctc = ctc
        self.nms_iou = nms_iou
        self.top_k = top_k
        self.end_overestimate = end_overestimate
        self.count_tolerance = count_tolerance
        self.center_frac = center_frac
        self.sigma_frac = sigma_frac
        self.fold_case = fold_case
        self.n_jobs = n_jobs

    @classmethod
    def from_config(cls, cfg, **kwargs):
        return cls(**cfg.to_dict(), **kwargs)

    @property
    def config(self):
        names = [f.name for f in fields(SpotConfig)]
        return SpotConfig(**{n: getattr(self, n) for n in names})

    def map_pages(self, fn, items):
        """Apply ``fn`` to ``items`` on ``n_jobs`` threads, preserving order."""
        n_jobs = self.n_jobs or 1
        if n_jobs == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, items))

    def fit(self, X, y=None):
        """Index every page of ``X`` (PageMaps objects or ``.cpmap`` paths)."""
        cfg = self.config
        pages = check_pages(X)
        self.alphabet_ = pages[0].alphabet
        self.indexes_ = self.map_pages(lambda p: index_page(p, cfg.dilation), pages)
        self.page_ids_ = [p.page_id for p in pages]
        self.fitted_dilation_ = cfg.dilation
        return self

    def _check_fitted(self, cfg):
        check_is_fitted(self, "indexes_")
        if cfg.dilation != self.fitted_dilation_:
            raise ValueError("dilation changed after fit; refit the spotter")

    def spot_pages(self, query):
        """Per-page detections (grid coordinates), in page order."""
        cfg = self.config
        self._check_fitted(cfg)
        q = check_query(query, self.alphabet_, cfg.fold_case)
        return self.map_pages(lambda idx: idx.spot(q, cfg), self.indexes_)

    def spot(self, query):
        """All detections of ``query`` across pages, best first (grid coordinates)."""
        dets = [d for page_dets in self.spot_pages(query) for d in page_dets]
        dets.sort(key=lambda d: (-d.score, d.page_id, d.box.as_tuple()))
        return dets

    def predict(self, queries):
        """List of ranked detection lists, one per query."""
        if isinstance(queries, str):
            queries = [queries]
        return [self.spot(q) for q in queries]

    def score(self, queries, gts, overlap="iow", threshold=0.25):
        """MAP of ``queries`` against pixel-space ground truth ``gts``."""
        if isinstance(queries, str):
            queries = [queries]
        downscale = {idx.page.page_id: idx.page.downscale for idx in self.indexes_}
        texts = [check_query(q, self.alphabet_, self.fold_case).normalized for q in queries]
        all_dets = {}
        for text, dets in zip(texts, self.predict(texts)):
            all_dets[text] = [d.to_pixels(downscale[d.page_id]) for d in dets]
        return evaluate(all_dets, gts, texts, overlap, threshold).map_value
