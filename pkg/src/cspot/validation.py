"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import os
from pathlib import Path

from .exceptions import MissingCorpusError
from .maps import PageMaps, Query, load_page_maps, normalize_query


def check_pages(pages):
    """Return a list of :class:`PageMaps`, loading any path-like entries.

    All pages must share one alphabet.
    """
    if isinstance(pages, (PageMaps, str, os.PathLike)):
        pages = [pages]
    out = []
    for p in pages:
        if isinstance(p, PageMaps):
            out.append(p)
        elif isinstance(p, (str, os.PathLike)):
            out.append(load_page_maps(p))
        else:
            raise TypeError(f"expected PageMaps or a .cpmap path, got {type(p).__name__}")
    if not out:
        raise ValueError("at least one page is required")
    ids = [p.page_id for p in out]
    if len(set(ids)) != len(ids):
        raise ValueError("page ids must be unique")
    alphabet = out[0].alphabet
    for p in out[1:]:
        if p.alphabet != alphabet:
            raise ValueError(f"page {p.page_id!r} uses a different alphabet than {ids[0]!r}")
    return out


def check_query(query, alphabet, fold_case=True):
    if isinstance(query, Query):
        unknown = [ch for ch in query.normalized if ch not in alphabet]
        if unknown or query.count_hist.shape[0] != alphabet.size:
            raise ValueError(f"query {query.raw!r} does not match the fitted alphabet")
        return query
    return normalize_query(str(query), alphabet, fold_case)


def corpus_files(corpus):
    """Sorted ``.cpmap`` paths of a corpus directory."""
    corpus = Path(corpus)
    if not corpus.is_dir():
        raise MissingCorpusError(f"corpus directory {corpus} does not exist")
    files = sorted(corpus.glob("*.cpmap"))
    if not files:
        raise MissingCorpusError(f"no .cpmap files in {corpus}")
    return files
