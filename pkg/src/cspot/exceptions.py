"""Exception hierarchy shared by every cspot module."""


class CspotError(Exception):
    """Base class for all errors raised by cspot."""

    exit_code = 1


class MapFormatError(CspotError):
    """A .cpmap payload could not be decoded or failed validation.

    ``kind`` is one of ``"bad-magic"``, ``"truncated-payload"`` or
    ``"invariant-violation"``.
    """

    exit_code = 7

    def __init__(self, kind, message):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class UnknownSymbolError(CspotError, ValueError):
    exit_code = 5


class EmptyQueryError(CspotError, ValueError):
    exit_code = 5


class LayoutOverflowError(CspotError):
    """Synthetic words did not fit on the requested page."""

    exit_code = 4

    def __init__(self, page_index, message):
        super().__init__(f"page {page_index}: {message}")
        self.page_index = page_index


class GridTooLargeError(CspotError, ValueError):
    exit_code = 3


class InvalidSpecError(CspotError, ValueError):
    exit_code = 3


class MissingCorpusError(CspotError):
    exit_code = 6


class PageMismatchError(CspotError):
    exit_code = 8


class ResultsFormatError(CspotError, ValueError):
    """A results TSV or JSON input could not be parsed."""

    exit_code = 9
