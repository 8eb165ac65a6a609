"""
Dataset file format.

One ImpressionPage per line, seven tab-separated fields:

    page_id  user_id  f1,f2  item:cat:seller  short_seq  long_seq  exposures

Sequences are ``item:cat:seller`` entries joined by ``;``, exposures add a
fourth ``:label`` part. Empty sequences (and an empty profile) serialize as
``-``. All ids are base-10 nonnegative integers.

Scoring records drop page_id and carry a target instead of exposures:

    user_id  f1,f2  trigger  short_seq  long_seq  target  [exposures]

The trailing exposures field is accepted and ignored.
"""

import logging
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from ..errors import DatasetError, PageValidationError, RecordParseError
from ..models.records import (
    BehaviorSequence,
    Exposure,
    ImpressionPage,
    ItemFeatures,
    ScoringRequest,
    UserProfile,
)

logger = logging.getLogger(__name__)

EMPTY = "-"
PAGE_FIELDS = ("page_id", "user_id", "profile_fields", "trigger", "short_seq", "long_seq", "exposures")
SCORE_FIELDS = ("user_id", "profile_fields", "trigger", "short_seq", "long_seq", "target")
ITEM_PARTS = ("item_id", "category_id", "seller_id")
# every target on a dataset page needs at least one context item
MIN_EXPOSURES = 2


# ==============================================================================
# FORMATTING
# ==============================================================================

def format_item(item: ItemFeatures) -> str:
    return f"{item.item_id}:{item.category_id}:{item.seller_id}"


def _format_items(items: Sequence[ItemFeatures]) -> str:
    return ";".join(format_item(i) for i in items) if items else EMPTY


def format_page(page: ImpressionPage) -> str:
    """Serialize a page as one line (no trailing newline)."""
    profile = ",".join(str(f) for f in page.user.profile_fields) or EMPTY
    exposures = ";".join(f"{format_item(e.item)}:{e.click_label}" for e in page.exposures)
    return "\t".join([
        str(page.page_id),
        str(page.user.user_id),
        profile,
        format_item(page.trigger),
        _format_items(page.sequences.short),
        _format_items(page.sequences.long),
        exposures,
    ])


def write_dataset(pages: Iterable[ImpressionPage], path: Union[str, Path]) -> Path:
    """Write pages one per line, UTF-8, each line newline-terminated.

    Raises:
        DatasetError: On I/O failure
    """
    path = Path(path)
    count = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for page in pages:
                f.write(format_page(page))
                f.write("\n")
                count += 1
    except OSError as e:
        raise DatasetError(f"cannot write dataset {path}: {e}")
    logger.info(f"Wrote {count} pages to {path}")
    return path


# ==============================================================================
# PARSING
# ==============================================================================

def _parse_int(token: str, line: int, field: str) -> int:
    if not token.isdigit() or not token.isascii():
        raise RecordParseError(line, field, f"expected a nonnegative integer, got '{token}'")
    return int(token)


def _parse_item(token: str, line: int, field: str) -> ItemFeatures:
    parts = token.split(":")
    if len(parts) != 3:
        raise RecordParseError(line, field, f"expected item:category:seller, got '{token}'")
    return ItemFeatures(*(_parse_int(p, line, name) for p, name in zip(parts, ITEM_PARTS)))


def _parse_items(token: str, line: int, field: str) -> Tuple[ItemFeatures, ...]:
    if token == EMPTY:
        return ()
    return tuple(_parse_item(t, line, field) for t in token.split(";"))


def _parse_profile(token: str, line: int) -> Tuple[int, ...]:
    if token == EMPTY:
        return ()
    return tuple(_parse_int(t, line, "profile_fields") for t in token.split(","))


def _parse_exposures(token: str, line: int) -> Tuple[Exposure, ...]:
    if token == EMPTY or not token:
        return ()
    exposures = []
    for entry in token.split(";"):
        head, sep, label = entry.rpartition(":")
        if not sep:
            raise RecordParseError(line, "exposures", f"expected item:category:seller:label, got '{entry}'")
        item = _parse_item(head, line, "exposures")
        exposures.append(Exposure(item, _parse_int(label, line, "click_label")))
    return tuple(exposures)


def _split_fields(text: str, line: int, names: Sequence[str], optional: int = 0) -> List[str]:
    fields = text.rstrip("\r\n").split("\t")
    if not len(names) <= len(fields) <= len(names) + optional:
        raise RecordParseError(
            line, "record", f"expected {len(names)} tab-separated fields, found {len(fields)}"
        )
    return fields


def parse_page(
    text: str,
    line: int = 1,
    profile_fields: Optional[int] = None,
    min_exposures: int = MIN_EXPOSURES,
) -> ImpressionPage:
    """Parse one dataset line into a validated ImpressionPage.

    Args:
        text: The line (trailing newline allowed)
        line: 1-based line number used in error messages
        profile_fields: Required number of profile fields, if known
        min_exposures: Fewest exposures a dataset page may have

    Raises:
        RecordParseError: Malformed field (message names line and field)
        PageValidationError: Well-formed record violating a page invariant
    """
    fields = _split_fields(text, line, PAGE_FIELDS)
    profile = _parse_profile(fields[2], line)
    if profile_fields is not None and len(profile) != profile_fields:
        raise RecordParseError(
            line, "profile_fields", f"expected {profile_fields} values, got {len(profile)}"
        )
    try:
        page = ImpressionPage(
            page_id=_parse_int(fields[0], line, "page_id"),
            user=UserProfile(_parse_int(fields[1], line, "user_id"), profile),
            trigger=_parse_item(fields[3], line, "trigger"),
            exposures=_parse_exposures(fields[6], line),
            sequences=BehaviorSequence(
                short=_parse_items(fields[4], line, "short_seq"),
                long=_parse_items(fields[5], line, "long_seq"),
            ),
        )
    except PageValidationError as e:
        if e.line is not None:
            raise
        raise PageValidationError(str(e), line=line) from None
    if len(page.exposures) < min_exposures:
        raise PageValidationError(
            f"page {page.page_id} has {len(page.exposures)} exposure(s), at least "
            f"{min_exposures} required so every target has context",
            line=line,
        )
    return page


def parse_dataset(path: Union[str, Path], profile_fields: Optional[int] = None) -> List[ImpressionPage]:
    """Parse a dataset file; blank lines are skipped.

    Raises:
        DatasetError: If the file is missing or unreadable
        RecordParseError: On the first malformed or undecodable line
        PageValidationError: On the first invalid page
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset not found: {path}")
    pages = []
    try:
        with open(path, "rb") as f:
            for number, raw in enumerate(f, start=1):
                try:
                    text = raw.decode("utf-8")
                except UnicodeDecodeError as e:
                    message = f"invalid UTF-8 at byte {e.start}"
                    raise RecordParseError(number, "record", message) from None
                if not text.strip():
                    continue
                pages.append(parse_page(text, number, profile_fields))
    except OSError as e:
        raise DatasetError(f"cannot read dataset {path}: {e}")
    logger.info(f"Parsed {len(pages)} pages from {path}")
    return pages


def parse_score_record(text: str, line: int = 1) -> ScoringRequest:
    """Parse a scoring record; a trailing exposures field is ignored unread."""
    fields = _split_fields(text, line, SCORE_FIELDS, optional=1)
    return ScoringRequest(
        user=UserProfile(_parse_int(fields[0], line, "user_id"), _parse_profile(fields[1], line)),
        trigger=_parse_item(fields[2], line, "trigger"),
        sequences=BehaviorSequence(
            short=_parse_items(fields[3], line, "short_seq"),
            long=_parse_items(fields[4], line, "long_seq"),
        ),
        target=_parse_item(fields[5], line, "target"),
    )


def format_score_record(request: ScoringRequest, exposures: Sequence[Exposure] = ()) -> str:
    profile = ",".join(str(f) for f in request.user.profile_fields) or EMPTY
    fields = [
        str(request.user.user_id),
        profile,
        format_item(request.trigger),
        _format_items(request.sequences.short),
        _format_items(request.sequences.long),
        format_item(request.target),
    ]
    if exposures:
        fields.append(";".join(f"{format_item(e.item)}:{e.click_label}" for e in exposures))
    return "\t".join(fields)


# ==============================================================================
# SPLITS
# ==============================================================================

def split_pages(
    pages: Sequence[ImpressionPage], test_fraction: float
) -> Tuple[List[ImpressionPage], List[ImpressionPage]]:
    """Temporal split: each user's last pages (by page_id) go to the test side.

    A user with a single page stays entirely on the training side.
    """
    if not 0 < test_fraction < 1:
        raise DatasetError(f"test_fraction must be in (0, 1), got {test_fraction}")
    by_user: Dict[int, List[ImpressionPage]] = defaultdict(list)
    for page in pages:
        by_user[page.user.user_id].append(page)
    test_ids: set = set()
    for user_pages in by_user.values():
        if len(user_pages) < 2:
            continue
        n_test = min(len(user_pages) - 1, max(1, math.floor(len(user_pages) * test_fraction + 0.5)))
        ordered = sorted(user_pages, key=lambda p: p.page_id)
        test_ids.update(id(p) for p in ordered[-n_test:])
    train = [p for p in pages if id(p) not in test_ids]
    test = [p for p in pages if id(p) in test_ids]
    logger.info(f"Split {len(pages)} pages into {len(train)} train / {len(test)} test")
    return train, test
