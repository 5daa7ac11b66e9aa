"""URL ingestion, normalization, deduplication and seeded train/test splits."""
from __future__ import annotations

import math
import threading
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    DegenerateSplit,
    EmptyAfterNormalization,
    LabelDomainError,
    ParseError,
)

SCHEME_PREFIXES = ("http://", "https://")
WWW_PREFIX = "www."
HOST_TERMINATORS = "/?#"

DEFAULT_LABEL_ALIASES: Mapping[str, int] = {
    "0": 0,
    "1": 1,
    "benign": 0,
    "legitimate": 0,
    "phishing": 1,
    "malicious": 1,
}


def split_host(url: str) -> tuple[str, str]:
    """Split a scheme-less URL into (host, rest); rest keeps its leading delimiter."""
    for i, ch in enumerate(url):
        if ch in HOST_TERMINATORS:
            return url[:i], url[i:]
    return url, ""


def normalize_url(raw: str) -> str:
    """Strip scheme and ``www.`` prefixes and lowercase the host.

    >>> normalize_url("http://WWW.PayPal.com/Login")
    'paypal.com/Login'
    """
    url = raw.strip()
    changed = True
    while changed:
        changed = False
        low = url.lower()
        for prefix in SCHEME_PREFIXES:
            if low.startswith(prefix):
                url = url[len(prefix):]
                changed = True
                break
        if changed:
            continue
        if low.startswith(WWW_PREFIX):
            url = url[len(WWW_PREFIX):]
            changed = True
    if not url:
        raise EmptyAfterNormalization(f"nothing left after stripping prefixes from {raw!r}")
    host, rest = split_host(url)
    return host.lower() + rest


@dataclass(frozen=True)
class UrlRecord:
    raw: str
    normalized: str
    label: int
    source_id: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise LabelDomainError(f"label must be 0 or 1, got {self.label!r}")


class AccessAudit:
    """Records which dataset partitions were read during which pipeline stage."""

    def __init__(self):
        self._lock = threading.Lock()
        self.stage = "setup"
        self.events: list[tuple[str, str]] = []

    def set_stage(self, stage: str) -> None:
        self.stage = stage

    def touch(self, partition: str) -> None:
        with self._lock:
            event = (self.stage, partition)
            if not self.events or self.events[-1] != event:
                self.events.append(event)

    def violations(self, guarded: str, open_stages: Iterable[str]) -> list[tuple[str, str]]:
        allowed = set(open_stages)
        return [e for e in self.events if e[1] == guarded and e[0] not in allowed]


@dataclass(frozen=True)
class Dataset:
    records: tuple[UrlRecord, ...]
    partition: str = ""
    audit: AccessAudit | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def class_counts(self) -> tuple[int, int]:
        n_pos = sum(r.label for r in self.records)
        return len(self.records) - n_pos, n_pos

    def _touch(self) -> None:
        if self.audit is not None and self.partition:
            self.audit.touch(self.partition)

    def raw_urls(self) -> list[str]:
        self._touch()
        return [r.raw for r in self.records]

    def urls(self) -> list[str]:
        self._touch()
        return [r.normalized for r in self.records]

    def labels(self) -> np.ndarray:
        self._touch()
        return np.array([r.label for r in self.records], dtype=np.int64)

    def watched(self, partition: str, audit: AccessAudit | None) -> Dataset:
        return replace(self, partition=partition, audit=audit)


def dedupe(records: Iterable[UrlRecord]) -> list[UrlRecord]:
    """Drop records whose normalized URL was already seen; first one wins."""
    seen: set[str] = set()
    out = []
    for rec in records:
        if rec.normalized in seen:
            continue
        seen.add(rec.normalized)
        out.append(rec)
    return out


@dataclass(frozen=True)
class IngestFormat:
    delimiter: str = ","
    label_aliases: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_LABEL_ALIASES))
    comment: str = "#"


def parse_lines(lines: Iterable[str], fmt: IngestFormat = IngestFormat(),
                source_id: str = "") -> list[UrlRecord]:
    records = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith(fmt.comment):
            continue
        label_text, sep, url = line.partition(fmt.delimiter)
        if not sep:
            raise ParseError(f"expected 'label{fmt.delimiter}url', got {line!r}", lineno)
        key = label_text.strip().lower()
        if key not in fmt.label_aliases:
            raise LabelDomainError(f"label {label_text.strip()!r} not in {{0,1}} or aliases", lineno)
        try:
            normalized = normalize_url(url)
        except EmptyAfterNormalization as exc:
            raise ParseError(str(exc), lineno) from exc
        records.append(UrlRecord(url.strip(), normalized, fmt.label_aliases[key], source_id))
    return records


def load_dataset(path: str | Path, fmt: IngestFormat = IngestFormat(),
                 source_id: str | None = None) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        records = parse_lines(fh, fmt, source_id if source_id is not None else path.stem)
    return Dataset(tuple(dedupe(records)))


def merge(datasets: Iterable[Dataset]) -> Dataset:
    records: list[UrlRecord] = []
    for ds in datasets:
        records.extend(ds.records)
    return Dataset(tuple(dedupe(records)))


def write_dataset(ds: Dataset, path: str | Path, delimiter: str = ",") -> None:
    """Write the canonical ``label,url`` form using normalized URLs."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in ds.records:
            fh.write(f"{rec.label}{delimiter}{rec.normalized}\n")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.70
    seed: int = 42
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DegenerateSplit(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(ds: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset]:
    """Seeded train/test partition; both sides keep the input record order."""
    n = len(ds)
    if n == 0:
        raise DegenerateSplit("cannot split an empty dataset")
    n_train = _round_half_up(spec.train_fraction * n)
    if n_train == 0 or n_train == n:
        raise DegenerateSplit(f"train size {n_train} of {n} leaves one side empty")
    rng = np.random.default_rng(spec.seed)
    labels = np.array([r.label for r in ds.records])

    if not spec.stratified:
        train_idx = rng.permutation(n)[:n_train]
    else:
        classes = [np.flatnonzero(labels == c) for c in (0, 1)]
        if any(len(c) == 0 for c in classes):
            raise DegenerateSplit("stratified split needs both classes present")
        ideal = [spec.train_fraction * len(c) for c in classes]
        quota = [int(math.floor(q)) for q in ideal]
        # hand the rounding remainder to the class with the larger fractional part
        order = sorted((0, 1), key=lambda c: (-(ideal[c] - quota[c]), c))
        deficit = n_train - sum(quota)
        for c in order:
            if deficit <= 0:
                break
            if quota[c] < len(classes[c]):
                quota[c] += 1
                deficit -= 1
        train_idx = np.concatenate(
            [rng.permutation(idx)[:q] for idx, q in zip(classes, quota)]
        )

    in_train = np.zeros(n, dtype=bool)
    in_train[train_idx] = True
    train = tuple(r for r, t in zip(ds.records, in_train) if t)
    test = tuple(r for r, t in zip(ds.records, in_train) if not t)
    return Dataset(train), Dataset(test)
