"""Lexical URL features: delimiter tokens, depth-weighted token weights, heuristic flags."""
from __future__ import annotations

import csv
import ipaddress
import json
import re
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import astuple, dataclass, fields
from fractions import Fraction

import numpy as np

from .corpus import split_host
from .errors import EmptyCorpus, SchemaMismatch, UnknownToken

TOKEN_DELIMITERS = ".-_/?=&@:%"
_SPLIT_RE = re.compile("[" + re.escape(TOKEN_DELIMITERS) + "]+")


def _split_tokens(part: str) -> list[str]:
    return [t for t in _SPLIT_RE.split(part) if t]


def tokenize(normalized_url: str) -> list[tuple[str, int]]:
    """Split a normalized URL into ``(token, step)`` pairs.

    Host tokens sit at step 1; the k-th path segment sits at step k + 1.  A
    query string stays at the step of the segment it hangs off.
    """
    host, rest = split_host(normalized_url)
    out = [(t, 1) for t in _split_tokens(host)]
    rest = rest.split("#", 1)[0]
    path, _, query = rest.partition("?")
    segments = path.split("/")[1:] if path else []
    step = 1
    for k, segment in enumerate(segments, start=1):
        step = 1 + k
        out.extend((t, step) for t in _split_tokens(segment))
    if query:
        out.extend((t, step) for t in _split_tokens(query))
    return out


@dataclass(frozen=True)
class TokenTable:
    """Per-token occurrence counts by step, fitted on a training corpus."""

    counts: Mapping[str, Mapping[int, int]]
    n: int
    max_step: int

    def __contains__(self, token: str) -> bool:
        return token in self.counts

    def __len__(self) -> int:
        return len(self.counts)

    def exact_weight(self, token: str) -> Fraction:
        try:
            by_step = self.counts[token]
        except KeyError:
            raise UnknownToken(token) from None
        depth_sum = sum((Fraction(c, x * x) for x, c in by_step.items()), Fraction(0))
        return Fraction(len(token), self.n) * depth_sum

    def weights(self) -> dict[str, float]:
        """All token weights; cached because the table is immutable."""
        cached = self.__dict__.get("_weights")
        if cached is None:
            cached = {t: float(self.exact_weight(t)) for t in self.counts}
            object.__setattr__(self, "_weights", cached)
        return cached


def build_token_table(corpus: Sequence[str]) -> TokenTable:
    if not corpus:
        raise EmptyCorpus("token table needs at least one URL")
    pair_counts: Counter[tuple[str, int]] = Counter()
    for url in corpus:
        pair_counts.update(tokenize(url))
    counts: dict[str, dict[int, int]] = {}
    for (token, step), c in sorted(pair_counts.items()):
        counts.setdefault(token, {})[step] = c
    max_step = max((s for _, s in pair_counts), default=1)
    return TokenTable(counts, len(corpus), max_step)


def token_weight(table: TokenTable, token: str) -> float:
    """Weight of a token: (len / n) * sum over steps x of N_x / x**2.

    Raises UnknownToken for tokens missing from the table.
    """
    if token not in table:
        raise UnknownToken(token)
    return table.weights()[token]


@dataclass(frozen=True)
class UrlfVector:
    has_ip: bool
    has_at: bool
    double_slash_redirect: bool
    dash_in_domain: bool
    subdomain_dot_count: int
    https_scheme: bool
    url_length: int
    token_weight_sum: float
    token_weight_max: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


URLF_FIELDS: tuple[str, ...] = tuple(f.name for f in fields(UrlfVector))


def host_name(normalized: str) -> str:
    """Host without userinfo or port."""
    host, _ = split_host(normalized)
    host = host.rpartition("@")[2]
    if host.startswith("["):
        end = host.find("]")
        return host[: end + 1] if end != -1 else host
    return host.partition(":")[0]


def is_ip_host(host: str) -> bool:
    if host.startswith("[") and host.endswith("]"):
        try:
            ipaddress.IPv6Address(host[1:-1])
            return True
        except ValueError:
            return False
    parts = host.split(".")
    if len(parts) != 4 or not all(p.isdigit() for p in parts):
        return False
    try:
        ipaddress.IPv4Address(host)
    except ValueError:
        return False
    return True


def extract_urlf(raw_url: str, normalized: str, table: TokenTable) -> UrlfVector:
    host = host_name(normalized)
    weights = table.weights()
    token_w = [weights.get(t, 0.0) for t in dict.fromkeys(t for t, _ in tokenize(normalized))]
    return UrlfVector(
        has_ip=is_ip_host(host),
        has_at="@" in normalized,
        double_slash_redirect="//" in normalized,
        dash_in_domain="-" in host,
        subdomain_dot_count=max(host.count(".") - 1, 0),
        https_scheme=raw_url.strip().lower().startswith("https://"),
        url_length=len(normalized),
        token_weight_sum=float(sum(token_w)),
        token_weight_max=max(token_w, default=0.0),
    )


def urlf_matrix(raw_urls: Sequence[str], normalized: Sequence[str], table: TokenTable) -> np.ndarray:
    rows = [extract_urlf(r, u, table).as_array() for r, u in zip(raw_urls, normalized)]
    if not rows:
        return np.zeros((0, len(URLF_FIELDS)))
    return np.vstack(rows)


@dataclass(frozen=True)
class MinMaxScaler:
    """Column-wise [0, 1] scaling with bounds frozen from the training rows.

    Values outside the training range are clipped; constant columns map to 0.
    """

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> MinMaxScaler:
        X = np.asarray(X, dtype=np.float64)
        return cls(X.min(axis=0), X.max(axis=0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (X - self.lo) / safe, 0.0)
        return np.clip(out, 0.0, 1.0)


def dump_features(path, names: Iterable[str], vectors: Iterable[UrlfVector]) -> None:
    """Feature dump: CSV with header ``url`` plus every UrlfVector field."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("url",) + URLF_FIELDS)
        for name, vec in zip(names, vectors):
            writer.writerow([name] + [_fmt_cell(v) for v in astuple(vec)])


def _fmt_cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


TOKEN_TABLE_VERSION = "token-table/1"


def save_token_table(table: TokenTable, path, stamp: str = "") -> None:
    """Text format: header lines, then ``token<TAB>step:count,...`` (token JSON-quoted)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {TOKEN_TABLE_VERSION}\n# n={table.n}\tmax_step={table.max_step}\tstamp={stamp}\n")
        for token, by_step in table.counts.items():
            cells = ",".join(f"{s}:{c}" for s, c in sorted(by_step.items()))
            fh.write(f"{json.dumps(token)}\t{cells}\n")


def load_token_table(path) -> tuple[TokenTable, str]:
    with open(path, encoding="utf-8") as fh:
        version = fh.readline().strip()
        if version != f"# {TOKEN_TABLE_VERSION}":
            raise SchemaMismatch(f"{path}: unsupported token table header {version!r}")
        meta = _parse_header(fh.readline())
        counts = {}
        for line in fh:
            token, cells = line.rstrip("\n").split("\t")
            counts[json.loads(token)] = {
                int(s): int(c) for s, c in (cell.split(":") for cell in cells.split(","))
            }
    return TokenTable(counts, int(meta["n"]), int(meta["max_step"])), meta.get("stamp", "")


def _parse_header(line: str) -> dict[str, str]:
    return dict(kv.split("=", 1) for kv in line.lstrip("# ").rstrip("\n").split("\t"))
