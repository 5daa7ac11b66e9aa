"""Labelled synthetic URL corpora whose class is a known function of lexical traits.

Benign URLs never contain an IP host or an ``@`` and never exceed
``BENIGN_MAX_LEN`` characters.  Every phishing URL has at least one of those
traits, so ``has_ip or has_at or len > 60`` labels the corpus perfectly.
At difficulty 0 every phishing URL has an IP host, so that flag alone separates
the classes.  Raising the difficulty moves phishing URLs onto the other two
traits and lets them borrow benign vocabulary.
"""
from __future__ import annotations

import numpy as np

from .corpus import Dataset, UrlRecord, normalize_url
from .errors import ConfigError

BENIGN_MAX_LEN = 60

_WORDS = (
    "news", "shop", "cloud", "mail", "photo", "music", "garden", "travel", "sport", "code",
    "book", "food", "health", "city", "home", "data", "game", "art", "learn", "market",
    "blue", "green", "river", "stone", "maple", "north", "bright", "solar", "pixel", "urban",
)
_TLDS = ("com", "org", "net", "io", "edu", "co.uk", "de", "info")
_PAGES = ("index.html", "about", "contact", "blog", "products", "faq", "team", "docs", "careers", "")
_LURES = ("login", "verify", "account", "secure", "update", "signin", "banking", "confirm",
          "password", "wallet", "billing", "support")
_BRANDS = ("paypal", "apple", "amazon", "netflix", "chase", "microsoft", "dropbox", "ebay")


def _pick(rng: np.random.Generator, items):
    return items[int(rng.integers(len(items)))]


def _benign(rng: np.random.Generator) -> str:
    scheme = "https://" if rng.random() < 0.8 else "http://"
    www = "www." if rng.random() < 0.6 else ""
    host = _pick(rng, _WORDS) + _pick(rng, _WORDS) + "." + _pick(rng, _TLDS)
    depth = int(rng.integers(0, 3))
    path = "/".join(_pick(rng, _WORDS) for _ in range(depth))
    page = _pick(rng, _PAGES)
    tail = "/".join(p for p in (path, page) if p)
    url = f"{scheme}{www}{host}/{tail}" if tail else f"{scheme}{www}{host}"
    if rng.random() < 0.2:
        url += f"?id={int(rng.integers(1, 10_000))}"
    return url[:BENIGN_MAX_LEN].rstrip("/?=")


def _ip(rng: np.random.Generator) -> str:
    return ".".join(str(int(v)) for v in rng.integers(1, 255, size=4))


def _phish(rng: np.random.Generator, difficulty: float) -> str:
    scheme = "https://" if rng.random() < 0.3 else "http://"
    lure = _pick(rng, _LURES)
    brand = _pick(rng, _BRANDS)
    vocab = _WORDS if rng.random() < difficulty else _LURES
    if rng.random() >= difficulty:
        trait = "ip"
    else:
        trait = "at" if rng.random() < 0.5 else "long"
    if trait == "ip":
        url = f"{scheme}{_ip(rng)}/{brand}/{lure}.php"
        if rng.random() < 0.5:
            url += f"?session={int(rng.integers(10 ** 6, 10 ** 7))}"
        return url
    if trait == "at":
        decoy = _pick(rng, _WORDS) + "." + _pick(rng, _TLDS)
        target = f"{brand}-{_pick(rng, vocab)}.{_pick(rng, _TLDS)}"
        return f"{scheme}{decoy}@{target}/{lure}"
    host = f"{brand}.{_pick(rng, vocab)}-{_pick(rng, vocab)}.{_pick(rng, _TLDS)}"
    url = f"{scheme}{host}/{lure}"
    while len(url) <= BENIGN_MAX_LEN:
        url += f"/{_pick(rng, vocab)}{int(rng.integers(0, 100))}"
    return url


def generate_synthetic(n: int, seed: int, difficulty: float = 0.0, label_noise: float = 0.0,
                       source_id: str = "synthetic") -> Dataset:
    """``n`` distinct URLs, half phishing (the odd one out is benign), in shuffled order."""
    if n < 20:
        raise ConfigError(f"synthetic corpus needs n >= 20, got {n}")
    if not 0.0 <= difficulty <= 1.0 or not 0.0 <= label_noise < 0.5:
        raise ConfigError("difficulty must lie in [0, 1] and label_noise in [0, 0.5)")
    rng = np.random.default_rng(seed)
    labels = np.array([1] * (n // 2) + [0] * (n - n // 2))
    labels = labels[rng.permutation(n)]
    seen: set[str] = set()
    records = []
    for label in labels:
        while True:
            raw = _phish(rng, difficulty) if label else _benign(rng)
            norm = normalize_url(raw)
            if norm not in seen:
                break
        seen.add(norm)
        flipped = int(label) ^ int(rng.random() < label_noise)
        records.append(UrlRecord(raw, norm, flipped, source_id))
    return Dataset(tuple(records))
