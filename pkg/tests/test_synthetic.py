from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from antiphishstack.errors import ConfigError
from antiphishstack.synthetic import BENIGN_MAX_LEN, generate_synthetic
from antiphishstack.urlf import host_name, is_ip_host


def has_ip_host(normalized):
    return is_ip_host(host_name(normalized))


def traits(rec):
    return has_ip_host(rec.normalized), "@" in rec.raw, len(rec.raw) > BENIGN_MAX_LEN


def test_balance_2000():
    for seed in range(5):
        benign, phishing = generate_synthetic(2000, seed).class_counts
        assert abs(phishing - 1000) <= 40 and benign + phishing == 2000


def test_difficulty_zero_separable_by_ip():
    ds = generate_synthetic(2000, 3)
    for rec in ds.records:
        assert has_ip_host(rec.normalized) == bool(rec.label)


@settings(max_examples=15)
@given(st.integers(0, 10 ** 6), st.floats(0.0, 1.0))
def test_or_rule_labels_every_record(seed, difficulty):
    ds = generate_synthetic(200, seed, difficulty)
    for rec in ds.records:
        assert any(traits(rec)) == bool(rec.label)


def test_urls_unique_and_seeded():
    a = generate_synthetic(500, 1)
    assert len({r.normalized for r in a.records}) == 500
    assert generate_synthetic(500, 1) == a
    b = generate_synthetic(500, 2)
    assert b != a and type(b.records[0]) is type(a.records[0])


def test_label_noise_flips_some_labels():
    clean = generate_synthetic(1000, 5)
    noisy = generate_synthetic(1000, 5, label_noise=0.2)
    flipped = sum(any(traits(r)) != bool(r.label) for r in noisy.records)
    assert 100 < flipped < 300 and all(any(traits(r)) == bool(r.label) for r in clean.records)


def test_validation():
    with pytest.raises(ConfigError):
        generate_synthetic(19, 0)
    with pytest.raises(ConfigError):
        generate_synthetic(100, 0, difficulty=1.5)
