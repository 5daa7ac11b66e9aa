from __future__ import annotations

from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

import pytest

TINY = {
    "seed": 7,
    "data": {"synthetic_n": 240},
    "phase1": {"k": 3},
    "phase2": {"max_epochs": 3, "premier_folds": 2, "max_len": 60, "hidden": 8, "embed_dim": 4, "dense": [8]},
    "tfidf": {"max_features": 300},
    "meta": {"rounds": 20},
}


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def to_toml(raw: dict) -> str:
    top = [f"{k} = {_toml_value(v)}" for k, v in raw.items() if not isinstance(v, dict)]
    sections = [f"[{k}]\n" + "\n".join(f"{kk} = {_toml_value(vv)}" for kk, vv in v.items())
                for k, v in raw.items() if isinstance(v, dict)]
    return "\n".join(top) + "\n\n" + "\n\n".join(sections) + "\n"


@pytest.fixture
def tiny_raw():
    return {k: dict(v) if isinstance(v, dict) else v for k, v in TINY.items()}


@pytest.fixture
def tiny_config_file(tmp_path, tiny_raw):
    path = tmp_path / "tiny.toml"
    path.write_text(to_toml(tiny_raw))
    return path
