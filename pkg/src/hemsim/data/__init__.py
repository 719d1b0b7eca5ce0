"""Bundled parameter maps, weather traces and schemas.

Set ``HEMSIM_DATA_DIR`` to point lookups at a different directory; files
missing there fall back to the bundled copies.
"""
import json
import os
from functools import lru_cache
from pathlib import Path

BUNDLED = Path(__file__).resolve().parent


def data_path(name) -> Path:
    p = Path(name)
    if p.is_absolute() or p.exists():
        return p
    override = os.environ.get("HEMSIM_DATA_DIR")
    if override and (Path(override) / p).exists():
        return Path(override) / p
    return BUNDLED / p


@lru_cache(maxsize=32)
def _load(path: str):
    with open(path) as fh:
        return json.load(fh)


def load_json(name):
    return _load(str(data_path(name)))
