"""Versioned text assets: prompt templates and the stopword list.

Templates use {slot} placeholders substituted literally (plain text
replacement, not str.format, so JSON braces inside templates survive).
"""

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load_asset(name: str) -> str:
    return (resources.files("vidinstruct") / "assets" / name).read_text()


def render(template_name: str, **slots) -> str:
    text = load_asset(template_name)
    for key, value in slots.items():
        text = text.replace("{" + key + "}", str(value))
    return text


@lru_cache(maxsize=None)
def stopwords() -> frozenset:
    words = set()
    for line in load_asset("stopwords.txt").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)
