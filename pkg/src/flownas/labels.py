"""Filename-pattern to class label maps.

One rule per line: ``<glob pattern> <class name>``. Blank lines and ``#``
comments are ignored. Classes are numbered in order of first appearance;
the first matching rule wins.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass
from typing import Optional

from .errors import ConfigError


@dataclass
class LabelMap:
    rules: list[tuple[str, str]]

    @property
    def classes(self) -> list[str]:
        seen: list[str] = []
        for _, name in self.rules:
            if name not in seen:
                seen.append(name)
        return seen

    def label_of(self, filename: str) -> Optional[int]:
        names = self.classes
        for pattern, name in self.rules:
            if fnmatch.fnmatch(filename, pattern):
                return names.index(name)
        return None


def parse_label_map(text: str) -> LabelMap:
    rules = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(f"label map line {lineno}: expected '<pattern> <class>'")
        rules.append((parts[0], parts[1]))
    if not rules:
        raise ConfigError("label map has no rules")
    return LabelMap(rules)


def load_label_map(path) -> LabelMap:
    with open(path) as fh:
        return parse_label_map(fh.read())
