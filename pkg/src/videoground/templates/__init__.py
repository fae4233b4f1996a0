"""Versioned prompt templates.

Each template lives in its own text file next to this module. Reports
and manifests cite templates by content hash, so edits to a template
change every downstream artifact's provenance without any manual
version bump.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources

from ..errors import PipelineError


@dataclass(frozen=True)
class Template:
    name: str
    text: str

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()[:12]


_cache: dict[str, Template] = {}


def load_template(name: str) -> Template:
    if name not in _cache:
        try:
            text = (
                resources.files(__package__).joinpath(f"{name}.txt").read_text("utf-8")
            )
        except FileNotFoundError as exc:
            raise PipelineError(f"unknown template {name!r}") from exc
        _cache[name] = Template(name=name, text=text)
    return _cache[name]


def template_hashes(names: list[str]) -> dict[str, str]:
    return {name: load_template(name).hash for name in names}
