"""Content-addressed artifact cache with atomic writes.

Entries are keyed by (stage, input digest, config hash): change any of
the three and the old entry simply never matches again, so eviction is
manual by design. Payloads are digest-verified on every read; a corrupt
entry is treated as a miss with a warning, never served.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path

logger = logging.getLogger(__name__)


def bytes_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dir_digest(path: str | Path) -> str:
    """Digest of a directory tree: sorted relative paths and contents."""
    root = Path(path)
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        rel = p.relative_to(root).as_posix()
        h.update(rel.encode("utf-8"))
        h.update(b"\0")
        h.update(bytes.fromhex(file_digest(p)))
    return h.hexdigest()


def input_digest(path: str | Path) -> str:
    p = Path(path)
    return dir_digest(p) if p.is_dir() else file_digest(p)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class ArtifactCache:
    """On-disk cache; safe to share between runs, eviction is manual."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _entry_key(self, stage: str, input_digest: str, config_hash: str) -> str:
        blob = json.dumps(
            {"stage": stage, "input": input_digest, "config": config_hash},
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def _paths(self, key: str) -> tuple[Path, Path]:
        base = self.root / key[:2]
        return base / f"{key}.bin", base / f"{key}.json"

    def lookup(self, stage: str, input_digest: str, config_hash: str) -> bytes | None:
        """Cached payload, or None on miss or corruption."""
        key = self._entry_key(stage, input_digest, config_hash)
        payload_path, meta_path = self._paths(key)
        if not payload_path.is_file() or not meta_path.is_file():
            return None
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            payload = payload_path.read_bytes()
        except (OSError, ValueError) as exc:
            logger.warning("cache entry %s unreadable (%s), recomputing", key[:12], exc)
            return None
        if bytes_digest(payload) != meta.get("payload_sha256"):
            logger.warning("cache entry %s corrupt (digest mismatch), recomputing", key[:12])
            return None
        return payload

    def store(
        self, stage: str, input_digest: str, config_hash: str, payload: bytes
    ) -> None:
        key = self._entry_key(stage, input_digest, config_hash)
        payload_path, meta_path = self._paths(key)
        meta = {
            "stage": stage,
            "input_digest": input_digest,
            "config_hash": config_hash,
            "payload_sha256": bytes_digest(payload),
        }
        atomic_write_bytes(payload_path, payload)
        atomic_write_text(meta_path, json.dumps(meta, sort_keys=True))
