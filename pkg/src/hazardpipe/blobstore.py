"""Content-addressed blob storage: blobs/<2-hex-prefix>/<sha256>."""
from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Iterator, Optional

from .core import HazardPipeError


class MissingBlob(HazardPipeError):
    """A blob reference points at nothing."""


class BlobStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path_for(self, ref: str) -> Path:
        return self.root / ref[:2] / ref

    def put(self, data: bytes) -> str:
        ref = hashlib.sha256(data).hexdigest()
        path = self._path_for(ref)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        return ref

    def get(self, ref: str) -> bytes:
        path = self._path_for(ref)
        if not path.exists():
            raise MissingBlob(ref)
        return path.read_bytes()

    def exists(self, ref: str) -> bool:
        return self._path_for(ref).exists()

    def refs(self) -> Iterator[str]:
        for prefix in sorted(self.root.iterdir()):
            if prefix.is_dir():
                for blob in sorted(prefix.iterdir()):
                    yield blob.name
