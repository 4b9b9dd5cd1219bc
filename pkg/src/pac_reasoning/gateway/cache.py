"""Content-addressed on-disk completion cache plus an append-only run ledger."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any


@dataclass(frozen=True)
class CachedCompletion:
    cache_key: str
    text: str
    token_logprobs: list[float] | None
    token_count: int | None
    created_at: float
    token_source: str = "usage"
    reasoning_text: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def cache_key(model: str, request: Any, params: dict[str, Any]) -> str:
    """Stable digest of (model, request, params); survives process restarts."""
    blob = json.dumps(
        {"model": model, "request": request, "params": params},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class CompletionCache:
    """One JSON file per key under ``root/<k[:2]>/<k>.json``.

    Reads take no lock; writes go to a temp file that is renamed into place.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._ledger_lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> CachedCompletion | None:
        p = self._path(key)
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        return CachedCompletion(**data)

    def get_raw(self, key: str) -> dict[str, Any] | None:
        try:
            return json.loads(self._path(key).read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None

    def put_raw(self, key: str, payload: dict[str, Any]) -> None:
        p = self._path(key)
        p.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(payload, f, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, p)
        except BaseException:
            try:
                os.unlink(tmp)
            except FileNotFoundError:
                pass
            raise

    def put(self, completion: CachedCompletion) -> None:
        self.put_raw(completion.cache_key, completion.to_dict())

    def __contains__(self, key: str) -> bool:
        return self._path(key).exists()

    def log(self, event: str, **fields: Any) -> None:
        """Append one line to the run ledger (``ledger.jsonl``)."""
        line = json.dumps({"event": event, "ts": time.time(), **fields}, sort_keys=True)
        with self._ledger_lock, open(self.root / "ledger.jsonl", "a", encoding="utf-8") as f:
            f.write(line + "\n")
