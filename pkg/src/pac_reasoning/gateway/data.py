"""Dataset ingestion and JSONL persistence."""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from ..core import CalibrationRecord
from ..exceptions import IngestionError


@dataclass(frozen=True)
class PromptItem:
    id: str
    prompt: str
    gold: str | None = None


def iter_jsonl(path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield ``(line_number, object)`` for every non-blank line."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"invalid JSON ({exc.msg})", line=lineno) from None
            if not isinstance(obj, dict):
                raise IngestionError("expected a JSON object", line=lineno)
            yield lineno, obj


def write_jsonl(path, rows: Iterable[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def read_prompts(path) -> list[PromptItem]:
    items = []
    seen: set[str] = set()
    for lineno, obj in iter_jsonl(path):
        if "id" not in obj or "prompt" not in obj:
            raise IngestionError("each line needs 'id' and 'prompt'", line=lineno)
        pid = str(obj["id"])
        if pid in seen:
            raise IngestionError(f"duplicate id {pid!r}", line=lineno)
        seen.add(pid)
        gold = obj.get("gold")
        items.append(PromptItem(pid, str(obj["prompt"]), None if gold is None else str(gold)))
    return items


def ingest_dataset(path, cal_size: int, test_size: int, seed: int) -> tuple[list[PromptItem], list[PromptItem]]:
    """Seeded random partition of a prompt JSONL file into calibration and test subsets.

    Both subsets keep the file's original order.
    """
    items = read_prompts(path)
    if cal_size < 0 or test_size < 0 or cal_size + test_size > len(items):
        raise IngestionError(f"requested {cal_size} + {test_size} items but the dataset has {len(items)}")
    perm = np.random.default_rng(seed).permutation(len(items))
    cal = sorted(perm[:cal_size].tolist())
    test = sorted(perm[cal_size : cal_size + test_size].tolist())
    return [items[i] for i in cal], [items[i] for i in test]


def read_records(path) -> list[CalibrationRecord]:
    records = []
    for lineno, obj in iter_jsonl(path):
        try:
            records.append(CalibrationRecord.from_dict(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"bad record: {exc}", line=lineno) from None
    return records


def write_records(path, records: Iterable[CalibrationRecord]) -> None:
    write_jsonl(path, (r.to_dict() for r in records))


def prompt_to_dict(item: PromptItem) -> dict[str, Any]:
    d = {"id": item.id, "prompt": item.prompt}
    if item.gold is not None:
        d["gold"] = item.gold
    return d


def load_split_file(path) -> list[PromptItem]:
    return read_prompts(Path(path))
