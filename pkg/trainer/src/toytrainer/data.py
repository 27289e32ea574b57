"""Loaders for the exported alignment JSONL files.

The files are consumed verbatim: one JSON object per line, SFT records as
``{prompt, completion, stage, variant_id}`` and preference records as
``{prompt, chosen, rejected, stage, variant_id}``.  Validation failures name
the offending line numbers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


class SchemaMismatch(Exception):
    """The file exists but one or more lines violate the record schema."""

    def __init__(self, path: str | Path, problems: list[tuple[int, str]]):
        detail = "; ".join(f"line {n}: {msg}" for n, msg in problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
        super().__init__(f"{path}: {detail}{more}")
        self.problems = problems


class EmptyDataset(Exception):
    pass


@dataclass(frozen=True)
class SftRecord:
    prompt: str
    completion: str
    stage: str
    variant_id: int


@dataclass(frozen=True)
class PairRecord:
    prompt: str
    chosen: str
    rejected: str
    stage: str
    variant_id: int


_SFT_FIELDS = {"prompt": str, "completion": str, "stage": str, "variant_id": int}
_PAIR_FIELDS = {"prompt": str, "chosen": str, "rejected": str, "stage": str, "variant_id": int}


def _check_fields(doc: object, fields: dict[str, type]) -> str | None:
    if not isinstance(doc, dict):
        return "record is not a JSON object"
    for name, typ in fields.items():
        if name not in doc:
            return f"missing field {name!r}"
        if not isinstance(doc[name], typ) or isinstance(doc[name], bool):
            return f"field {name!r} must be {typ.__name__}"
    return None


def _iter_lines(path: str | Path):
    text = Path(path).read_text(encoding="utf-8")
    for n, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            yield n, line


def load_sft(path: str | Path) -> list[SftRecord]:
    records: list[SftRecord] = []
    problems: list[tuple[int, str]] = []
    for n, line in _iter_lines(path):
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            problems.append((n, f"invalid JSON ({exc.msg})"))
            continue
        msg = _check_fields(doc, _SFT_FIELDS)
        if msg is not None:
            problems.append((n, msg))
            continue
        if not doc["completion"].strip():
            problems.append((n, "completion is empty"))
            continue
        records.append(SftRecord(doc["prompt"], doc["completion"], doc["stage"],
                                 doc["variant_id"]))
    if problems:
        raise SchemaMismatch(path, problems)
    if not records:
        raise EmptyDataset(f"{path}: no records")
    return records


def load_pairs(path: str | Path) -> list[PairRecord]:
    records: list[PairRecord] = []
    problems: list[tuple[int, str]] = []
    for n, line in _iter_lines(path):
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            problems.append((n, f"invalid JSON ({exc.msg})"))
            continue
        msg = _check_fields(doc, _PAIR_FIELDS)
        if msg is not None:
            problems.append((n, msg))
            continue
        if doc["chosen"] == doc["rejected"]:
            problems.append((n, "degenerate pair: chosen == rejected"))
            continue
        records.append(PairRecord(doc["prompt"], doc["chosen"], doc["rejected"],
                                  doc["stage"], doc["variant_id"]))
    if problems:
        raise SchemaMismatch(path, problems)
    if not records:
        raise EmptyDataset(f"{path}: no records")
    return records


__all__ = ["SftRecord", "PairRecord", "SchemaMismatch", "EmptyDataset",
           "load_sft", "load_pairs"]
