"""Per-schema rubric packages: problem statements, rubrics, probing questions.

The document format mirrors the grading material this toolkit consumes: a
top-level ``problem-statements`` array whose objects carry ``description``,
``rubrics``, ``questions`` and an optional explicit ``anchors`` array.  When
``anchors`` is absent we infer them by matching declared entity/relationship
names inside the description text, so retrieval stays deterministic.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .model import EerdSchema, SchemaSyntaxError, normalize_name


class UnresolvedAnchor(Exception):
    def __init__(self, index: int, name: str):
        super().__init__(f"problem-statements[{index}]: anchor {name!r} not in schema")
        self.index = index
        self.name = name


class UnknownFocal(Exception):
    def __init__(self, name: str):
        super().__init__(f"{name!r} is not an entity or relationship of this schema")
        self.name = name


@dataclass(frozen=True)
class ProblemStatement:
    description: str
    rubrics: tuple[str, ...]
    questions: tuple[str, ...]
    anchors: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "description": self.description,
            "rubrics": list(self.rubrics),
            "questions": list(self.questions),
            "anchors": list(self.anchors),
        }


@dataclass(frozen=True)
class RubricPackage:
    schema_name: str
    statements: tuple[ProblemStatement, ...]

    def anchored_names(self) -> list[str]:
        """All anchors, document order, de-duplicated."""
        seen: set[str] = set()
        out: list[str] = []
        for stmt in self.statements:
            for a in stmt.anchors:
                key = normalize_name(a)
                if key not in seen:
                    seen.add(key)
                    out.append(a)
        return out

    def to_dict(self) -> dict:
        return {"problem-statements": [s.to_dict() for s in self.statements]}


def _infer_anchors(description: str, schema: EerdSchema) -> list[str]:
    """Match declared entity/relationship names as whole words in the text."""
    found: list[str] = []
    text = description.casefold()
    names = [e.name for e in schema.entities] + [r.name for r in schema.relationships]
    for name in names:
        pattern = r"(?<![a-z0-9_])" + re.escape(name.casefold()) + r"s?(?![a-z0-9_])"
        if re.search(pattern, text):
            found.append(name)
    return found


def load_rubrics(text: str, schema: EerdSchema) -> RubricPackage:
    """Parse and validate a rubric document against its schema."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaSyntaxError(str(exc), f"line {exc.lineno} col {exc.colno}") from exc
    if not isinstance(doc, dict) or "problem-statements" not in doc:
        raise SchemaSyntaxError("expected object with a 'problem-statements' array")
    raw = doc["problem-statements"]
    if not isinstance(raw, list) or not raw:
        raise SchemaSyntaxError("'problem-statements' must be a non-empty array")

    valid = schema.element_names()
    statements: list[ProblemStatement] = []
    for i, obj in enumerate(raw):
        if not isinstance(obj, dict) or "description" not in obj:
            raise SchemaSyntaxError(f"problem-statements[{i}] must have a 'description'")
        description = obj["description"]
        rubrics = tuple(obj.get("rubrics", []))
        if not rubrics:
            raise SchemaSyntaxError(f"problem-statements[{i}] must have >=1 rubric")
        questions = tuple(obj.get("questions", []))
        anchors = list(obj.get("anchors", [])) or _infer_anchors(description, schema)
        if not anchors:
            raise UnresolvedAnchor(i, "<none inferred>")
        for a in anchors:
            if normalize_name(a) not in valid:
                raise UnresolvedAnchor(i, a)
        statements.append(
            ProblemStatement(
                description=description,
                rubrics=rubrics,
                questions=questions,
                anchors=tuple(anchors),
            )
        )
    return RubricPackage(schema_name=schema.name, statements=tuple(statements))


def relevant_statements(
    pkg: RubricPackage, focal: str, schema: EerdSchema
) -> list[ProblemStatement]:
    """Statements anchored to ``focal``, plus ones anchored to its participants.

    Output preserves document order and never duplicates a statement.
    """
    key = normalize_name(focal)
    targets = {key}
    rel = schema.relationship(focal)
    entity = schema.entity(focal)
    if rel is None and entity is None:
        raise UnknownFocal(focal)
    if rel is not None:
        targets |= {normalize_name(p.entity) for p in rel.participants}

    out: list[ProblemStatement] = []
    for stmt in pkg.statements:
        if targets & {normalize_name(a) for a in stmt.anchors}:
            out.append(stmt)
    return out


def statements_to_json(statements: list[ProblemStatement]) -> str:
    """Render selected statements for embedding in a prompt."""
    return json.dumps(
        [{"description": s.description, "rubrics": list(s.rubrics), "questions": list(s.questions)}
         for s in statements],
        indent=2,
        ensure_ascii=False,
    )


__all__ = [
    "ProblemStatement", "RubricPackage", "UnresolvedAnchor", "UnknownFocal",
    "load_rubrics", "relevant_statements", "statements_to_json",
]
