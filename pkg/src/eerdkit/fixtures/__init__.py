"""Bundled example schemas, rubric packages, and the progressive mistake suite.

Three training schemas (company, university, airport) plus the held-out
hospital schema.  ``hospital_progressive`` builds the five cumulative
hospital variants (0 through 4 injected mistakes) used as oracle fixtures.
"""
from __future__ import annotations

from dataclasses import replace
from importlib import resources

from ..forge import MistakeRecord
from ..model import EerdSchema, parse_schema, render_element
from ..rubrics import RubricPackage, load_rubrics

TRAIN_SCHEMAS = ("company", "university", "airport")
TEST_SCHEMA = "hospital"
ALL_SCHEMAS = TRAIN_SCHEMAS + (TEST_SCHEMA,)


def fixture_text(filename: str) -> str:
    return (resources.files(__package__) / filename).read_text(encoding="utf-8")


def load_schema(name: str) -> EerdSchema:
    return parse_schema(fixture_text(f"{name}.json"))


def load_rubric_package(name: str) -> RubricPackage:
    return load_rubrics(fixture_text(f"{name}_rubrics.json"), load_schema(name))


def _drop_key(schema: EerdSchema, entity_name: str, attr_name: str) -> tuple[EerdSchema, MistakeRecord]:
    entity = schema.entity(entity_name)
    attrs = tuple(
        replace(a, key_role="none") if a.name == attr_name else a for a in entity.attributes
    )
    new_entity = replace(entity, attributes=attrs)
    record = MistakeRecord(
        category="key_attribute",
        focal=entity.name,
        original=render_element(entity),
        modified=render_element(new_entity),
        description=f"{attr_name!r} is not marked as a key attribute of {entity.name!r}.",
    )
    entities = tuple(new_entity if e is entity else e for e in schema.entities)
    return replace(schema, entities=entities), record


def hospital_progressive() -> list[tuple[EerdSchema, tuple[MistakeRecord, ...]]]:
    """Five cumulative hospital variants with 0..4 injected mistakes.

    Mistake 1: test's participation in test_log flipped total -> partial.
    Mistake 2: + test_id no longer a key of test.
    Mistake 3: + ss no longer a key of patients.
    Mistake 4: + test_log flipped non_identifying -> identifying.
    """
    base = load_schema(TEST_SCHEMA)
    out: list[tuple[EerdSchema, tuple[MistakeRecord, ...]]] = [(base, ())]

    rel = base.relationship("test_log")
    parts = tuple(
        replace(p, participation="partial") if p.entity == "test" else p
        for p in rel.participants
    )
    new_rel = replace(rel, participants=parts)
    rec1 = MistakeRecord(
        category="total_participation",
        focal=rel.name,
        original=render_element(rel),
        modified=render_element(new_rel),
        description="The total participation constraint of 'test' in 'test_log' is removed.",
    )
    m1 = replace(
        base, relationships=tuple(new_rel if r is rel else r for r in base.relationships)
    )
    out.append((m1, (rec1,)))

    m2, rec2 = _drop_key(m1, "test", "test_id")
    out.append((m2, (rec1, rec2)))

    m3, rec3 = _drop_key(m2, "patients", "ss")
    out.append((m3, (rec1, rec2, rec3)))

    rel3 = m3.relationship("test_log")
    rel4 = replace(rel3, kind="identifying")
    rec4 = MistakeRecord(
        category="relationship_type",
        focal=rel3.name,
        original=render_element(rel3),
        modified=render_element(rel4),
        description="The relation 'test_log' is made identifying.",
    )
    m4 = replace(
        m3, relationships=tuple(rel4 if r is rel3 else r for r in m3.relationships)
    )
    out.append((m4, (rec1, rec2, rec3, rec4)))
    return out


__all__ = [
    "TRAIN_SCHEMAS", "TEST_SCHEMA", "ALL_SCHEMAS",
    "fixture_text", "load_schema", "load_rubric_package", "hospital_progressive",
]
