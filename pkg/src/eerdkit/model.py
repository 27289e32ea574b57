"""Canonical in-memory model for EERD schemas.

A schema is a JSON document with top-level arrays ``entities``,
``relationships``, ``specializations`` and ``unions``.  All model types are
frozen dataclasses: once parsed they are immutable and safe to share.

Parsing enforces well-formedness (syntax, unique names, resolvable
references, structural attribute rules).  Semantic soundness rules such as
"a strong entity needs a key" are deliberately *not* parse errors: a schema
with an injected modeling mistake must still parse.  Those rules live in
:func:`validate_structure`, which reports violations as data.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Iterable


ENTITY_KINDS = ("strong", "weak")
ATTRIBUTE_KINDS = ("simple", "composite", "multivalued", "derived")
KEY_ROLES = ("none", "key", "partial")
RELATIONSHIP_KINDS = ("identifying", "non_identifying")
CARDINALITIES = ("ONE", "N", "M")
PARTICIPATIONS = ("total", "partial")


class EerdError(Exception):
    """Base class for all schema-document errors."""


class SchemaSyntaxError(EerdError):
    def __init__(self, message: str, position: str = "$"):
        super().__init__(f"{position}: {message}")
        self.position = position


class SchemaReferenceError(EerdError):
    def __init__(self, name: str, position: str = "$"):
        super().__init__(f"{position}: unknown entity name {name!r}")
        self.name = name
        self.position = position


class InvariantError(EerdError):
    def __init__(self, invariant: str, element: str):
        super().__init__(f"invariant {invariant!r} violated by {element!r}")
        self.invariant = invariant
        self.element = element


def normalize_name(name: str) -> str:
    """Case-insensitive, whitespace-normalized form used for all name matching."""
    return " ".join(name.strip().split()).casefold()


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str = "simple"
    key_role: str = "none"
    components: tuple["Attribute", ...] = ()

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind, "key_role": self.key_role}
        if self.kind == "composite":
            d["components"] = [c.to_dict() for c in self.components]
        return d


@dataclass(frozen=True)
class Entity:
    name: str
    kind: str = "strong"
    attributes: tuple[Attribute, ...] = ()

    def key_attributes(self) -> tuple[Attribute, ...]:
        return tuple(a for a in self.attributes if a.key_role == "key")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "attributes": [a.to_dict() for a in self.attributes],
        }


@dataclass(frozen=True)
class Participant:
    entity: str
    cardinality: str = "N"
    participation: str = "partial"

    def to_dict(self) -> dict:
        return {
            "entity": self.entity,
            "cardinality": self.cardinality,
            "participation": self.participation,
        }


@dataclass(frozen=True)
class Relationship:
    name: str
    kind: str = "non_identifying"
    participants: tuple[Participant, ...] = ()
    attributes: tuple[Attribute, ...] = ()

    @property
    def arity(self) -> int:
        return len(self.participants)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "participants": [p.to_dict() for p in self.participants],
            "attributes": [a.to_dict() for a in self.attributes],
        }


@dataclass(frozen=True)
class Specialization:
    supertype: str
    subtypes: tuple[str, ...]
    completeness: str = "partial"
    disjointness: str = "disjoint"

    def to_dict(self) -> dict:
        return {
            "supertype": self.supertype,
            "subtypes": list(self.subtypes),
            "completeness": self.completeness,
            "disjointness": self.disjointness,
        }


@dataclass(frozen=True)
class UnionCategory:
    category: str
    supertypes: tuple[str, ...]
    participation: str = "partial"

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "supertypes": list(self.supertypes),
            "participation": self.participation,
        }


@dataclass(frozen=True)
class EerdSchema:
    name: str = "unnamed"
    entities: tuple[Entity, ...] = ()
    relationships: tuple[Relationship, ...] = ()
    specializations: tuple[Specialization, ...] = ()
    unions: tuple[UnionCategory, ...] = ()

    def entity(self, name: str) -> Entity | None:
        key = normalize_name(name)
        for e in self.entities:
            if normalize_name(e.name) == key:
                return e
        return None

    def relationship(self, name: str) -> Relationship | None:
        key = normalize_name(name)
        for r in self.relationships:
            if normalize_name(r.name) == key:
                return r
        return None

    def element_names(self) -> set[str]:
        """Normalized names of everything a rubric anchor or mistake focal may target."""
        names = {normalize_name(e.name) for e in self.entities}
        names |= {normalize_name(r.name) for r in self.relationships}
        names |= {normalize_name(s.supertype) for s in self.specializations}
        names |= {normalize_name(u.category) for u in self.unions}
        return names

    def is_empty(self) -> bool:
        return not (self.entities or self.relationships or self.specializations or self.unions)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "entities": [e.to_dict() for e in self.entities],
            "relationships": [r.to_dict() for r in self.relationships],
            "specializations": [s.to_dict() for s in self.specializations],
            "unions": [u.to_dict() for u in self.unions],
        }


@dataclass(frozen=True)
class StructureViolation:
    rule: str
    element: str
    detail: str

    def __str__(self) -> str:
        return f"[{self.rule}] {self.element}: {self.detail}"


# ---------------------------------------------------------------------------
# parsing

def _check_fields(obj: dict, allowed: set[str], pos: str, strict: bool) -> None:
    unknown = set(obj) - allowed
    if not unknown:
        return
    msg = f"unknown field(s) {sorted(unknown)}"
    if strict:
        raise SchemaSyntaxError(msg, pos)
    warnings.warn(f"{pos}: {msg}", stacklevel=3)


def _enum(value: Any, domain: tuple[str, ...], pos: str) -> str:
    if value not in domain:
        raise SchemaSyntaxError(f"expected one of {domain}, got {value!r}", pos)
    return value


def _str(obj: dict, key: str, pos: str) -> str:
    v = obj.get(key)
    if not isinstance(v, str) or not v.strip():
        raise SchemaSyntaxError(f"field {key!r} must be a non-empty string", pos)
    return v


def _parse_attribute(obj: Any, pos: str, strict: bool) -> Attribute:
    if not isinstance(obj, dict):
        raise SchemaSyntaxError("attribute must be an object", pos)
    _check_fields(obj, {"name", "kind", "key_role", "components"}, pos, strict)
    name = _str(obj, "name", pos)
    kind = _enum(obj.get("kind", "simple"), ATTRIBUTE_KINDS, pos)
    key_role = _enum(obj.get("key_role", "none"), KEY_ROLES, pos)
    raw_components = obj.get("components", [])
    if not isinstance(raw_components, list):
        raise SchemaSyntaxError("components must be an array", pos)
    components = tuple(
        _parse_attribute(c, f"{pos}.components[{i}]", strict)
        for i, c in enumerate(raw_components)
    )
    if kind == "composite" and len(components) < 2:
        raise InvariantError("composite attribute has >=2 components", name)
    if kind != "composite" and components:
        raise InvariantError("components non-empty only on composite attributes", name)
    return Attribute(name=name, kind=kind, key_role=key_role, components=components)


def _parse_entity(obj: Any, pos: str, strict: bool) -> Entity:
    if not isinstance(obj, dict):
        raise SchemaSyntaxError("entity must be an object", pos)
    _check_fields(obj, {"name", "kind", "attributes"}, pos, strict)
    name = _str(obj, "name", pos)
    kind = _enum(obj.get("kind", "strong"), ENTITY_KINDS, pos)
    attrs = tuple(
        _parse_attribute(a, f"{pos}.attributes[{i}]", strict)
        for i, a in enumerate(obj.get("attributes", []))
    )
    for a in attrs:
        if kind == "weak" and a.key_role == "key":
            raise InvariantError("weak entity has no key-role attribute", f"{name}.{a.name}")
        if kind == "strong" and a.key_role == "partial":
            raise InvariantError("partial keys only on weak entities", f"{name}.{a.name}")
    return Entity(name=name, kind=kind, attributes=attrs)


def _parse_participant(obj: Any, pos: str, strict: bool) -> Participant:
    if not isinstance(obj, dict):
        raise SchemaSyntaxError("participant must be an object", pos)
    _check_fields(obj, {"entity", "cardinality", "participation"}, pos, strict)
    return Participant(
        entity=_str(obj, "entity", pos),
        cardinality=_enum(obj.get("cardinality", "N"), CARDINALITIES, pos),
        participation=_enum(obj.get("participation", "partial"), PARTICIPATIONS, pos),
    )


def _parse_relationship(obj: Any, pos: str, strict: bool) -> Relationship:
    if not isinstance(obj, dict):
        raise SchemaSyntaxError("relationship must be an object", pos)
    _check_fields(obj, {"name", "kind", "participants", "attributes"}, pos, strict)
    name = _str(obj, "name", pos)
    kind = _enum(obj.get("kind", "non_identifying"), RELATIONSHIP_KINDS, pos)
    participants = tuple(
        _parse_participant(p, f"{pos}.participants[{i}]", strict)
        for i, p in enumerate(obj.get("participants", []))
    )
    if len(participants) not in (2, 3):
        raise InvariantError("relationship has 2 or 3 participants", name)
    attrs = tuple(
        _parse_attribute(a, f"{pos}.attributes[{i}]", strict)
        for i, a in enumerate(obj.get("attributes", []))
    )
    return Relationship(name=name, kind=kind, participants=participants, attributes=attrs)


def _parse_specialization(obj: Any, pos: str, strict: bool) -> Specialization:
    if not isinstance(obj, dict):
        raise SchemaSyntaxError("specialization must be an object", pos)
    _check_fields(obj, {"supertype", "subtypes", "completeness", "disjointness"}, pos, strict)
    supertype = _str(obj, "supertype", pos)
    subtypes = obj.get("subtypes", [])
    if not isinstance(subtypes, list) or not subtypes:
        raise InvariantError("specialization has >=1 subtype", supertype)
    norm = [normalize_name(s) for s in subtypes]
    if len(set(norm)) != len(norm) or normalize_name(supertype) in norm:
        raise InvariantError("subtypes distinct from supertype and each other", supertype)
    return Specialization(
        supertype=supertype,
        subtypes=tuple(subtypes),
        completeness=_enum(obj.get("completeness", "partial"), ("total", "partial"), pos),
        disjointness=_enum(obj.get("disjointness", "disjoint"), ("disjoint", "overlapping"), pos),
    )


def _parse_union(obj: Any, pos: str, strict: bool) -> UnionCategory:
    if not isinstance(obj, dict):
        raise SchemaSyntaxError("union must be an object", pos)
    _check_fields(obj, {"category", "supertypes", "participation"}, pos, strict)
    category = _str(obj, "category", pos)
    supertypes = obj.get("supertypes", [])
    if not isinstance(supertypes, list) or len(supertypes) < 2:
        raise InvariantError("union category has >=2 supertypes", category)
    norm = [normalize_name(s) for s in supertypes]
    if len(set(norm)) != len(norm):
        raise InvariantError("union supertypes distinct", category)
    return UnionCategory(
        category=category,
        supertypes=tuple(supertypes),
        participation=_enum(obj.get("participation", "partial"), PARTICIPATIONS, pos),
    )


def parse_schema(text: str, strict: bool = True) -> EerdSchema:
    """Parse a canonical schema document into an :class:`EerdSchema`.

    ``strict`` rejects unknown fields; lenient mode only warns about them.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaSyntaxError(str(exc), f"line {exc.lineno} col {exc.colno}") from exc
    if not isinstance(doc, dict):
        raise SchemaSyntaxError("top level must be an object")
    _check_fields(doc, {"name", "entities", "relationships", "specializations", "unions"}, "$", strict)

    name = doc.get("name", "unnamed")
    if not isinstance(name, str) or not name:
        raise SchemaSyntaxError("field 'name' must be a non-empty string")

    entities = tuple(
        _parse_entity(e, f"$.entities[{i}]", strict) for i, e in enumerate(doc.get("entities", []))
    )
    relationships = tuple(
        _parse_relationship(r, f"$.relationships[{i}]", strict)
        for i, r in enumerate(doc.get("relationships", []))
    )
    specializations = tuple(
        _parse_specialization(s, f"$.specializations[{i}]", strict)
        for i, s in enumerate(doc.get("specializations", []))
    )
    unions = tuple(
        _parse_union(u, f"$.unions[{i}]", strict) for i, u in enumerate(doc.get("unions", []))
    )

    seen: set[str] = set()
    for e in entities:
        key = normalize_name(e.name)
        if key in seen:
            raise InvariantError("entity names unique (case-insensitive)", e.name)
        seen.add(key)
    seen_rel: set[str] = set()
    for r in relationships:
        key = normalize_name(r.name)
        if key in seen_rel:
            raise InvariantError("relationship names unique", r.name)
        seen_rel.add(key)

    entity_names = {normalize_name(e.name) for e in entities}
    for r in relationships:
        for p in r.participants:
            if normalize_name(p.entity) not in entity_names:
                raise SchemaReferenceError(p.entity, f"relationship {r.name}")
    for s in specializations:
        for n in (s.supertype, *s.subtypes):
            if normalize_name(n) not in entity_names:
                raise SchemaReferenceError(n, f"specialization of {s.supertype}")
    for u in unions:
        for n in u.supertypes:
            if normalize_name(n) not in entity_names:
                raise SchemaReferenceError(n, f"union {u.category}")

    return EerdSchema(
        name=name,
        entities=entities,
        relationships=relationships,
        specializations=specializations,
        unions=unions,
    )


def serialize_schema(schema: EerdSchema) -> str:
    """Render a schema to its canonical byte-stable document form."""
    return json.dumps(schema.to_dict(), indent=2, ensure_ascii=False) + "\n"


def render_element(element: Entity | Relationship | Specialization | UnionCategory) -> str:
    """Compact single-line rendering used in mistake records and evidence."""
    return json.dumps(element.to_dict(), separators=(",", ":"), ensure_ascii=False)


# ---------------------------------------------------------------------------
# structural validation

def validate_structure(schema: EerdSchema) -> list[StructureViolation]:
    """Check the built-in soundness rules.  Empty result means structurally sound.

    Violations are data, not errors: injected-mistake variants parse fine and
    surface their problems here.
    """
    violations: list[StructureViolation] = []
    entity_names = {normalize_name(e.name) for e in schema.entities}

    # dangling references can only occur in hand-constructed schemas
    for r in schema.relationships:
        for p in r.participants:
            if normalize_name(p.entity) not in entity_names:
                violations.append(
                    StructureViolation("dangling-reference", r.name, f"unknown entity {p.entity!r}")
                )
    for s in schema.specializations:
        for n in (s.supertype, *s.subtypes):
            if normalize_name(n) not in entity_names:
                violations.append(
                    StructureViolation("dangling-reference", s.supertype, f"unknown entity {n!r}")
                )
    for u in schema.unions:
        for n in u.supertypes:
            if normalize_name(n) not in entity_names:
                violations.append(
                    StructureViolation("dangling-reference", u.category, f"unknown entity {n!r}")
                )

    # entities that inherit identity through a specialization or union are
    # exempt from the own-key requirement
    inheriting = {normalize_name(n) for s in schema.specializations for n in s.subtypes}
    inheriting |= {normalize_name(u.category) for u in schema.unions}

    for e in schema.entities:
        if e.kind == "strong" and not e.key_attributes() and normalize_name(e.name) not in inheriting:
            violations.append(
                StructureViolation("missing-key", e.name, "strong entity has no key attribute")
            )

    weak = {normalize_name(e.name): e for e in schema.entities if e.kind == "weak"}
    identified: set[str] = set()
    for r in schema.relationships:
        if r.kind != "identifying":
            continue
        kinds = []
        for p in r.participants:
            e = schema.entity(p.entity)
            kinds.append(e.kind if e else None)
        if "weak" not in kinds:
            violations.append(
                StructureViolation(
                    "identifying-between-strong", r.name,
                    "identifying relationship has no weak-entity participant",
                )
            )
        if "strong" not in kinds:
            violations.append(
                StructureViolation(
                    "identifying-without-strong", r.name,
                    "identifying relationship has no strong-entity participant",
                )
            )
        for p in r.participants:
            key = normalize_name(p.entity)
            if key in weak:
                identified.add(key)
                if p.participation != "total":
                    violations.append(
                        StructureViolation(
                            "weak-entity-total-participation", r.name,
                            f"weak entity {p.entity!r} participates partially in its "
                            "identifying relationship",
                        )
                    )
    for key, e in weak.items():
        if key not in identified:
            violations.append(
                StructureViolation(
                    "weak-entity-no-identifying", e.name,
                    "weak entity lacks an identifying relationship",
                )
            )
    return violations


__all__ = [
    "Attribute", "Entity", "Participant", "Relationship", "Specialization",
    "UnionCategory", "EerdSchema", "StructureViolation",
    "EerdError", "SchemaSyntaxError", "SchemaReferenceError", "InvariantError",
    "parse_schema", "serialize_schema", "validate_structure",
    "render_element", "normalize_name", "replace",
]
