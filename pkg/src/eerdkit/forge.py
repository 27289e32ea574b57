"""Seeded injection of realistic, syntactically valid mistakes into a schema.

Each of the 11 mistake categories has a deterministic mutation operator.  A
mutated variant always reparses: mistakes are semantically wrong, never
grammar-breaking.  Multi-mistake variants pick their categories without
replacement and always target distinct focal elements, so the structural
diff of a variant against its source recovers the ground truth exactly.
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, replace

from .model import (
    Attribute,
    EerdSchema,
    Entity,
    Participant,
    Relationship,
    Specialization,
    UnionCategory,
    normalize_name,
    parse_schema,
    render_element,
    serialize_schema,
)

MISTAKE_CATEGORIES = (
    "key_attribute",
    "total_participation",
    "ternary_relationship",
    "specialization_union",
    "cardinality",
    "relationship_participants",
    "attribute_type",
    "attribute",
    "entity_type",
    "invalid_relationship",
    "relationship_type",
)


class EmptySchema(Exception):
    pass


class NoApplicableSite(Exception):
    def __init__(self, category: str):
        super().__init__(f"no eligible element left for category {category!r}")
        self.category = category


class PlanInfeasible(Exception):
    pass


@dataclass(frozen=True)
class MistakeRecord:
    category: str
    focal: str
    original: str
    modified: str
    description: str

    def to_dict(self) -> dict:
        return {
            "type": self.category,
            "focal": self.focal,
            "original": self.original,
            "modified": self.modified,
            "description": self.description,
        }


@dataclass(frozen=True)
class MistakenVariant:
    variant_id: int
    source_schema: str
    schema: EerdSchema
    mistakes: tuple[MistakeRecord, ...]
    seed: int

    def focal_set(self) -> list[str]:
        return sorted({m.focal for m in self.mistakes})

    def to_dict(self) -> dict:
        return {
            "mistake_id": self.variant_id,
            "focal_relation": ";".join(self.focal_set()),
            "description": " ".join(m.description for m in self.mistakes),
            "num_mistakes": len(self.mistakes),
            "mistakes": [m.to_dict() for m in self.mistakes],
            "mistaken_erd": serialize_schema(self.schema),
            "source_schema": self.source_schema,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MistakenVariant":
        return cls(
            variant_id=doc["mistake_id"],
            source_schema=doc["source_schema"],
            schema=parse_schema(doc["mistaken_erd"]),
            mistakes=tuple(
                MistakeRecord(
                    category=m["type"],
                    focal=m["focal"],
                    original=m["original"],
                    modified=m["modified"],
                    description=m.get("description", ""),
                )
                for m in doc["mistakes"]
            ),
            seed=doc["seed"],
        )


@dataclass(frozen=True)
class CorpusPlan:
    per_count: dict[int, int]
    start_id: int = 1
    seed: int = 0
    balance_window: int = 0  # 0 = whole corpus

    def total(self) -> int:
        return sum(self.per_count.values())

    def to_dict(self) -> dict:
        return {
            "per_count": {str(k): v for k, v in sorted(self.per_count.items())},
            "start_id": self.start_id,
            "seed": self.seed,
            "balance_window": self.balance_window,
        }


def applicable_categories(schema: EerdSchema) -> set[str]:
    """Which mistake categories have at least one structure to mutate."""
    if schema.is_empty():
        raise EmptySchema("cannot inject mistakes into an empty schema")
    cats = set(MISTAKE_CATEGORIES)
    if not any(r.arity == 3 for r in schema.relationships):
        cats.discard("ternary_relationship")
    if not schema.specializations and not schema.unions:
        cats.discard("specialization_union")
    return cats


# ---------------------------------------------------------------------------
# per-category mutation operators
#
# Each operator returns (new_schema, MistakeRecord) or raises NoApplicableSite.
# `blocked` holds normalized focal names already mutated in this variant.

def _replace_entity(schema: EerdSchema, old: Entity, new: Entity) -> EerdSchema:
    return replace(
        schema,
        entities=tuple(new if e is old else e for e in schema.entities),
    )


def _replace_relationship(schema: EerdSchema, old: Relationship, new: Relationship) -> EerdSchema:
    return replace(
        schema,
        relationships=tuple(new if r is old else r for r in schema.relationships),
    )


def _open_entities(schema: EerdSchema, blocked: set[str]) -> list[Entity]:
    return [e for e in schema.entities if normalize_name(e.name) not in blocked]


def _open_relationships(schema: EerdSchema, blocked: set[str]) -> list[Relationship]:
    return [r for r in schema.relationships if normalize_name(r.name) not in blocked]


def _inject_key_attribute(schema, rng, blocked):
    sites = [
        (e, i)
        for e in _open_entities(schema, blocked)
        for i, a in enumerate(e.attributes)
        if a.key_role in ("key", "partial")
    ]
    if not sites:
        raise NoApplicableSite("key_attribute")
    entity, idx = rng.choice(sites)
    attr = entity.attributes[idx]
    new_attr = replace(attr, key_role="none")
    new_entity = replace(
        entity,
        attributes=tuple(new_attr if i == idx else a for i, a in enumerate(entity.attributes)),
    )
    record = MistakeRecord(
        category="key_attribute",
        focal=entity.name,
        original=render_element(entity),
        modified=render_element(new_entity),
        description=f"{attr.name!r} is no longer marked as a {attr.key_role} attribute of {entity.name!r}.",
    )
    return _replace_entity(schema, entity, new_entity), record


def _inject_total_participation(schema, rng, blocked):
    sites = [
        (r, i)
        for r in _open_relationships(schema, blocked)
        for i in range(len(r.participants))
    ]
    if not sites:
        raise NoApplicableSite("total_participation")
    rel, idx = rng.choice(sites)
    part = rel.participants[idx]
    flipped = "partial" if part.participation == "total" else "total"
    new_part = replace(part, participation=flipped)
    new_rel = replace(
        rel,
        participants=tuple(new_part if i == idx else p for i, p in enumerate(rel.participants)),
    )
    record = MistakeRecord(
        category="total_participation",
        focal=rel.name,
        original=render_element(rel),
        modified=render_element(new_rel),
        description=f"Participation of {part.entity!r} in {rel.name!r} changed from "
        f"{part.participation} to {flipped}.",
    )
    return _replace_relationship(schema, rel, new_rel), record


def _inject_cardinality(schema, rng, blocked):
    sites = [
        (r, i)
        for r in _open_relationships(schema, blocked)
        for i in range(len(r.participants))
    ]
    if not sites:
        raise NoApplicableSite("cardinality")
    rel, idx = rng.choice(sites)
    part = rel.participants[idx]
    flipped = "N" if part.cardinality == "ONE" else "ONE"
    new_part = replace(part, cardinality=flipped)
    new_rel = replace(
        rel,
        participants=tuple(new_part if i == idx else p for i, p in enumerate(rel.participants)),
    )
    record = MistakeRecord(
        category="cardinality",
        focal=rel.name,
        original=render_element(rel),
        modified=render_element(new_rel),
        description=f"Cardinality of {part.entity!r} in {rel.name!r} changed from "
        f"{part.cardinality} to {flipped}.",
    )
    return _replace_relationship(schema, rel, new_rel), record


def _inject_relationship_type(schema, rng, blocked):
    sites = _open_relationships(schema, blocked)
    if not sites:
        raise NoApplicableSite("relationship_type")
    rel = rng.choice(sites)
    flipped = "identifying" if rel.kind == "non_identifying" else "non_identifying"
    new_rel = replace(rel, kind=flipped)
    record = MistakeRecord(
        category="relationship_type",
        focal=rel.name,
        original=render_element(rel),
        modified=render_element(new_rel),
        description=f"Relationship {rel.name!r} changed from {rel.kind} to {flipped}.",
    )
    return _replace_relationship(schema, rel, new_rel), record


def _inject_relationship_participants(schema, rng, blocked):
    entity_names = [e.name for e in schema.entities]
    sites = []
    for r in _open_relationships(schema, blocked):
        in_rel = {normalize_name(p.entity) for p in r.participants}
        replacements = [n for n in entity_names if normalize_name(n) not in in_rel]
        for i in range(len(r.participants)):
            for repl in replacements:
                sites.append((r, i, repl))
    if not sites:
        raise NoApplicableSite("relationship_participants")
    rel, idx, repl = rng.choice(sites)
    part = rel.participants[idx]
    new_part = replace(part, entity=repl)
    new_rel = replace(
        rel,
        participants=tuple(new_part if i == idx else p for i, p in enumerate(rel.participants)),
    )
    record = MistakeRecord(
        category="relationship_participants",
        focal=rel.name,
        original=render_element(rel),
        modified=render_element(new_rel),
        description=f"Participant {part.entity!r} of {rel.name!r} replaced with {repl!r}.",
    )
    return _replace_relationship(schema, rel, new_rel), record


def _inject_ternary_relationship(schema, rng, blocked):
    sites = [r for r in _open_relationships(schema, blocked) if r.arity == 3]
    if not sites:
        raise NoApplicableSite("ternary_relationship")
    rel = rng.choice(sites)
    drop = rng.randrange(3)
    new_rel = replace(
        rel,
        participants=tuple(p for i, p in enumerate(rel.participants) if i != drop),
    )
    record = MistakeRecord(
        category="ternary_relationship",
        focal=rel.name,
        original=render_element(rel),
        modified=render_element(new_rel),
        description=f"Ternary relationship {rel.name!r} reduced to binary by dropping "
        f"{rel.participants[drop].entity!r}.",
    )
    return _replace_relationship(schema, rel, new_rel), record


def _inject_invalid_relationship(schema, rng, blocked):
    # swap the (cardinality, participation) assignment between two participants
    # whose constraint pairs differ: same entities, inverted semantics
    sites = []
    for r in _open_relationships(schema, blocked):
        for i in range(len(r.participants)):
            for j in range(i + 1, len(r.participants)):
                pi, pj = r.participants[i], r.participants[j]
                if (pi.cardinality, pi.participation) != (pj.cardinality, pj.participation):
                    sites.append((r, i, j))
    if not sites:
        raise NoApplicableSite("invalid_relationship")
    rel, i, j = rng.choice(sites)
    parts = list(rel.participants)
    pi, pj = parts[i], parts[j]
    parts[i] = replace(pi, cardinality=pj.cardinality, participation=pj.participation)
    parts[j] = replace(pj, cardinality=pi.cardinality, participation=pi.participation)
    new_rel = replace(rel, participants=tuple(parts))
    record = MistakeRecord(
        category="invalid_relationship",
        focal=rel.name,
        original=render_element(rel),
        modified=render_element(new_rel),
        description=f"Constraints of {pi.entity!r} and {pj.entity!r} swapped in {rel.name!r}, "
        "inverting the relationship semantics.",
    )
    return _replace_relationship(schema, rel, new_rel), record


def _flip_attr_kind(attr: Attribute) -> Attribute:
    if attr.kind == "simple":
        return replace(attr, kind="multivalued")
    if attr.kind == "multivalued":
        return replace(attr, kind="simple")
    if attr.kind == "derived":
        return replace(attr, kind="simple")
    return replace(attr, kind="simple", components=())  # composite


def _inject_attribute_type(schema, rng, blocked):
    sites = []
    for e in _open_entities(schema, blocked):
        for i in range(len(e.attributes)):
            sites.append(("entity", e, i))
    for r in _open_relationships(schema, blocked):
        for i in range(len(r.attributes)):
            sites.append(("relationship", r, i))
    if not sites:
        raise NoApplicableSite("attribute_type")
    owner_kind, owner, idx = rng.choice(sites)
    attr = owner.attributes[idx]
    new_attr = _flip_attr_kind(attr)
    new_attrs = tuple(new_attr if i == idx else a for i, a in enumerate(owner.attributes))
    new_owner = replace(owner, attributes=new_attrs)
    record = MistakeRecord(
        category="attribute_type",
        focal=owner.name,
        original=render_element(owner),
        modified=render_element(new_owner),
        description=f"Attribute {attr.name!r} of {owner.name!r} changed from "
        f"{attr.kind} to {new_attr.kind}.",
    )
    if owner_kind == "entity":
        return _replace_entity(schema, owner, new_owner), record
    return _replace_relationship(schema, owner, new_owner), record


def _inject_attribute(schema, rng, blocked):
    # drop a non-key attribute; missing attributes are the classic omission slip
    sites = []
    for e in _open_entities(schema, blocked):
        for i, a in enumerate(e.attributes):
            if a.key_role == "none":
                sites.append(("entity", e, i))
    for r in _open_relationships(schema, blocked):
        for i, a in enumerate(r.attributes):
            if a.key_role == "none":
                sites.append(("relationship", r, i))
    if not sites:
        raise NoApplicableSite("attribute")
    owner_kind, owner, idx = rng.choice(sites)
    attr = owner.attributes[idx]
    new_attrs = tuple(a for i, a in enumerate(owner.attributes) if i != idx)
    new_owner = replace(owner, attributes=new_attrs)
    record = MistakeRecord(
        category="attribute",
        focal=owner.name,
        original=render_element(owner),
        modified=render_element(new_owner),
        description=f"Attribute {attr.name!r} removed from {owner.name!r}.",
    )
    if owner_kind == "entity":
        return _replace_entity(schema, owner, new_owner), record
    return _replace_relationship(schema, owner, new_owner), record


def flip_entity_kind(entity: Entity) -> Entity:
    """Canonical strong<->weak flip keeping the document parse-valid."""
    if entity.kind == "strong":
        attrs = tuple(
            replace(a, key_role="partial") if a.key_role == "key" else a
            for a in entity.attributes
        )
        return replace(entity, kind="weak", attributes=attrs)
    attrs = tuple(
        replace(a, key_role="key") if a.key_role == "partial" else a
        for a in entity.attributes
    )
    return replace(entity, kind="strong", attributes=attrs)


def _inject_entity_type(schema, rng, blocked):
    sites = _open_entities(schema, blocked)
    if not sites:
        raise NoApplicableSite("entity_type")
    entity = rng.choice(sites)
    new_entity = flip_entity_kind(entity)
    record = MistakeRecord(
        category="entity_type",
        focal=entity.name,
        original=render_element(entity),
        modified=render_element(new_entity),
        description=f"Entity {entity.name!r} changed from {entity.kind} to {new_entity.kind}.",
    )
    return _replace_entity(schema, entity, new_entity), record


def _inject_specialization_union(schema, rng, blocked):
    sites = []
    for s in schema.specializations:
        if normalize_name(s.supertype) in blocked:
            continue
        sites.append(("completeness", s))
        sites.append(("disjointness", s))
    for u in schema.unions:
        if normalize_name(u.category) in blocked:
            continue
        sites.append(("participation", u))
    if not sites:
        raise NoApplicableSite("specialization_union")
    field, target = rng.choice(sites)
    if field == "completeness":
        new = replace(target, completeness="partial" if target.completeness == "total" else "total")
        focal = target.supertype
        detail = f"completeness changed to {new.completeness}"
        new_schema = replace(
            schema,
            specializations=tuple(new if s is target else s for s in schema.specializations),
        )
    elif field == "disjointness":
        new = replace(
            target,
            disjointness="overlapping" if target.disjointness == "disjoint" else "disjoint",
        )
        focal = target.supertype
        detail = f"disjointness changed to {new.disjointness}"
        new_schema = replace(
            schema,
            specializations=tuple(new if s is target else s for s in schema.specializations),
        )
    else:
        new = replace(target, participation="partial" if target.participation == "total" else "total")
        focal = target.category
        detail = f"union participation changed to {new.participation}"
        new_schema = replace(
            schema,
            unions=tuple(new if u is target else u for u in schema.unions),
        )
    record = MistakeRecord(
        category="specialization_union",
        focal=focal,
        original=render_element(target),
        modified=render_element(new),
        description=f"Specialization/union around {focal!r}: {detail}.",
    )
    return new_schema, record


_OPERATORS = {
    "key_attribute": _inject_key_attribute,
    "total_participation": _inject_total_participation,
    "ternary_relationship": _inject_ternary_relationship,
    "specialization_union": _inject_specialization_union,
    "cardinality": _inject_cardinality,
    "relationship_participants": _inject_relationship_participants,
    "attribute_type": _inject_attribute_type,
    "attribute": _inject_attribute,
    "entity_type": _inject_entity_type,
    "invalid_relationship": _inject_invalid_relationship,
    "relationship_type": _inject_relationship_type,
}


def inject(
    schema: EerdSchema,
    category: str,
    seed: int,
    blocked: set[str] | None = None,
) -> tuple[EerdSchema, MistakeRecord]:
    """Apply one seeded mutation of ``category``; deterministic given the seed."""
    if category not in _OPERATORS:
        raise ValueError(f"unknown mistake category {category!r}")
    rng = random.Random(seed)
    return _OPERATORS[category](schema, rng, blocked or set())


def schema_fingerprint(schema: EerdSchema) -> str:
    return hashlib.sha256(serialize_schema(schema).encode("utf-8")).hexdigest()


def generate_corpus(schema: EerdSchema, plan: CorpusPlan) -> list[MistakenVariant]:
    """Produce the planned variants, balancing category usage across the corpus.

    Category choice always draws from the least-used applicable categories so
    coverage stays near-uniform.  Everything downstream of (schema, plan) is a
    pure function of the seed.
    """
    if any(v < 0 for v in plan.per_count.values()):
        raise PlanInfeasible("negative count in plan")
    applicable = applicable_categories(schema)
    rng = random.Random(plan.seed)
    usage = {c: 0 for c in sorted(applicable)}
    variants: list[MistakenVariant] = []
    vid = plan.start_id

    for num_mistakes in sorted(plan.per_count):
        if num_mistakes < 1 or num_mistakes > 3:
            raise PlanInfeasible(f"variants must carry 1-3 mistakes, got {num_mistakes}")
        for _ in range(plan.per_count[num_mistakes]):
            working = schema
            blocked: set[str] = set()
            used_cats: set[str] = set()
            records: list[MistakeRecord] = []
            for _slot in range(num_mistakes):
                candidates = sorted(
                    (c for c in applicable if c not in used_cats),
                    key=lambda c: (usage[c], c),
                )
                applied = False
                for cat in candidates:
                    try:
                        working, record = _OPERATORS[cat](working, rng, blocked)
                    except NoApplicableSite:
                        continue
                    records.append(record)
                    used_cats.add(cat)
                    blocked.add(normalize_name(record.focal))
                    usage[cat] += 1
                    applied = True
                    break
                if not applied:
                    raise PlanInfeasible(
                        f"no category has an open mutation site for variant {vid}"
                    )
            variants.append(
                MistakenVariant(
                    variant_id=vid,
                    source_schema=schema.name,
                    schema=working,
                    mistakes=tuple(records),
                    seed=plan.seed,
                )
            )
            vid += 1
    return variants


def corpus_manifest(schema: EerdSchema, plan: CorpusPlan, variants: list[MistakenVariant]) -> dict:
    payload = json.dumps([v.to_dict() for v in variants], sort_keys=True).encode("utf-8")
    return {
        "source_schema": schema.name,
        "source_hash": schema_fingerprint(schema),
        "plan": plan.to_dict(),
        "count": len(variants),
        "corpus_hash": hashlib.sha256(payload).hexdigest(),
    }


__all__ = [
    "MISTAKE_CATEGORIES", "MistakeRecord", "MistakenVariant", "CorpusPlan",
    "EmptySchema", "NoApplicableSite", "PlanInfeasible",
    "applicable_categories", "inject", "generate_corpus",
    "corpus_manifest", "schema_fingerprint", "flip_entity_kind",
]
