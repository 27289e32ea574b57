import json

import pytest

from eerdkit.fixtures import ALL_SCHEMAS, load_schema
from eerdkit.model import (
    InvariantError,
    SchemaReferenceError,
    SchemaSyntaxError,
    parse_schema,
    serialize_schema,
    validate_structure,
)

EMPTY_DOC = '{"name": "empty", "entities": [], "relationships": []}'

WEAK_DOC = json.dumps({
    "name": "records",
    "entities": [
        {"name": "Person", "kind": "strong",
         "attributes": [{"name": "pid", "kind": "simple", "key_role": "key"}]},
        {"name": "HealthRecord", "kind": "weak",
         "attributes": [{"name": "record_no", "kind": "simple", "key_role": "partial"}]},
    ],
    "relationships": [
        {"name": "HasRecord", "kind": "identifying",
         "participants": [
             {"entity": "Person", "cardinality": "ONE", "participation": "partial"},
             {"entity": "HealthRecord", "cardinality": "N", "participation": "total"},
         ]},
    ],
})


def test_empty_schema_parses():
    schema = parse_schema(EMPTY_DOC)
    assert schema.is_empty()
    assert validate_structure(schema) == []


def test_hospital_fragment_parses(hospital):
    rel = hospital.relationship("test_log")
    assert rel.kind == "non_identifying"
    by_entity = {p.entity: p for p in rel.participants}
    assert by_entity["test"].participation == "total"
    assert by_entity["patients"].cardinality == "M"
    test = hospital.entity("test")
    assert [a.name for a in test.key_attributes()] == ["test_id"]


def test_weak_entity_with_identifying_relationship():
    schema = parse_schema(WEAK_DOC)
    assert schema.entity("HealthRecord").kind == "weak"
    assert validate_structure(schema) == []


def test_round_trip_identity_on_fixtures():
    for name in ALL_SCHEMAS:
        schema = load_schema(name)
        assert parse_schema(serialize_schema(schema)) == schema


def test_serialize_is_byte_stable(hospital):
    assert serialize_schema(hospital) == serialize_schema(hospital)


def test_ternary_participant_order_preserved(company):
    rel = company.relationship("supplies")
    again = parse_schema(serialize_schema(company)).relationship("supplies")
    assert [p.entity for p in again.participants] == [p.entity for p in rel.participants]


def test_validation_stable_under_round_trip():
    doc = json.loads(WEAK_DOC)
    doc["relationships"][0]["participants"][1]["participation"] = "partial"
    schema = parse_schema(json.dumps(doc))
    first = validate_structure(schema)
    assert [v.rule for v in first] == ["weak-entity-total-participation"]
    assert validate_structure(parse_schema(serialize_schema(schema))) == first


def test_missing_key_violation():
    schema = parse_schema(json.dumps({
        "name": "x",
        "entities": [{"name": "Thing", "kind": "strong",
                      "attributes": [{"name": "label"}]}],
    }))
    assert [v.rule for v in validate_structure(schema)] == ["missing-key"]


def test_identifying_between_strong_violation():
    schema = parse_schema(json.dumps({
        "name": "x",
        "entities": [
            {"name": "A", "attributes": [{"name": "a", "key_role": "key"}]},
            {"name": "B", "attributes": [{"name": "b", "key_role": "key"}]},
        ],
        "relationships": [
            {"name": "R", "kind": "identifying",
             "participants": [{"entity": "A"}, {"entity": "B"}]},
        ],
    }))
    assert [v.rule for v in validate_structure(schema)] == ["identifying-between-strong"]


def test_weak_entity_without_identifying_violation():
    schema = parse_schema(json.dumps({
        "name": "x",
        "entities": [{"name": "W", "kind": "weak",
                      "attributes": [{"name": "w", "key_role": "partial"}]}],
    }))
    assert [v.rule for v in validate_structure(schema)] == ["weak-entity-no-identifying"]


def test_syntax_error_carries_position():
    with pytest.raises(SchemaSyntaxError) as excinfo:
        parse_schema("{not json")
    assert excinfo.value.position


def test_unknown_entity_reference_rejected():
    with pytest.raises(SchemaReferenceError):
        parse_schema(json.dumps({
            "name": "x",
            "entities": [{"name": "A", "attributes": [{"name": "a", "key_role": "key"}]}],
            "relationships": [
                {"name": "R", "participants": [{"entity": "A"}, {"entity": "Ghost"}]},
            ],
        }))


def test_duplicate_entity_names_rejected_case_insensitively():
    with pytest.raises(InvariantError):
        parse_schema(json.dumps({
            "name": "x",
            "entities": [{"name": "A"}, {"name": "a"}],
        }))


def test_relationship_arity_bounds():
    with pytest.raises(InvariantError):
        parse_schema(json.dumps({
            "name": "x",
            "entities": [{"name": "A"}],
            "relationships": [{"name": "R", "participants": [{"entity": "A"}]}],
        }))


def test_composite_attribute_needs_two_components():
    with pytest.raises(InvariantError):
        parse_schema(json.dumps({
            "name": "x",
            "entities": [{"name": "A", "attributes": [
                {"name": "c", "kind": "composite",
                 "components": [{"name": "only"}]},
            ]}],
        }))


def test_weak_entity_cannot_hold_full_key():
    with pytest.raises(InvariantError):
        parse_schema(json.dumps({
            "name": "x",
            "entities": [{"name": "W", "kind": "weak",
                          "attributes": [{"name": "k", "key_role": "key"}]}],
        }))


def test_unknown_field_strict_vs_lenient():
    doc = json.dumps({"name": "x", "entities": [], "mystery": 1})
    with pytest.raises(SchemaSyntaxError):
        parse_schema(doc, strict=True)
    with pytest.warns(UserWarning):
        parse_schema(doc, strict=False)
