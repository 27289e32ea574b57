import json

import pytest

from toytrainer import EmptyDataset, SchemaMismatch, load_pairs, load_sft


def _write(tmp_path, lines):
    path = tmp_path / "data.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


GOOD_SFT = json.dumps({"prompt": "p", "completion": "c", "stage": "reasoning",
                       "variant_id": 1})
GOOD_PAIR = json.dumps({"prompt": "p", "chosen": "a", "rejected": "b",
                        "stage": "reasoning", "variant_id": 1})


def test_load_sft_round_trip(tmp_path):
    records = load_sft(_write(tmp_path, [GOOD_SFT]))
    assert records[0].prompt == "p"
    assert records[0].variant_id == 1


def test_malformed_line_names_line_number(tmp_path):
    path = _write(tmp_path, [GOOD_SFT, "{not json", GOOD_SFT])
    with pytest.raises(SchemaMismatch) as excinfo:
        load_sft(path)
    assert "line 2" in str(excinfo.value)
    assert excinfo.value.problems[0][0] == 2


def test_missing_field_named(tmp_path):
    bad = json.dumps({"prompt": "p", "stage": "reasoning", "variant_id": 1})
    with pytest.raises(SchemaMismatch) as excinfo:
        load_sft(_write(tmp_path, [GOOD_SFT, GOOD_SFT, bad]))
    assert "line 3" in str(excinfo.value)
    assert "completion" in str(excinfo.value)


def test_wrong_type_rejected(tmp_path):
    bad = json.dumps({"prompt": "p", "completion": "c", "stage": "reasoning",
                      "variant_id": "one"})
    with pytest.raises(SchemaMismatch):
        load_sft(_write(tmp_path, [bad]))


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with pytest.raises(EmptyDataset):
        load_sft(path)
    path.write_text("\n\n")
    with pytest.raises(EmptyDataset):
        load_pairs(path)


def test_degenerate_pair_rejected(tmp_path):
    bad = json.dumps({"prompt": "p", "chosen": "same", "rejected": "same",
                      "stage": "reasoning", "variant_id": 2})
    with pytest.raises(SchemaMismatch) as excinfo:
        load_pairs(_write(tmp_path, [GOOD_PAIR, bad]))
    assert "line 2" in str(excinfo.value)
    assert "chosen == rejected" in str(excinfo.value)


def test_load_pairs_round_trip(tmp_path):
    records = load_pairs(_write(tmp_path, [GOOD_PAIR]))
    assert records[0].chosen == "a"
    assert records[0].rejected == "b"
