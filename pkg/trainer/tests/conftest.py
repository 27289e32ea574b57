import json

import pytest
import yaml


@pytest.fixture(scope="session")
def exported_datasets(tmp_path_factory):
    """Datasets produced by the upstream pipeline, consumed here as files only."""
    from click.testing import CliRunner

    from eerdkit.cli import main
    from eerdkit.fixtures import fixture_text

    root = tmp_path_factory.mktemp("pipeline")
    for name in ("company", "hospital"):
        (root / f"{name}.json").write_text(fixture_text(f"{name}.json"))
        (root / f"{name}_rubrics.json").write_text(fixture_text(f"{name}_rubrics.json"))
    (root / "pipeline.yaml").write_text(yaml.safe_dump({
        "seed": 3,
        "schemas": {"train": ["company.json"], "test": ["hospital.json"]},
        "rubrics": {"company": "company_rubrics.json",
                    "hospital": "hospital_rubrics.json"},
        "plan": {1: 4, 2: 4, 3: 4},
        "rejected_source": "initial_trace",
        "output_dir": "out",
    }))
    runner = CliRunner()
    for cmd in ("forge", "refine", "export"):
        result = runner.invoke(main, ["--config", str(root / "pipeline.yaml"), cmd])
        assert result.exit_code == 0, (cmd, result.output)
    return root / "out" / "datasets"


@pytest.fixture()
def tiny_sft_file(tmp_path):
    """A hand-written SFT file small enough for fast unit runs."""
    path = tmp_path / "sft.jsonl"
    rows = [
        {"prompt": f"analyze design {i}:", "completion": f"finding {i} is cardinality.",
         "stage": "reasoning", "variant_id": i}
        for i in range(1, 13)
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return path


@pytest.fixture()
def tiny_pairs_file(tmp_path):
    path = tmp_path / "pairs.jsonl"
    rows = [
        {"prompt": f"analyze design {i}:", "chosen": f"finding {i} is cardinality.",
         "rejected": f"everything about {i} looks fine.",
         "stage": "reasoning", "variant_id": i}
        for i in range(1, 13)
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return path
