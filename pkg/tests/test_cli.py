import json

import pytest

from hopqa import save_corpus, save_questions
from hopqa.cli import ENV_BACKEND_URL, main

from conftest import build_curator_world, write_curator_script


WIKI2_RECORDS = [
    {
        "_id": "w1",
        "question": "Who founded the publisher of Magazine A?",
        "answer": "Ada",
        "context": [
            ["Magazine A", ["Magazine A is published by House B."]],
            ["House B", ["House B was founded by Ada."]],
        ],
        "supporting_facts": [["Magazine A", 0], ["House B", 0]],
    },
    {
        "_id": "w2",
        "question": "Where is House B based?",
        "answer": "Paris",
        "context": [
            ["House B", ["House B was founded by Ada."]],
            ["City C", ["City C hosts House B headquarters in Paris."]],
        ],
        "supporting_facts": [["City C", 0]],
    },
]


def ingest_setup(tmp_path):
    raw = tmp_path / "raw.json"
    raw.write_text(json.dumps(WIKI2_RECORDS), encoding="utf-8")
    config = tmp_path / "ingest.json"
    config.write_text(json.dumps({
        "dataset": "2wikimultihopqa",
        "files": {"questions": str(raw)},
    }), encoding="utf-8")
    return config


def test_ingest_writes_artifacts(tmp_path, capsys):
    config = ingest_setup(tmp_path)
    out = tmp_path / "kb"
    assert main(["ingest", "--config", str(config), "--out", str(out)]) == 0
    assert (out / "corpus.jsonl").exists()
    assert (out / "questions.jsonl").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["dataset"] == "2wikimultihopqa"
    assert manifest["questions"] == 2
    assert manifest["paragraphs"] == 3
    assert set(manifest["sources"]) == {"questions"}
    assert len(manifest["corpus_sha256"]) == 64
    assert "ingested 2 questions / 3 paragraphs" in capsys.readouterr().out


def test_ingest_rerun_identical_hashes(tmp_path):
    config = ingest_setup(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["ingest", "--config", str(config), "--out", str(out_a)]) == 0
    assert main(["ingest", "--config", str(config), "--out", str(out_b)]) == 0
    m_a = json.loads((out_a / "manifest.json").read_text())
    m_b = json.loads((out_b / "manifest.json").read_text())
    assert m_a == m_b
    assert (out_a / "corpus.jsonl").read_bytes() == (out_b / "corpus.jsonl").read_bytes()


def test_ingest_missing_file_names_path(tmp_path, capsys):
    config = tmp_path / "ingest.json"
    config.write_text(json.dumps({
        "dataset": "2wikimultihopqa",
        "files": {"questions": str(tmp_path / "absent.json")},
    }), encoding="utf-8")
    assert main(["ingest", "--config", str(config), "--out", str(tmp_path / "kb")]) == 1
    assert "absent.json" in capsys.readouterr().err


def test_ingest_unknown_dataset(tmp_path, capsys):
    config = tmp_path / "ingest.json"
    config.write_text(json.dumps({"dataset": "nq", "files": {}}), encoding="utf-8")
    assert main(["ingest", "--config", str(config), "--out", str(tmp_path / "kb")]) == 1
    assert "nq" in capsys.readouterr().err


def world_setup(tmp_path):
    world = build_curator_world()
    save_corpus(world.corpus, tmp_path / "corpus.jsonl")
    save_questions(world.questions, tmp_path / "questions.jsonl")
    script = tmp_path / "script.json"
    write_curator_script(world, script)
    return world, script


def write_run_config(tmp_path, script, **overrides):
    cfg = {
        "dataset": "2wikimultihopqa",
        "corpus": str(tmp_path / "corpus.jsonl"),
        "questions": str(tmp_path / "questions.jsonl"),
        "backend": {"mock": str(script)},
        "framework": "react",
        "decoder": {"kind": "standard"},
        "seeds": [1234],
        "sample_size": 5,
    }
    cfg.update(overrides)
    path = tmp_path / "run_config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def test_run_fans_out_over_seeds(tmp_path, capsys):
    _, script = world_setup(tmp_path)
    config = write_run_config(tmp_path, script, seeds=[1234, 3782, 9539])
    out = tmp_path / "runs"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    for seed in (1234, 3782, 9539):
        cell = out / f"react_standard_{seed}"
        assert (cell / "run.json").exists()
        assert (cell / "traces.jsonl").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["artifacts"]) == 6
    printed = capsys.readouterr().out
    assert "ran react_standard_1234: answer_f1=1.0000" in printed


def test_run_rerun_byte_identical(tmp_path):
    _, script = world_setup(tmp_path)
    config = write_run_config(tmp_path, script)
    out_a, out_b = tmp_path / "ra", tmp_path / "rb"
    assert main(["run", "--config", str(config), "--out", str(out_a)]) == 0
    assert main(["run", "--config", str(config), "--out", str(out_b)]) == 0
    cell = "react_standard_1234"
    for name in ("run.json", "traces.jsonl"):
        assert (out_a / cell / name).read_bytes() == (out_b / cell / name).read_bytes()
    assert json.loads((out_a / "manifest.json").read_text()) == \
        json.loads((out_b / "manifest.json").read_text())


def test_run_capability_mismatch_fails_fast(tmp_path, capsys):
    _, script = world_setup(tmp_path)
    spec = json.loads(script.read_text())
    spec["capabilities"] = {"layer_logits": False}
    script.write_text(json.dumps(spec), encoding="utf-8")
    config = write_run_config(tmp_path, script,
                              decoder={"kind": "dola", "candidate_layers": [0]})
    out = tmp_path / "runs"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 1
    assert "layer" in capsys.readouterr().err
    assert not (out / "react_dola_1234").exists()


def test_run_missing_backend_config(tmp_path, capsys):
    world_setup(tmp_path)
    config = tmp_path / "run_config.json"
    config.write_text(json.dumps({
        "dataset": "2wikimultihopqa",
        "corpus": str(tmp_path / "corpus.jsonl"),
        "questions": str(tmp_path / "questions.jsonl"),
        "framework": "react",
        "decoder": {"kind": "standard"},
        "seeds": [1234],
        "sample_size": 5,
    }), encoding="utf-8")
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "runs")]) == 1
    assert "backend" in capsys.readouterr().err


def test_env_backend_url_unreachable_is_runtime_failure(tmp_path, monkeypatch, capsys):
    _, script = world_setup(tmp_path)
    config = write_run_config(tmp_path, script)
    monkeypatch.setenv(ENV_BACKEND_URL, "http://127.0.0.1:9")
    code = main(["run", "--config", str(config), "--out", str(tmp_path / "runs")])
    assert code == 2
    assert "backend failure" in capsys.readouterr().err


def test_report_over_three_seeds(tmp_path, capsys):
    _, script = world_setup(tmp_path)
    config = write_run_config(tmp_path, script, seeds=[1234, 3782, 9539])
    runs = tmp_path / "runs"
    assert main(["run", "--config", str(config), "--out", str(runs)]) == 0
    capsys.readouterr()
    out = tmp_path / "report"
    assert main(["report", str(runs), "--out", str(out)]) == 0
    markdown = (out / "report.md").read_text()
    assert "# Report: 2wikimultihopqa" in markdown
    assert "| Framework | Decoding | 2wikimultihopqa |" in markdown
    assert "**100.0 ± 0.0**" in markdown
    report = json.loads((out / "report.json").read_text())
    assert report["format"] == "report-v1"
    (row,) = report["metrics"]["answer_f1"]
    assert row["n_runs"] == 3
    assert "| Framework | Decoding |" in capsys.readouterr().out


def test_report_refuses_mixed_datasets(tmp_path, capsys):
    _, script = world_setup(tmp_path)
    runs_a = tmp_path / "runs_a"
    runs_b = tmp_path / "runs_b"
    config_a = write_run_config(tmp_path, script)
    assert main(["run", "--config", str(config_a), "--out", str(runs_a)]) == 0
    config_b = write_run_config(tmp_path, script, dataset="musique")
    assert main(["run", "--config", str(config_b), "--out", str(runs_b)]) == 0
    code = main(["report", str(runs_a), str(runs_b), "--out", str(tmp_path / "report")])
    assert code == 1
    assert "datasets" in capsys.readouterr().err


def test_report_single_run_flags_n_runs(tmp_path):
    _, script = world_setup(tmp_path)
    config = write_run_config(tmp_path, script)
    runs = tmp_path / "runs"
    assert main(["run", "--config", str(config), "--out", str(runs)]) == 0
    out = tmp_path / "report"
    assert main(["report", str(runs / "react_standard_1234"), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert all(row["n_runs"] == 1
               for rows in report["metrics"].values() for row in rows)
    assert "_n_runs per cell: 1_" in (out / "report.md").read_text()


def test_report_empty_path_is_usage_error(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["report", str(empty), "--out", str(tmp_path / "r")]) == 1
    assert "no run.json" in capsys.readouterr().err


def test_bad_flags_exit_one(tmp_path, capsys):
    assert main(["run"]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["ingest", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "kb")]) == 1
    err = capsys.readouterr().err
    assert "error" in err
