import json
import sys

import pytest

from qeleak.core import RunConfig
from qeleak.errors import PipelineStateError
from qeleak.fixtures import toy_config, write_toy_config
from qeleak.pipeline import (
    STAGES,
    config_hash,
    load_manifest,
    run_all,
    run_lock,
    run_stage,
)


@pytest.fixture
def toy_small(tmp_path):
    """Toy fixture config shrunk to 2 repeats for fast pipeline tests."""
    return toy_config(repeats=2)


class TestStageOrdering:
    def test_fresh_run_ingest(self, toy_small, tmp_path):
        manifest = run_stage("ingest", toy_small, tmp_path / "run", mock=True)
        assert manifest.stage_completed("ingest")
        assert manifest.stage_stats("ingest")["claims"] == 30
        assert (tmp_path / "run" / "claims.jsonl").exists()

    def test_out_of_order_names_missing(self, toy_small, tmp_path):
        with pytest.raises(PipelineStateError) as exc:
            run_stage("report", toy_small, tmp_path / "run", mock=True)
        message = str(exc.value)
        for stage in STAGES[:-1]:
            assert stage in message

    def test_unknown_stage(self, toy_small, tmp_path):
        with pytest.raises(PipelineStateError):
            run_stage("bogus", toy_small, tmp_path / "run", mock=True)

    def test_rerun_completed_stage_is_noop(self, toy_small, tmp_path):
        run_stage("ingest", toy_small, tmp_path / "run", mock=True)
        before = (tmp_path / "run" / "claims.jsonl").stat().st_mtime_ns
        run_stage("ingest", toy_small, tmp_path / "run", mock=True)
        after = (tmp_path / "run" / "claims.jsonl").stat().st_mtime_ns
        assert before == after


class TestConfigDrift:
    def test_drift_without_force_rejected(self, toy_small, tmp_path):
        run_stage("ingest", toy_small, tmp_path / "run", mock=True)
        changed = toy_config(repeats=3)
        with pytest.raises(PipelineStateError, match="--force"):
            run_stage("index", changed, tmp_path / "run", mock=True)

    def test_drift_with_force_accepted_and_invalidates_downstream(
        self, toy_small, tmp_path
    ):
        run_dir = tmp_path / "run"
        for stage in ("ingest", "index"):
            run_stage(stage, toy_small, run_dir, mock=True)
        changed = toy_config(repeats=3)
        manifest = run_stage("index", changed, run_dir, mock=True, force=True)
        assert manifest.config_hash == config_hash(changed)
        assert manifest.stage_completed("ingest")
        assert manifest.stage_completed("index")


class TestLock:
    def test_lock_excludes_second_owner(self, toy_small, tmp_path):
        run_dir = tmp_path / "run"
        run_dir.mkdir()
        with run_lock(run_dir):
            with pytest.raises(PipelineStateError, match="locked"):
                run_stage("ingest", toy_small, run_dir, mock=True)

    def test_lock_released_after_stage(self, toy_small, tmp_path):
        run_dir = tmp_path / "run"
        run_stage("ingest", toy_small, run_dir, mock=True)
        assert not (run_dir / "run.lock").exists()


class TestFullPipeline:
    def test_all_stages_complete(self, toy_small, tmp_path):
        manifest = run_all(toy_small, tmp_path / "run", mock=True,
                           cache_dir=str(tmp_path / "cache"))
        assert all(manifest.stage_completed(s) for s in STAGES)
        report = json.loads((tmp_path / "run" / "report.json").read_text())
        assert report["repeats"] == 2
        assert set(report["groups"]) == {"ALL", "M", "NOT_M"}

    def test_hyde_method_pipeline(self, tmp_path):
        config = toy_config(method="hyde", repeats=2)
        manifest = run_all(config, tmp_path / "run", mock=True,
                           cache_dir=str(tmp_path / "cache"))
        assert manifest.stage_stats("index")["kind"] == "dense"
        report = json.loads((tmp_path / "run" / "report.json").read_text())
        assert report["method"] == "hyde"

    def test_resume_after_partial(self, toy_small, tmp_path):
        run_dir = tmp_path / "run"
        for stage in ("ingest", "index", "expand"):
            run_stage(stage, toy_small, run_dir, mock=True)
        manifest = run_all(toy_small, run_dir, mock=True)
        assert all(manifest.stage_completed(s) for s in STAGES)


class TestCliEntry:
    def run_cli(self, monkeypatch, *argv):
        from qeleak.cli import main

        monkeypatch.setattr(sys, "argv", ["qeleak", *argv])
        return main()

    def test_usage_error_exit_1(self, monkeypatch, capsys):
        assert self.run_cli(monkeypatch, "ingest") == 1

    def test_data_error_exit_2(self, monkeypatch, tmp_path, capsys):
        bad_claims = tmp_path / "claims.jsonl"
        bad_claims.write_text("{not json\n")
        config = toy_config(claims_path=str(bad_claims))
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config.as_dict()))
        code = self.run_cli(
            monkeypatch, "ingest", "--config", str(config_path),
            "--run-dir", str(tmp_path / "run"), "--mock",
        )
        assert code == 2

    def test_missing_endpoint_exit_2(self, monkeypatch, tmp_path):
        # no endpoint configured and no --mock: expand stage needs a provider
        config_path = write_toy_config(tmp_path / "config.json", repeats=1)
        for stage in ("ingest", "index"):
            code = self.run_cli(
                monkeypatch, stage, "--config", str(config_path),
                "--run-dir", str(tmp_path / "run"), "--mock",
            )
            assert code == 0
        code = self.run_cli(
            monkeypatch, "expand", "--config", str(config_path),
            "--run-dir", str(tmp_path / "run"),
        )
        assert code == 2  # missing endpoint is a config (data) problem

    def test_provider_error_exit_3(self, monkeypatch, tmp_path):
        import requests

        def refuse(*args, **kwargs):
            raise requests.ConnectionError("connection refused")

        monkeypatch.setattr(requests, "post", refuse)
        config_path = write_toy_config(
            tmp_path / "config.json", repeats=1, base_url="http://127.0.0.1:9"
        )
        for stage in ("ingest", "index"):
            code = self.run_cli(
                monkeypatch, stage, "--config", str(config_path),
                "--run-dir", str(tmp_path / "run"), "--mock",
            )
            assert code == 0
        code = self.run_cli(
            monkeypatch, "expand", "--config", str(config_path),
            "--run-dir", str(tmp_path / "run"),
        )
        assert code == 3

    def test_pipeline_state_error_exit_1(self, monkeypatch, tmp_path):
        config_path = write_toy_config(tmp_path / "config.json")
        code = self.run_cli(
            monkeypatch, "report", "--config", str(config_path),
            "--run-dir", str(tmp_path / "run"), "--mock",
        )
        assert code == 1

    def test_ok_exit_0(self, monkeypatch, tmp_path):
        config_path = write_toy_config(tmp_path / "config.json", repeats=1)
        code = self.run_cli(
            monkeypatch, "ingest", "--config", str(config_path),
            "--run-dir", str(tmp_path / "run"), "--mock",
        )
        assert code == 0

    def test_flag_overrides_config(self, monkeypatch, tmp_path):
        config_path = write_toy_config(tmp_path / "config.json")
        code = self.run_cli(
            monkeypatch, "ingest", "--config", str(config_path),
            "--run-dir", str(tmp_path / "run"), "--mock", "--repeats", "2",
        )
        assert code == 0
        manifest = load_manifest(tmp_path / "run")
        assert manifest.config["repeats"] == 2


class TestTextModePipeline:
    def make_dataset(self, tmp_path):
        docs = [
            {"doc_id": f"d{i}", "title": None,
             "text": f"Archive entry {i} covers topic{i} and region{i} affairs."}
            for i in range(12)
        ]
        claims = []
        for i in range(4):
            claims.append({
                "id": f"c{i}",
                "claim": f"Topic{i} affairs changed in region{i} this year.",
                "label": ["supported", "refuted"][i % 2],
                "evidence": [{"text": f"Archive entry {i} covers topic{i} and "
                                       f"region{i} affairs."}],
            })
        claims_path = tmp_path / "claims.jsonl"
        corpus_path = tmp_path / "corpus.jsonl"
        claims_path.write_text("".join(json.dumps(c) + "\n" for c in claims))
        corpus_path.write_text("".join(json.dumps(d) + "\n" for d in docs))
        return claims_path, corpus_path

    def test_free_text_evidence_reports_meteor_and_bertscore(self, tmp_path):
        claims_path, corpus_path = self.make_dataset(tmp_path)
        config = RunConfig(
            method="query2doc", repeats=2, k=3, seed=3,
            claims_path=str(claims_path), corpus_path=str(corpus_path),
            text_scorers=("meteor", "bertscore"),
        )
        run_all(config, tmp_path / "run", mock=True)
        report = json.loads((tmp_path / "run" / "report.json").read_text())
        assert report["eval_mode"] == "text"
        assert report["metrics"] == ["METEOR", "BERTScore", "F1"]
        all_group = report["groups"]["ALL"]
        assert 0.0 <= all_group["METEOR"]["mean"] <= 1.0
        assert 0.0 <= all_group["BERTScore"]["mean"] <= 1.0
        assert "METEOR" in report["baseline"]


class TestIngestDropsUnresolved:
    def test_dangling_evidence_dropped(self, tmp_path):
        claims = tmp_path / "claims.jsonl"
        corpus = tmp_path / "corpus.jsonl"
        claims.write_text(
            json.dumps({"id": "c1", "claim": "X.", "label": None,
                        "evidence": [{"doc_id": "d1"}, {"doc_id": "ghost"}]}) + "\n" +
            json.dumps({"id": "c2", "claim": "Y.", "label": None,
                        "evidence": [{"doc_id": "ghost"}]}) + "\n"
        )
        corpus.write_text(json.dumps({"doc_id": "d1", "text": "alpha"}) + "\n")
        config = RunConfig(claims_path=str(claims), corpus_path=str(corpus))
        manifest = run_stage("ingest", config, tmp_path / "run", mock=True)
        stats = manifest.stage_stats("ingest")
        assert stats["claims"] == 1
        assert stats["dangling_refs"] == 2
        assert stats["dropped_unresolved"] == 1
