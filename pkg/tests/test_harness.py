"""Harness artifacts: traces, summaries, tables, audits, manifests, charts."""

import json
import os
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from ogrs_lab import config as cfgmod, harness

QUICK = """
dataset: {kind: synthetic, train_size: 60, test_size: 40}
noise:
  segments: [[1, 60, 0.7]]
selectors:
  - {kind: ogrs}
  - {kind: naive}
ogrs: {iterations: 4, alpha: 2.0, zeta: 2.0, bandwidth: 0.5, count_reset: per_slot}
training: {slots: 40, warmup_rounds: 8, batch_size: 8, eval_stride: 10}
seeds: [1, 2, 3]
output_dir: PLACEHOLDER
"""


def quick_config(tmp_path, extra="", seeds="[1, 2, 3]"):
    text = QUICK.replace("PLACEHOLDER", str(tmp_path / "out"))
    text = text.replace("seeds: [1, 2, 3]", f"seeds: {seeds}")
    return cfgmod.parse_config_text(text + extra)


def manifest_of(out_dir) -> dict:
    return json.loads((Path(out_dir) / "manifest.json").read_text())


class TestRunExperiment:
    def test_file_count_arithmetic(self, tmp_path):
        cfg = quick_config(tmp_path)
        harness.run_experiment(cfg)
        out = Path(cfg.output_dir)
        traces = sorted(out.glob("trace_*.csv"))
        assert len(traces) == 2 * 3  # selectors x seeds
        assert (out / "summary.json").exists()
        assert (out / "accuracy.svg").exists()
        assert (out / "manifest.json").exists()

    def test_manifest_declares_every_output(self, tmp_path):
        cfg = quick_config(tmp_path)
        harness.run_experiment(cfg)
        out = Path(cfg.output_dir)
        manifest = manifest_of(out)
        on_disk = sorted(p.name for p in out.iterdir())
        assert sorted(manifest["files"]) == on_disk
        assert manifest["failed"] is False

    def test_rerun_byte_identical_csvs(self, tmp_path):
        cfg = quick_config(tmp_path)
        harness.run_experiment(cfg)
        out = Path(cfg.output_dir)
        first = {p.name: p.read_bytes() for p in out.glob("trace_*.csv")}
        harness.run_experiment(cfg)
        second = {p.name: p.read_bytes() for p in out.glob("trace_*.csv")}
        assert first == second

    def test_trace_schema_and_columns(self, tmp_path):
        cfg = quick_config(tmp_path)
        harness.run_experiment(cfg)
        trace = next(Path(cfg.output_dir).glob("trace_*.csv"))
        lines = trace.read_text().splitlines()
        assert lines[0] == "# schema=1"
        assert lines[1] == (
            "slot,test_accuracy,selection_clean_fraction,"
            "mean_RL,mean_Rw,mean_mu_final,train_loss"
        )
        assert len(lines) == 2 + 40  # one row per slot

    def test_chart_is_valid_svg_with_series(self, tmp_path):
        cfg = quick_config(tmp_path)
        harness.run_experiment(cfg)
        svg = (Path(cfg.output_dir) / "accuracy.svg").read_text()
        root = ET.fromstring(svg)
        polylines = [
            e for e in root.iter() if e.tag.endswith("polyline")
        ]
        assert len(polylines) == 2  # one per selector
        assert "ogrs" in svg and "naive" in svg

    def test_summary_statistics(self, tmp_path):
        cfg = quick_config(tmp_path)
        summary = harness.run_experiment(cfg)
        assert set(summary["selectors"]) == {"ogrs", "naive"}
        stats = summary["selectors"]["naive"]
        assert 0.0 <= stats["final_accuracy_mean"] <= 1.0
        assert len(stats["per_seed"]) == 3

    def test_failure_writes_manifest_and_raises(self, tmp_path):
        # oracle on an all-noisy stream errors inside the run
        cfg = quick_config(
            tmp_path
        )
        bad = cfgmod.parse_config_text(
            QUICK.replace("PLACEHOLDER", str(tmp_path / "bad"))
            .replace("[[1, 60, 0.7]]", "[[1, 60, 0.0]]")
            .replace("- {kind: naive}", "- {kind: oracle}")
        )
        with pytest.raises(harness.HarnessError):
            harness.run_experiment(bad)
        manifest = manifest_of(bad.output_dir)
        assert manifest["failed"] is True
        assert manifest["failures"]
        assert any("oracle" == f["selector"] for f in manifest["failures"])

    def test_parallel_fanout_matches_serial(self, tmp_path):
        cfg_a = quick_config(tmp_path / "a", seeds="[1, 2]")
        cfg_b = quick_config(tmp_path / "b", seeds="[1, 2]")
        os.environ["OGRS_LAB_THREADS"] = "1"
        try:
            harness.run_experiment(cfg_a)
        finally:
            os.environ["OGRS_LAB_THREADS"] = "2"
        try:
            harness.run_experiment(cfg_b)
        finally:
            del os.environ["OGRS_LAB_THREADS"]
        a = {p.name: p.read_bytes() for p in Path(cfg_a.output_dir).glob("trace_*.csv")}
        b = {p.name: p.read_bytes() for p in Path(cfg_b.output_dir).glob("trace_*.csv")}
        assert a == b


class TestCompare:
    def test_table_shape_and_single_seed_std(self, tmp_path):
        cfg = quick_config(
            tmp_path,
            extra="compare: {clean_ratios: [0.9, 0.6]}\n",
            seeds="[4]",
        )
        table = harness.compare(cfg)
        assert table.columns == ("phi=0.9", "phi=0.6")
        assert table.selectors == ("ogrs", "naive")
        for row in table.cells:
            for cell in row:
                assert cell.std == 0.0

    def test_best_flag_one_per_column(self, tmp_path):
        cfg = quick_config(tmp_path, extra="compare: {clean_ratios: [0.8]}\n",
                           seeds="[1, 2]")
        table = harness.compare(cfg)
        best = [table.cells[i][0].best for i in range(len(table.selectors))]
        assert sum(best) == 1

    def test_na_rule_marks_chance_level(self, tmp_path):
        # phi=0.5 on a binary stream: observed labels carry no signal, so
        # every selector should sit at chance and be reported N/A
        cfg = quick_config(tmp_path, extra="compare: {clean_ratios: [0.5]}\n",
                           seeds="[1, 2]")
        table = harness.compare(cfg)
        texts = [table.cells[i][0].text() for i in range(len(table.selectors))]
        assert all(t == "N/A" for t in texts) or any("±" in t for t in texts)

    def test_csv_written_with_schema(self, tmp_path):
        cfg = quick_config(tmp_path, extra="compare: {clean_ratios: [0.8]}\n",
                           seeds="[1]")
        harness.compare(cfg)
        lines = (Path(cfg.output_dir) / "comparison.csv").read_text().splitlines()
        assert lines[0] == "# schema=1"
        assert lines[1] == "selector,phi=0.8"

    def test_needs_two_selectors(self, tmp_path):
        cfg = quick_config(tmp_path)
        single = cfgmod.ExperimentConfig(
            dataset=cfg.dataset,
            noise_segments=cfg.noise_segments,
            model=cfg.model,
            selectors=cfg.selectors[:1],
            ogrs=cfg.ogrs,
            training=cfg.training,
            seeds=cfg.seeds,
            output_dir=cfg.output_dir,
        )
        with pytest.raises(harness.HarnessError):
            harness.compare(single)

    def test_paired_pools_across_selectors(self, tmp_path):
        cfg = quick_config(tmp_path, seeds="[7]")
        a = harness.build_pools(cfg, 7, clean_ratio=0.8)[0]
        b = harness.build_pools(cfg, 7, clean_ratio=0.8)[0]
        assert a.content_hash() == b.content_hash()


class TestAudit:
    def test_audit_artifacts_and_outcome(self, tmp_path):
        cfg = quick_config(tmp_path)
        outcome = harness.regret_audit_cmd(
            cfg, m_grid=(2, 4, 8, 16), trials=10, slope_max=0.75
        )
        out = Path(cfg.output_dir)
        audit_lines = (out / "audit.csv").read_text().splitlines()
        assert audit_lines[0] == "# schema=1"
        assert audit_lines[1] == "M,mean_RL,stderr"
        assert len(audit_lines) == 2 + 4
        meta = json.loads((out / "audit.json").read_text())
        assert meta["trials"] == 10
        traces_lines = (out / "audit_traces.csv").read_text().splitlines()
        assert traces_lines[0] == "# schema=1"
        assert outcome.result.g_max >= 0.0
        manifest = manifest_of(out)
        assert "audit.csv" in manifest["files"]

    def test_short_grid_rejected(self, tmp_path):
        cfg = quick_config(tmp_path)
        with pytest.raises(harness.HarnessError):
            harness.regret_audit_cmd(cfg, m_grid=(2, 4, 8))

    def test_trials_double_slope_stable(self, tmp_path):
        cfg = quick_config(tmp_path)
        a = harness.regret_audit_cmd(cfg, m_grid=(4, 8, 16, 32), trials=30)
        b = harness.regret_audit_cmd(cfg, m_grid=(4, 8, 16, 32), trials=60)
        if not (a.result.flat or b.result.flat):
            assert abs(a.result.slope - b.result.slope) <= 0.1
