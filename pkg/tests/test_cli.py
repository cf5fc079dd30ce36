"""Command line behavior: JSON stdout, stable stderr error lines, exit codes.

Each command prints exactly one sorted-key JSON document per result line, so
the tests parse stdout rather than pattern-match it. Domain failures must
exit 2 with a single "error: <ClassName>: <message>" line on stderr.
"""
from __future__ import annotations

import json
import math

import pytest
from click.testing import CliRunner

from orthobrake.cli import main

from conftest import make_meta_doc, make_site_doc


@pytest.fixture
def runner():
    return CliRunner()


def _write_pairs(path, pairs):
    doc = {
        "schema_version": 1,
        "site_id": "site-a",
        "camera_image_ref": "cam.png",
        "ortho_ref": "ortho.png",
        "pairs": [
            {"id": i + 1, "cam": [float(u), float(v)], "ortho": [float(x), float(y)]}
            for i, (u, v, x, y) in enumerate(pairs)
        ],
    }
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def _translation_pairs(n=12):
    return [
        (50.0 + 91.0 * i, 40.0 + 53.0 * ((i * 5) % 11),
         50.0 + 91.0 * i + 5.0, 40.0 + 53.0 * ((i * 5) % 11) - 3.0)
        for i in range(n)
    ]


@pytest.fixture
def ingested(tmp_path, runner, clean_scenario):
    """Store dir with one site and one ingested video, via the CLI itself."""
    site_path = tmp_path / "site.json"
    site_path.write_text(json.dumps(make_site_doc(clean_scenario)), encoding="utf-8")
    det_path = tmp_path / "video.ndjson"
    det_path.write_text("\n".join(clean_scenario.detections) + "\n", encoding="utf-8")
    meta_path = tmp_path / "meta.json"
    meta_path.write_text(json.dumps(make_meta_doc(clean_scenario)), encoding="utf-8")
    store_dir = tmp_path / "store"
    res = runner.invoke(main, [
        "ingest", "--site-config", str(site_path), "--store", str(store_dir),
        "--detections", str(det_path), "--meta", str(meta_path),
    ])
    assert res.exit_code == 0, res.output
    return store_dir, json.loads(res.stdout)


# -- estimate ----------------------------------------------------------------------


class TestEstimate:
    def test_prints_result_and_repeats_exactly(self, tmp_path, runner):
        pairs = _write_pairs(tmp_path / "pairs.json", _translation_pairs())
        first = runner.invoke(main, ["estimate", "--pairs", str(pairs), "--seed", "7"])
        assert first.exit_code == 0, first.output
        doc = json.loads(first.stdout)
        assert doc["seed"] == 7
        assert doc["inlier_count"] == 12
        assert doc["mean_inlier_error"] < 1e-9
        norm = math.sqrt(1 + 1 + 25 + 9 + 1)
        assert doc["h"][0] == pytest.approx(1.0 / norm, abs=1e-12)

        second = runner.invoke(main, ["estimate", "--pairs", str(pairs), "--seed", "7"])
        assert second.stdout == first.stdout

    def test_out_file_matches_stdout(self, tmp_path, runner):
        pairs = _write_pairs(tmp_path / "pairs.json", _translation_pairs())
        out = tmp_path / "fit.json"
        res = runner.invoke(main, [
            "estimate", "--pairs", str(pairs), "--seed", "3", "--out", str(out),
        ])
        assert res.exit_code == 0
        assert json.loads(out.read_text()) == json.loads(res.stdout)

    def test_schema_version_failure_is_clean(self, tmp_path, runner):
        pairs = _write_pairs(tmp_path / "pairs.json", _translation_pairs())
        doc = json.loads(pairs.read_text())
        doc["schema_version"] = 99
        pairs.write_text(json.dumps(doc), encoding="utf-8")
        res = runner.invoke(main, ["estimate", "--pairs", str(pairs)])
        assert res.exit_code == 2
        assert res.stderr.startswith("error: SchemaVersionError:")
        assert res.stdout == ""


# -- ingest / detect / export / report ------------------------------------------------


class TestIngestFlow:
    def test_summary_line(self, ingested):
        _, summary = ingested
        assert summary["video_id"] == "synth-approach"
        assert summary["events"] == 1
        assert summary["events_by_severity"] == {"moderate": 1}

    def test_site_config_upserts_site(self, ingested, runner, tmp_path):
        store_dir, _ = ingested
        out = tmp_path / "sites.ndjson"
        res = runner.invoke(main, [
            "export", "--store", str(store_dir), "--table", "sites",
            "--out", str(out),
        ])
        assert json.loads(res.stdout) == {
            "table": "sites", "rows": 1, "out": str(out),
        }
        row = json.loads(out.read_text().splitlines()[0])
        assert row["site_id"] == "site-a"

    def test_export_events(self, ingested, runner, tmp_path):
        store_dir, _ = ingested
        out = tmp_path / "events.ndjson"
        res = runner.invoke(main, [
            "export", "--store", str(store_dir), "--table", "events",
            "--out", str(out),
        ])
        assert json.loads(res.stdout)["rows"] == 1
        assert json.loads(out.read_text().splitlines()[0])["severity"] == "moderate"

    def test_detect_recomputes(self, ingested, runner):
        store_dir, _ = ingested
        res = runner.invoke(main, [
            "detect", "--site", "site-a", "--store", str(store_dir),
        ])
        assert res.exit_code == 0, res.output
        doc = json.loads(res.stdout)
        assert doc["trajectories"] == 1
        assert doc["events"] == 1

    def test_detect_unknown_site(self, ingested, runner):
        store_dir, _ = ingested
        res = runner.invoke(main, [
            "detect", "--site", "ghost", "--store", str(store_dir),
        ])
        assert res.exit_code == 2
        assert res.stderr.startswith("error: ConfigError:")
        assert "ghost" in res.stderr

    def test_unpaired_inputs_rejected(self, ingested, runner, tmp_path):
        store_dir, _ = ingested
        det = tmp_path / "video.ndjson"
        meta = tmp_path / "meta.json"
        res = runner.invoke(main, [
            "ingest", "--site", "site-a", "--store", str(store_dir),
            "--detections", str(det), "--detections", str(det),
            "--meta", str(meta),
        ])
        assert res.exit_code == 2
        assert res.stderr.startswith("error: ConfigError:")
        assert "pairs" in res.stderr

    def test_site_flag_must_match_config(self, ingested, runner, tmp_path):
        store_dir, _ = ingested
        res = runner.invoke(main, [
            "ingest", "--site", "other", "--site-config", str(tmp_path / "site.json"),
            "--store", str(store_dir),
            "--detections", str(tmp_path / "video.ndjson"),
            "--meta", str(tmp_path / "meta.json"),
        ])
        assert res.exit_code == 2
        assert res.stderr.startswith("error: ConfigError:")


class TestReport:
    def test_writes_all_products(self, ingested, runner, tmp_path):
        store_dir, _ = ingested
        out = tmp_path / "reports"
        res = runner.invoke(main, [
            "report", "--site", "site-a", "--store", str(store_dir),
            "--out", str(out),
        ])
        assert res.exit_code == 0, res.output
        written = json.loads(res.stdout)["written"]
        assert len(written) == 5
        assert all(p.endswith(".csv") for p in written)

        before = (out / "heatmap.csv").read_bytes()
        rerun = runner.invoke(main, [
            "report", "--site", "site-a", "--store", str(store_dir),
            "--out", str(out),
        ])
        assert rerun.exit_code == 0
        assert (out / "heatmap.csv").read_bytes() == before

    def test_single_json_product(self, ingested, runner, tmp_path):
        store_dir, _ = ingested
        out = tmp_path / "reports"
        res = runner.invoke(main, [
            "report", "--site", "site-a", "--store", str(store_dir),
            "--product", "rstart-ecdf", "--format", "json", "--out", str(out),
            "--hours", "7-19",
        ])
        written = json.loads(res.stdout)["written"]
        assert len(written) == 1 and written[0].endswith("rstart-ecdf.json")
        body = json.loads((out / "rstart-ecdf.json").read_text())
        assert body["cdf"] == [1.0]

    def test_inverted_hours(self, ingested, runner, tmp_path):
        store_dir, _ = ingested
        res = runner.invoke(main, [
            "report", "--site", "site-a", "--store", str(store_dir),
            "--hours", "19-7", "--out", str(tmp_path / "r"),
        ])
        assert res.exit_code == 2
        assert res.stderr.startswith("error: ValidationError:")
        assert "out of range" in res.stderr

    def test_malformed_hours(self, ingested, runner, tmp_path):
        store_dir, _ = ingested
        res = runner.invoke(main, [
            "report", "--site", "site-a", "--store", str(store_dir),
            "--hours", "business", "--out", str(tmp_path / "r"),
        ])
        assert res.exit_code == 2
        assert "LO-HI" in res.stderr


# -- argument parsing ------------------------------------------------------------------


class TestFetchOrthoArgs:
    def test_bad_bbox(self, runner, tmp_path):
        res = runner.invoke(main, [
            "fetch-ortho", "--bbox", "1,2,3", "--size", "10x10",
            "--endpoint", "http://127.0.0.1:9/img", "--out", str(tmp_path / "o.png"),
        ])
        assert res.exit_code == 2
        assert res.stderr.startswith("error: ValidationError:")
        assert "minlon,minlat,maxlon,maxlat" in res.stderr

    def test_bad_size(self, runner, tmp_path):
        res = runner.invoke(main, [
            "fetch-ortho", "--bbox", "0,0,10,10", "--size", "200",
            "--endpoint", "http://127.0.0.1:9/img", "--out", str(tmp_path / "o.png"),
        ])
        assert res.exit_code == 2
        assert "WIDTHxHEIGHT" in res.stderr

    def test_missing_endpoint(self, runner, tmp_path):
        res = runner.invoke(main, [
            "fetch-ortho", "--bbox", "0,0,10,10", "--size", "10x10",
            "--out", str(tmp_path / "o.png"),
        ])
        assert res.exit_code == 2
        assert res.stderr.startswith("error: ConfigError:")
