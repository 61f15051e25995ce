import json

import pytest

from streamst import cli
from streamst.harness import EmissionLog, load_manifest, read_log, run_stream, write_log
from streamst.metrics import REPORT_COLUMNS, stream_laal
from streamst.mock import MockModel, load_scenario
from streamst.policy import PolicyConfig


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    rc = cli.main(["make-scenario", str(out), "--words", "18",
                   "--frames", "150", "--segments", "2", "--seed", "11"])
    assert rc == 0
    return out


def test_make_scenario_writes_scenario_and_manifest(corpus_dir):
    scenario = load_scenario(corpus_dir / "scenario.json")
    manifest = load_manifest(corpus_dir / "manifest.json")
    assert len(scenario.words) == 18
    assert manifest.features == "scenario"
    assert manifest.total_duration_ms == 150 * scenario.frame_duration_ms
    assert len(manifest.segments) == 2
    # the segment references jointly spell the script
    joined = " ".join(seg.reference_text for seg in manifest.segments)
    assert joined == " ".join(w.surface for w in scenario.words)


def test_make_scenario_rejects_more_segments_than_words(tmp_path, capsys):
    rc = cli.main(["make-scenario", str(tmp_path), "--words", "3",
                   "--frames", "40", "--segments", "9"])
    assert rc == 2
    assert "segments" in capsys.readouterr().err


def test_simulate_then_score_chain(corpus_dir, tmp_path, capsys):
    log_path = tmp_path / "log.jsonl"
    rc = cli.main(["simulate", str(corpus_dir / "manifest.json"),
                   "--model", f"mock:{corpus_dir / 'scenario.json'}",
                   "--out", str(log_path)])
    assert rc == 0
    assert "emission events" in capsys.readouterr().out

    report = tmp_path / "report.tsv"
    hyp = tmp_path / "hyp.txt"
    rc = cli.main(["score", str(log_path), str(corpus_dir / "manifest.json"),
                   "--out", str(report), "--hyp-out", str(hyp),
                   "--per-segment"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "\tnca\tstream_laal_ms=" in out
    assert "\tca\tstream_laal_ms=" in out

    lines = report.read_text().splitlines()
    assert lines[0] == "\t".join(REPORT_COLUMNS)
    # 2 aggregate rows + 2 modes x 2 segments
    assert len(lines) == 1 + 2 + 4
    assert hyp.read_text().count("\n") == 2


def test_simulate_flush_recovers_whole_script(corpus_dir, tmp_path, capsys):
    log_path = tmp_path / "log.jsonl"
    rc = cli.main(["simulate", str(corpus_dir / "manifest.json"),
                   "--model", f"mock:{corpus_dir / 'scenario.json'}",
                   "--out", str(log_path), "--f", "0"])
    assert rc == 0
    capsys.readouterr()
    scenario = load_scenario(corpus_dir / "scenario.json")
    log = read_log(log_path)
    assert log.full_text() == " ".join(w.surface for w in scenario.words)


def test_cli_log_matches_library_run(corpus_dir, tmp_path, capsys):
    argv_log = tmp_path / "cli.jsonl"
    rc = cli.main(["simulate", str(corpus_dir / "manifest.json"),
                   "--model", f"mock:{corpus_dir / 'scenario.json'}",
                   "--out", str(argv_log), "--f", "3", "--chunk-ms", "800",
                   "--history", "punct", "--n-words", "12",
                   "--ms-per-word", "300"])
    assert rc == 0
    capsys.readouterr()

    manifest = load_manifest(corpus_dir / "manifest.json")
    model = MockModel(load_scenario(corpus_dir / "scenario.json"))
    config = PolicyConfig(f=3, chunk_ms=800.0, n_words=12,
                          history_mode="punctuation",
                          ms_per_word_baseline=300.0)
    lib_log = tmp_path / "lib.jsonl"
    write_log(run_stream(manifest, model, config), lib_log)
    assert argv_log.read_bytes() == lib_log.read_bytes()


def test_score_single_mode_report(corpus_dir, tmp_path, capsys):
    log_path = tmp_path / "log.jsonl"
    cli.main(["simulate", str(corpus_dir / "manifest.json"),
              "--model", f"mock:{corpus_dir / 'scenario.json'}",
              "--out", str(log_path)])
    report = tmp_path / "report.tsv"
    rc = cli.main(["score", str(log_path), str(corpus_dir / "manifest.json"),
                   "--mode", "nca", "--out", str(report)])
    assert rc == 0
    out_lines = [l for l in capsys.readouterr().out.splitlines()
                 if "stream_laal_ms=" in l]
    assert len(out_lines) == 1 and "\tnca\t" in out_lines[0]
    rows = [l.split("\t") for l in report.read_text().splitlines()[1:]]
    assert [r[1] for r in rows] == ["nca"]


def test_score_empty_log_warns(corpus_dir, tmp_path, capsys):
    log_path = tmp_path / "empty.jsonl"
    write_log(EmissionLog("mock_talk", {}, []), log_path)
    report = tmp_path / "report.tsv"
    rc = cli.main(["score", str(log_path), str(corpus_dir / "manifest.json"),
                   "--out", str(report)])
    assert rc == 0
    captured = capsys.readouterr()
    assert "no emission events" in captured.err
    assert "stream_laal_ms=0.0" in captured.out


def test_sweep_singleton_matches_direct_score(corpus_dir, tmp_path, capsys):
    sweep_out = tmp_path / "sweep.tsv"
    rc = cli.main(["sweep", str(corpus_dir / "manifest.json"),
                   "--model", f"mock:{corpus_dir / 'scenario.json'}",
                   "--f-values", "4", "--n-words-values", "20",
                   "--histories", "fw", "--mode", "nca",
                   "--out", str(sweep_out)])
    assert rc == 0
    capsys.readouterr()
    lines = sweep_out.read_text().splitlines()
    assert lines[0].split("\t") == ["history", "f", "n_words", "mode",
                                    "stream_laal_ms", "status"]
    assert len(lines) == 2
    history, f, n_words, mode, value, status = lines[1].split("\t")
    assert (history, f, n_words, mode, status) == ("fw", "4", "20", "nca", "ok")

    manifest = load_manifest(corpus_dir / "manifest.json")
    model = MockModel(load_scenario(corpus_dir / "scenario.json"))
    log = run_stream(manifest, model, PolicyConfig())
    assert float(value) == stream_laal(log, manifest, "nca")


def test_sweep_jobs_do_not_change_output(corpus_dir, tmp_path, capsys):
    args = ["sweep", str(corpus_dir / "manifest.json"),
            "--model", f"mock:{corpus_dir / 'scenario.json'}",
            "--f-values", "2", "6", "--n-words-values", "10", "20",
            "--histories", "fw", "punct"]
    serial = tmp_path / "serial.tsv"
    parallel = tmp_path / "parallel.tsv"
    assert cli.main(args + ["--out", str(serial), "--jobs", "1"]) == 0
    assert cli.main(args + ["--out", str(parallel), "--jobs", "4"]) == 0
    capsys.readouterr()
    assert serial.read_bytes() == parallel.read_bytes()
    # full grid: 2 histories x 2 f x 2 n_words x 2 modes
    assert len(serial.read_text().splitlines()) == 1 + 16


def test_sweep_writes_to_stdout_without_out(corpus_dir, capsys):
    rc = cli.main(["sweep", str(corpus_dir / "manifest.json"),
                   "--model", f"mock:{corpus_dir / 'scenario.json'}",
                   "--f-values", "4", "--n-words-values", "20",
                   "--histories", "fw", "--mode", "ca"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.startswith("history\tf\tn_words\tmode\tstream_laal_ms\tstatus")


def test_sweep_empty_value_list_is_usage_error(corpus_dir, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep", str(corpus_dir / "manifest.json"),
                  "--model", "mock:x", "--f-values"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_exit_2_missing_manifest(tmp_path, capsys):
    rc = cli.main(["simulate", str(tmp_path / "nope.json"),
                   "--model", "mock:also_nope.json",
                   "--out", str(tmp_path / "log.jsonl")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_exit_2_unknown_model_scheme(corpus_dir, tmp_path, capsys):
    rc = cli.main(["simulate", str(corpus_dir / "manifest.json"),
                   "--model", "martian:probe",
                   "--out", str(tmp_path / "log.jsonl")])
    assert rc == 2
    assert "unknown model spec" in capsys.readouterr().err


def test_exit_2_corrupt_manifest(tmp_path, capsys):
    bad = tmp_path / "manifest.json"
    bad.write_text("{not json")
    rc = cli.main(["simulate", str(bad), "--model", "mock:x",
                   "--out", str(tmp_path / "log.jsonl")])
    assert rc == 2
    capsys.readouterr()


def test_exit_3_unreachable_bridge(corpus_dir, tmp_path, capsys):
    rc = cli.main(["simulate", str(corpus_dir / "manifest.json"),
                   "--model", "bridge:tcp:127.0.0.1:1",
                   "--out", str(tmp_path / "log.jsonl")])
    assert rc == 3
    assert "backend error:" in capsys.readouterr().err


def test_sweep_reports_transport_failures_with_exit_3(corpus_dir, tmp_path,
                                                      capsys):
    out = tmp_path / "sweep.tsv"
    rc = cli.main(["sweep", str(corpus_dir / "manifest.json"),
                   "--model", "bridge:tcp:127.0.0.1:1",
                   "--f-values", "4", "--n-words-values", "20",
                   "--histories", "fw", "--out", str(out)])
    assert rc == 3
    assert "failed" in capsys.readouterr().err
    line = out.read_text().splitlines()[1]
    assert "TransportError" in line


def test_sweep_keeps_going_past_bad_config(corpus_dir, tmp_path, capsys):
    # nonexistent scenario file fails every config, but not as a
    # transport problem -> exit 2 and per-row status text
    out = tmp_path / "sweep.tsv"
    rc = cli.main(["sweep", str(corpus_dir / "manifest.json"),
                   "--model", f"mock:{tmp_path / 'ghost.json'}",
                   "--f-values", "2", "4", "--n-words-values", "20",
                   "--histories", "fw", "--out", str(out)])
    assert rc == 2
    capsys.readouterr()
    lines = out.read_text().splitlines()
    assert len(lines) == 3
    assert all("FileNotFoundError" in l for l in lines[1:])
