from __future__ import annotations

import json
import subprocess
import sys

import pytest

from esap import __version__
from esap.cli import build_parser, main
from esap.synthetic import make_toy_kb_documents

COMMANDS = ("ingest", "index", "query", "ask", "sql",
            "eval-retrieval", "eval-trace", "version")


def run_cli(capsys, *argv) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_corpus(path) -> None:
    lines = [json.dumps({"id": doc.doc_id, "text": doc.text})
             for doc in make_toy_kb_documents()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@pytest.fixture()
def kb(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(corpus)
    kb_dir = str(tmp_path / "kb")
    assert main(["ingest", "--corpus", str(corpus), "--kb", kb_dir]) == 0
    assert main(["index", "--kb", kb_dir]) == 0
    capsys.readouterr()
    return kb_dir


def last_json(out: str) -> dict:
    return json.loads(out[:out.rindex("}") + 1])


# ---------------------------------------------------------------------------
# exit codes and error shape
# ---------------------------------------------------------------------------

def test_no_command_prints_help(capsys):
    code, out, _ = run_cli(capsys)
    assert code == 0
    assert "ingest" in out and "eval-retrieval" in out


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run_cli(capsys, "query", "--q", "x", "--sideways")
    assert code == 1
    error = json.loads(err)
    assert error["error"] == "UsageError"
    assert "sideways" in error["message"]


def test_missing_corpus_file_is_user_error(tmp_path, capsys):
    code, _, err = run_cli(capsys, "ingest", "--corpus",
                           str(tmp_path / "nope.jsonl"),
                           "--kb", str(tmp_path / "kb"))
    assert code == 1
    assert json.loads(err)["error"] == "ConfigError"


def test_malformed_corpus_is_data_error(tmp_path, capsys):
    corpus = tmp_path / "bad.jsonl"
    corpus.write_text('{"id": "a", "text": "ok"}\n{broken\n', encoding="utf-8")
    code, _, err = run_cli(capsys, "ingest", "--corpus", str(corpus),
                           "--kb", str(tmp_path / "kb"))
    assert code == 2
    error = json.loads(err)
    assert error["error"] == "CorpusFormatError"
    assert "line 2" in error["message"]


def test_query_before_index_is_data_error(tmp_path, capsys):
    code, _, err = run_cli(capsys, "query", "--q", "x",
                           "--kb", str(tmp_path / "empty"))
    assert code == 2
    assert json.loads(err)["error"] == "CorruptIndex"


def test_exhausted_script_is_port_error(kb, tmp_path, capsys):
    script = tmp_path / "script.json"
    script.write_text(json.dumps(["only one reply"]), encoding="utf-8")
    code, _, err = run_cli(capsys, "ask", "--q", "apples?", "--kb", kb,
                           "--ports", f"scripted:{script}")
    assert code == 3
    assert json.loads(err)["error"] == "ScriptExhausted"


def test_errors_are_single_json_lines(tmp_path, capsys):
    _, _, err = run_cli(capsys, "query", "--q", "x",
                        "--kb", str(tmp_path / "void"))
    assert err.count("\n") == 1
    assert set(json.loads(err)) == {"error", "message"}


# ---------------------------------------------------------------------------
# headers, overrides, help
# ---------------------------------------------------------------------------

def test_outputs_carry_version_and_config_echo(kb, capsys):
    code, out, _ = run_cli(capsys, "version", "--kb", kb)
    assert code == 0
    payload = json.loads(out)
    assert payload["tool_version"] == __version__
    assert payload["config_echo"]["kb"] == kb


def test_flags_override_config_file_and_echo(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"chunk": {"size": 900, "overlap": 90},
                                  "retrieval": {"k": 7}}), encoding="utf-8")
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(corpus)
    kb_dir = str(tmp_path / "kb")
    run_cli(capsys, "ingest", "--corpus", str(corpus), "--kb", kb_dir)
    code, out, _ = run_cli(capsys, "index", "--kb", kb_dir,
                           "--config", str(config), "--chunk-size", "400")
    assert code == 0
    payload = json.loads(out)
    # the flag wins over the file and the echo reflects what actually ran
    assert payload["config_echo"]["chunk"] == {"size": 400, "overlap": 90}
    assert payload["chunk"] == {"size": 400, "overlap": 90}

    code, out, _ = run_cli(capsys, "query", "--q", "apple", "--kb", kb_dir,
                           "--config", str(config), "--k", "2")
    payload = json.loads(out)
    assert payload["config_echo"]["retrieval"]["k"] == 2
    assert payload["k"] == 2


def test_seed_flag_lands_in_ann_config(kb, capsys):
    _, out, _ = run_cli(capsys, "version", "--kb", kb, "--seed", "7")
    assert json.loads(out)["config_echo"]["ann"]["seed"] == 7


def test_help_epilog_lists_flags_per_command(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for line in ("ingest          --corpus --kb --config --pretty --seed",
                 "index           --kb --chunk-size --overlap"):
        assert line in out


def test_epilog_flags_match_parser_surface():
    # every flag the epilog advertises must parse, per command
    parser = build_parser()
    epilog_lines = parser.epilog.splitlines()[1:]
    advertised: dict[str, list[str]] = {}
    current = None
    for line in epilog_lines:
        parts = line.split()
        if parts and not parts[0].startswith("--"):
            current = parts[0]
            advertised[current] = [p for p in parts[1:] if p.startswith("--")]
        elif current:
            advertised[current].extend(p for p in parts if p.startswith("--"))
    assert set(advertised) == set(COMMANDS)
    sub_actions = next(a for a in parser._actions
                       if isinstance(a, type(parser._actions[-1]))
                       and hasattr(a, "choices") and a.choices)
    for command, flags in advertised.items():
        sub = sub_actions.choices[command]
        parser_flags = {opt for action in sub._actions
                        for opt in action.option_strings
                        if opt.startswith("--")}
        parser_flags.discard("--help")
        assert set(flags) == parser_flags, command


# ---------------------------------------------------------------------------
# happy paths
# ---------------------------------------------------------------------------

def test_ingest_prints_summary_line(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(corpus)
    kb_dir = str(tmp_path / "kb")
    code, out, _ = run_cli(capsys, "ingest", "--corpus", str(corpus),
                           "--kb", kb_dir)
    assert code == 0
    assert out.strip().endswith("ingested=5 updated=0")
    assert json.loads(out[:out.rindex("}") + 1])["ingested"] == 5
    # second pass re-versions every document
    code, out, _ = run_cli(capsys, "ingest", "--corpus", str(corpus),
                           "--kb", kb_dir, "--pretty")
    assert out.strip() == "ingested=0 updated=5"


def test_query_returns_ranked_hits(kb, capsys):
    code, out, _ = run_cli(capsys, "query", "--q", "red apple", "--kb", kb,
                           "--k", "3")
    assert code == 0
    hits = json.loads(out)["hits"]
    assert hits and hits[0]["doc_id"] == "fruit-apple"
    scores = [h["score"] for h in hits]
    assert scores == sorted(scores, reverse=True)


def test_ask_stub_answers_with_citation(kb, capsys):
    code, out, _ = run_cli(capsys, "ask", "--q",
                           "Where does the red apple sit?", "--kb", kb)
    assert code == 0
    answer = json.loads(out)["answer"]
    assert answer["verdict"] == "sufficient"
    assert answer["citations"][0]["doc_id"] == "fruit-apple"
    assert "[1]" not in answer["answer"]


def test_sql_requires_model_port(kb, capsys):
    code, _, err = run_cli(capsys, "sql", "--q", "highest price?", "--kb", kb)
    assert code == 1
    assert "model port" in json.loads(err)["message"]


def test_sql_scripted_round_trip(kb, tmp_path, capsys):
    script = tmp_path / "sql_script.json"
    script.write_text(json.dumps([
        "structured",
        "SELECT name, unit_price FROM chinook_track "
        "ORDER BY unit_price DESC LIMIT 1",
        "0.9",
    ]), encoding="utf-8")
    code, out, _ = run_cli(capsys, "sql", "--q",
                           "Which track has the highest unit price?",
                           "--kb", kb, "--ports", f"scripted:{script}",
                           "--verbose")
    assert code == 0
    result = json.loads(out)["result"]
    assert result["log"]["status"] == "answered"
    assert result["table"]["rows"] == [["Quiet Harbor", 1.99]]
    assert "Quiet Harbor" in result["narrative"]


def test_sql_failure_surfaces_attempt_log(kb, tmp_path, capsys):
    script = tmp_path / "sql_script.json"
    script.write_text(json.dumps(["structured", "SELECT broken FROM",
                                  "SELECT worse FROM"]), encoding="utf-8")
    code, _, err = run_cli(capsys, "sql", "--q", "count of tracks?",
                           "--kb", kb, "--ports", f"scripted:{script}",
                           "--max-retries", "1")
    assert code == 3
    assert json.loads(err)["error"] == "ThorFailed"


def test_eval_retrieval_writes_report_files(kb, tmp_path, capsys):
    dataset = tmp_path / "qa.jsonl"
    dataset.write_text(json.dumps({
        "qid": "q1",
        "question": "red apple basket",
        "evidence": [{"doc_id": "fruit-apple",
                      "quote": "The red apple sits in the basket"}],
    }) + "\n", encoding="utf-8")
    out_file = tmp_path / "reports" / "retrieval.json"
    code, out, _ = run_cli(capsys, "eval-retrieval",
                           "--dataset", f"toy={dataset}",
                           "--ks", "1,2", "--kb", kb,
                           "--out", str(out_file))
    assert code == 0
    payload = json.loads(out)
    assert payload["report"]["rows"][0]["recall"]["1"] == 100.0
    assert payload["out"] == str(out_file)
    saved = json.loads(out_file.read_text(encoding="utf-8"))
    assert saved["report"]["ks"] == [1, 2]
    table = out_file.with_suffix(".txt").read_text(encoding="utf-8")
    assert "R@1" in table and "toy" in table


def test_eval_retrieval_rejects_bad_dataset_spec(kb, capsys):
    code, _, err = run_cli(capsys, "eval-retrieval", "--dataset", "nopath",
                           "--kb", kb)
    assert code == 1
    assert "NAME=PATH" in json.loads(err)["message"]


def test_eval_trace_reports_and_writes(tmp_path, capsys):
    runs = tmp_path / "runs.jsonl"
    runs.write_text(json.dumps({
        "qid": "q1", "system": "stub", "question": "q",
        "answer": "the red apple sits in the basket",
        "contexts": ["the red apple sits in the basket near the window"],
        "gold_answer": "the red apple sits in the basket",
    }) + "\n", encoding="utf-8")
    out_file = tmp_path / "trace.json"
    code, out, _ = run_cli(capsys, "eval-trace", "--runs", str(runs),
                           "--out", str(out_file))
    assert code == 0
    row = json.loads(out)["report"]["rows"][0]
    assert row["pc_hallucinated"] == 0.0
    table = out_file.with_suffix(".txt").read_text(encoding="utf-8")
    assert "pc hallucinated" in table


def test_pretty_flag_switches_to_plain_text(kb, capsys):
    code, out, _ = run_cli(capsys, "version", "--pretty")
    assert code == 0
    assert out.strip() == f"esap {__version__}"
    code, out, _ = run_cli(capsys, "query", "--q", "red apple", "--kb", kb,
                           "--k", "2", "--pretty")
    assert code == 0
    assert "config_echo" not in out
    assert "fruit-apple" in out


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "esap.cli", "version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["tool_version"] == __version__
