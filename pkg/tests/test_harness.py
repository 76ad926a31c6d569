import json
import shutil
from pathlib import Path

import pytest

from specleak.cache import CacheConfig
from specleak.harness.analyze import analyze, analyze_text
from specleak.harness.cli import main
from specleak.harness.config import AnalysisConfig, ConfigError, parse_search
from specleak.harness.corpus import config_from, run_corpus, run_file
from specleak.harness.report import digest, render_text
from specleak.harness.sweep import expected_crossover, sweep_eviction, sweep_text

CORPUS = Path(__file__).parents[1] / "src" / "specleak" / "corpus"
V01 = CORPUS / "litmus" / "v01.specir"

CLEAN = """
global a[4]:8 = [1, 2, 3, 4]
fn f(x:8) {
entry:
  y = and x 3
  v = load a[y]
  ret
}
"""


# -- configuration ------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(sew=-1), dict(attacker="psychic"), dict(max_paths=0),
                                dict(max_instructions=0), dict(timeout=0),
                                dict(nested_window="deep"), dict(search="astar"),
                                dict(search="random:x"), dict(solver="magic")])
def test_config_rejects(kw):
    with pytest.raises(ConfigError):
        AnalysisConfig(**kw)


def test_missing_external_solver():
    with pytest.raises(ConfigError, match="not found"):
        AnalysisConfig(solver="smt:/nonexistent/solver").make_solver()
    with pytest.raises(ConfigError):
        AnalysisConfig(solver="smt:").make_solver()


def test_search_strategies():
    assert parse_search("dfs") == ("dfs", 0)
    assert parse_search("random:7") == ("random", 7)


def test_sidecar_overrides():
    cfg = config_from({"sew": 7, "cache_model": "off", "cache": "128x64x4"})
    assert (cfg.sew, cfg.cache_model, cfg.cache) == (7, False, CacheConfig(128, 64, 4))
    with pytest.raises(ConfigError):
        config_from({"speed": "fast"})


# -- reports --------------------------------------------------------------------

def test_report_shape_and_digest():
    a = analyze(V01, AnalysisConfig(cache_model=True))
    b = analyze(V01, AnalysisConfig(cache_model=True))
    assert a.digest() == b.digest()
    assert a.data["timing"] != {} and digest(a.data) == a.digest()
    d = json.loads(a.to_json())
    assert d["schema"] == 1 and d["counts"] == {"VB": 1, "UC_VB": 1, "RS": 1, "LS": 1}
    assert d["residency"][0]["status"] == "may-remain"
    assert d["leakage"] is True and a.exit_code == 2
    assert {"explored_paths", "avg_speculative_instructions", "speculative_locations"} <= set(d["stats"])
    c = analyze(V01, AnalysisConfig(cache_model=True, sew=40))
    assert c.digest() != a.digest()


def test_search_order_does_not_change_findings():
    base = analyze(V01, AnalysisConfig(search="dfs"))
    for s in ("bfs", "random:3"):
        assert analyze(V01, AnalysisConfig(search=s)).counts == base.counts


def test_clean_program():
    r = analyze_text(CLEAN, AnalysisConfig())
    assert r.counts == {"VB": 0, "UC_VB": 0, "RS": 0, "LS": 0}
    assert not r.leakage and r.exit_code == 0 and "residency" not in r.data


def test_render_text_table():
    text = render_text([analyze(V01, AnalysisConfig()), analyze_text(CLEAN, name="clean")])
    lines = text.splitlines()
    assert lines[0].split()[:3] == ["Program", "Paths", "Spec"]
    assert lines[2].startswith("v01") and lines[3].startswith("clean")
    assert "cache residency" in text and "may-remain" in text


# -- corpus ----------------------------------------------------------------------

@pytest.mark.parametrize("sub", ["litmus", "programs", "gadgets"])
def test_shipped_corpus_passes(sub):
    summary = run_corpus(CORPUS / sub)
    assert summary.exit_code == 0, summary.render()
    assert summary.passed == len(list((CORPUS / sub).glob("*.specir")))


def test_corpus_failures_are_per_file(tmp_path):
    shutil.copy(V01, tmp_path / "v01.specir")
    shutil.copy(CORPUS / "litmus" / "v01.expect.json", tmp_path / "v01.expect.json")
    (tmp_path / "orphan.specir").write_text(CLEAN)
    (tmp_path / "wrong.specir").write_text(CLEAN)
    (tmp_path / "wrong.expect.json").write_text(json.dumps({"expect": {"VB": 2}, "leakage": True}))
    (tmp_path / "broken.specir").write_text("fn {")
    (tmp_path / "broken.expect.json").write_text("{}")
    summary = run_corpus(tmp_path)
    status = {e.name: e.status for e in summary.entries}
    assert status == {"v01": "PASS", "orphan": "ERROR", "wrong": "FAIL", "broken": "ERROR"}
    wrong = next(e for e in summary.entries if e.name == "wrong")
    assert wrong.problems == ["VB: expected 2, got 0", "leakage: expected True, got False"]
    assert summary.exit_code == 1 and "1/4 passed" in summary.render()
    assert run_file(tmp_path / "orphan.specir").error.endswith("missing sidecar orphan.expect.json")


def test_empty_corpus(tmp_path):
    s = run_corpus(tmp_path)
    assert s.entries == [] and s.exit_code == 0


# -- sweep --------------------------------------------------------------------------

def test_sweep_template_bounds():
    assert "ult i 0" in sweep_text(0)
    with pytest.raises(ValueError):
        sweep_text(-1)
    with pytest.raises(ValueError):
        sweep_text(1024)


def test_sweep_small_range():
    res = sweep_eviction((1, 2), [0, 3, 4, 260], size=32768)
    verdict = {(r.n, r.ways): r.verdict for r in res.rows}
    assert not res.disagreements()
    # direct-mapped 512 sets: the four leaked sets are flushed after four lines
    assert verdict[(0, 1)] == verdict[(3, 1)] == "leak" and verdict[(4, 1)] == "leakage-free"
    assert verdict[(0, 2)] == verdict[(4, 2)] == "leak" and verdict[(260, 2)] == "leakage-free"
    assert expected_crossover(res.caches[1]) == 4
    assert res.to_csv().splitlines()[0] == "n,ways,verdict,oracle"


# -- command line ------------------------------------------------------------------

def test_cli_analyze(tmp_path, capsys):
    assert main(["analyze", str(V01), "--cache-model", "off"]) == 2
    assert "v01" in capsys.readouterr().out
    out = tmp_path / "r.json"
    assert main(["analyze", str(V01), "--report", "json", "-o", str(out), "--ways", "4"]) == 2
    assert json.loads(out.read_text())["config"]["cache"].startswith("32KB/64B/4-way")
    clean = tmp_path / "clean.specir"
    clean.write_text(CLEAN)
    assert main(["analyze", str(clean)]) == 0


@pytest.mark.parametrize("argv", [
    ["analyze", "/nonexistent.specir"],
    ["analyze", str(V01), "--sew", "-3"],
    ["analyze", str(V01), "--cache", "3x64x2"],
    ["analyze", str(V01), "--solver", "smt:/no/such/solver"],
    ["corpus", "/nonexistent-dir"],
])
def test_cli_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "specleak: error:" in capsys.readouterr().err


def test_cli_corpus_and_sweep(capsys):
    assert main(["corpus", str(CORPUS / "programs"), "--report", "json"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["passed"] == d["total"] == 3
    assert main(["sweep", "--assoc", "2", "--n", "259-260"]) == 0
    out = capsys.readouterr().out
    assert "260" in out and "2 points" in out


def test_cli_trace_and_oracle(tmp_path, capsys):
    t = tmp_path / "t.trace"
    t.write_text("sym y 8 secret\nexpr s = (zext 64 y)\npi p = 1:1\nS load s @p\nN load 0x100 @p\n")
    assert main(["trace", str(t), "--cache", "4x64x1"]) == 2      # y may pick another set
    t.write_text("sym y 6 secret\nexpr s = (zext 64 y)\npi p = 1:1\nS load s @p\nN load 0x100 @p\n")
    assert main(["trace", str(t), "--cache", "4x64x1"]) == 0
    assert "definitely-evicted" in capsys.readouterr().out
    assert main(["trace", str(t), "--cache", "4x64x1", "--attacker", "trace"]) == 2
    capsys.readouterr()
    small = tmp_path / "small.specir"
    small.write_text(SMALL)
    assert main(["oracle", str(small), "--secret-values", "0-3", "--cache", "4x64x1"]) == 2
    d = json.loads(capsys.readouterr().out)
    assert d["ls"] == ["P"] and d["resident"] == ["P"]
    assert main(["oracle", str(V01), "--max-input-bits", "8"]) == 1


SMALL = """
global A[4]:8 = [1, 2, 3, 4]
global P[256]:8
fn f(x:8) {
entry:
  ok = ult x 4
  br ok, leak, done
leak:
  s = load A[x]
  v = load P[s]
  jmp done
done:
  ret
}
"""
