import json
import subprocess
import sys

import pytest

from divflow.cli import EXIT_MISMATCH, EXIT_OK, EXIT_PARSE, run, sweep_instance
from divflow.driver import reference_maxflow
from divflow.graph import parse_dimacs, random_instance

SINGLE = "p max 2 1\nn 1 s\nn 2 t\na 1 2 5\n"


@pytest.fixture
def single_file(tmp_path):
    path = tmp_path / "single.max"
    path.write_text(SINGLE)
    return str(path)


def test_solve_reference(single_file, capsys):
    assert run(["solve", single_file, "--mode", "reference"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "5"


def test_solve_ipm_prints_value(single_file, capsys):
    assert run(["solve", single_file]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "5"


def test_solve_json_is_deterministic(tmp_path, capsys):
    path = tmp_path / "g.max"
    assert run(["gen", "--seed", "3", "--n", "8", "--m", "16", "--U", "4"]) == EXIT_OK
    path.write_text(capsys.readouterr().out)
    outs = []
    for _ in range(2):
        assert run(["solve", str(path), "--json"]) == EXIT_OK
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    d = json.loads(outs[0])
    assert {"value", "n", "m", "U", "eta", "steps", "probes", "phases", "checks"} <= set(d)
    assert d["verified"] is True


def test_solve_print_flow(single_file, capsys):
    assert run(["solve", single_file, "--print-flow"]) == EXIT_OK
    assert capsys.readouterr().out.split("\n")[:2] == ["5", "f 1 5"]


def test_solve_trace(single_file, tmp_path, capsys):
    trace = tmp_path / "trace.jsonl"
    assert run(["solve", single_file, "--trace", str(trace)]) == EXIT_OK
    lines = trace.read_text().splitlines()
    assert lines and all("congestion" in json.loads(x) for x in lines)


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.max"
    bad.write_text("p max 2 1\nn 1 s\nn 2 t\na 1 2\n")
    assert run(["solve", str(bad)]) == EXIT_PARSE
    assert "parse error" in capsys.readouterr().err
    assert run(["solve", str(tmp_path / "missing.max")]) == EXIT_PARSE


def test_unknown_flag_rejected(single_file):
    with pytest.raises(SystemExit) as err:
        run(["solve", single_file, "--bogus"])
    assert err.value.code == 2


def test_mode_choices_enforced(single_file):
    with pytest.raises(SystemExit):
        run(["solve", single_file, "--mode", "both"])


def test_gen_round_trips(capsys):
    assert run(["gen", "--seed", "1", "--n", "6", "--m", "9", "--U", "3", "--undirected"]) == EXIT_OK
    G, a, b = parse_dimacs(capsys.readouterr().out)
    assert G.n == 6 and G.m == 18  # each undirected edge is written as two arcs
    H, a2, b2 = random_instance(1, 6, 9, 3, directed=False)
    assert (a, b) == (a2, b2)
    assert reference_maxflow(G, a, b)[0] == reference_maxflow(H, a, b)[0]


def test_verify_generated(capsys):
    assert run(["verify", "--seed", "7", "--n", "12", "--m", "30", "--U", "5"]) == EXIT_OK
    assert capsys.readouterr().out.strip().endswith("match")


def test_verify_needs_instance(capsys):
    assert run(["verify"]) == EXIT_PARSE


def test_bench_and_check_lemmas(capsys):
    assert run(["bench", "--sizes", "1"]) in (EXIT_OK, EXIT_MISMATCH)
    out = capsys.readouterr().out.splitlines()
    assert out[0].split()[:3] == ["n", "m", "U"] and len(out) == 2
    assert run(["check-lemmas", "--count", "2"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "congestion" in out and "mu_neutral" in out


def test_sweep_instance_bounds():
    for seed in range(200):
        G, a, b = sweep_instance(seed)
        assert G.n <= 30 and G.U <= 10 and a != b


def test_module_entry_point(single_file):
    proc = subprocess.run([sys.executable, "-m", "divflow", "solve", single_file],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.strip() == "5"
