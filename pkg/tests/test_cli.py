"""Command-line front end: dispatch, flag validation, exit codes, and
byte-deterministic output in all three formats."""

from __future__ import annotations

import json
import os
import re
import subprocess
import sys

import pytest

ID_ID = "((lambda (x) x) (lambda (y) y))"
OMEGA = "((lambda (w) (w w)) (lambda (w) (w w)))"
PRECISION = "((lambda (f) ((f (lambda (a) a)) (f (lambda (b) b)))) (lambda (x) x))"
TEST_NO_FRAME = "(test (p) (lambda (a) a) (lambda (b) b))"


def run_cli(tmp_path, program, *args, hashseed="0"):
    source = tmp_path / "program.scm"
    source.write_text(program + "\n")
    env = dict(os.environ, PYTHONHASHSEED=hashseed)
    return subprocess.run(
        [sys.executable, "-m", "aam.cli", *args, str(source)],
        capture_output=True,
        text=True,
        env=env,
        timeout=120,
    )


class TestConcreteRuns:
    def test_strict_machine_text_output(self, tmp_path):
        r = run_cli(tmp_path, ID_ID, "cek")
        assert r.returncode == 0
        lines = r.stdout.splitlines()
        assert lines[0] == "machine: cek"
        assert "Final: (lambda (y) y)" in lines
        assert "steps: 4" in lines
        assert sum(1 for l in lines if re.match(r"^\d+: ", l)) == 5

    def test_every_concrete_machine_runs_the_core_program(self, tmp_path):
        for machine in ("cek", "cesk", "ceskstar", "ceskt", "lk", "lk-opt", "lk-postponed"):
            r = run_cli(tmp_path, ID_ID, machine)
            assert r.returncode == 0, (machine, r.stderr)
            assert "Final: (lambda (y) y)" in r.stdout

    def test_fuel_exhaustion_is_a_success(self, tmp_path):
        r = run_cli(tmp_path, OMEGA, "cek", "--fuel", "3")
        assert r.returncode == 0
        assert "Out of fuel after 3 steps" in r.stdout

    def test_stuck_is_a_distinct_exit(self, tmp_path):
        r = run_cli(tmp_path, "(throw #f)", "ext")
        assert r.returncode == 3
        assert "Stuck:" in r.stdout

    def test_security_failure_is_a_success_exit(self, tmp_path):
        r = run_cli(tmp_path, "(frame (p) fail)", "cm")
        assert r.returncode == 0
        assert "Fail" in r.stdout

    def test_collection_leaves_the_verdict_alone(self, tmp_path):
        plain = run_cli(tmp_path, PRECISION, "cesk")
        gc = run_cli(tmp_path, PRECISION, "cesk", "--gc")
        assert plain.returncode == gc.returncode == 0
        final = [l for l in plain.stdout.splitlines() if l.startswith("Final:")]
        assert final == [l for l in gc.stdout.splitlines() if l.startswith("Final:")]


class TestAbstractRuns:
    def test_contour_analysis_explores(self, tmp_path):
        r = run_cli(tmp_path, PRECISION, "kcfa", "--k", "1")
        assert r.returncode == 0
        assert r.stdout.startswith("machine: kcfa k=1")
        assert "Explored" in r.stdout

    def test_widened_analysis_reports_iterations(self, tmp_path):
        r = run_cli(tmp_path, PRECISION, "0cfa", "--widen")
        assert r.returncode == 0
        assert "Widened to" in r.stdout
        assert any(l.startswith("iterations:") for l in r.stdout.splitlines())

    def test_pushdown_reports_summary_edges(self, tmp_path):
        r = run_cli(tmp_path, ID_ID, "pushdown")
        assert r.returncode == 0
        assert "Saturated" in r.stdout
        assert any(l.startswith("summary edge:") for l in r.stdout.splitlines())

    def test_abstract_machines_cover_their_languages(self, tmp_path):
        for machine, program in (
            ("alk", ID_ID),
            ("aext", "(if #f (lambda (a) a) (lambda (b) b))"),
            ("acm", TEST_NO_FRAME),
        ):
            r = run_cli(tmp_path, program, machine)
            assert r.returncode == 0, (machine, r.stderr)
            assert "Explored" in r.stdout


class TestExitCodes:
    def test_parse_error(self, tmp_path):
        r = run_cli(tmp_path, "((lambda (x) x", "cek")
        assert r.returncode == 1
        assert "parse error" in r.stderr

    def test_unknown_machine_is_a_usage_error(self, tmp_path):
        r = run_cli(tmp_path, ID_ID, "cfk")
        assert r.returncode == 2

    def test_missing_file(self, tmp_path):
        env = dict(os.environ, PYTHONHASHSEED="0")
        r = subprocess.run(
            [sys.executable, "-m", "aam.cli", "cek", str(tmp_path / "absent.scm")],
            capture_output=True,
            text=True,
            env=env,
        )
        assert r.returncode == 2
        assert "error" in r.stderr

    @pytest.mark.parametrize(
        "program,args",
        [
            (ID_ID, ("cek", "--k", "1")),
            (ID_ID, ("kcfa", "--k", "-1")),
            (ID_ID, ("cek", "--gc")),
            (ID_ID, ("pushdown", "--gc")),
            (ID_ID, ("kcfa", "--gc", "--widen")),
            (ID_ID, ("cek", "--widen")),
            (ID_ID, ("kcfa", "--fuel", "9")),
            (ID_ID, ("cek", "--annotate", "p")),
            ("(lambda (x) y)", ("cek",)),
            ("(if #f (lambda (a) a) (lambda (b) b))", ("cek",)),
            (TEST_NO_FRAME, ("ext",)),
        ],
    )
    def test_configuration_errors(self, tmp_path, program, args):
        r = run_cli(tmp_path, program, *args)
        assert r.returncode == 2, (args, r.stdout, r.stderr)

    def test_permissions_outside_pragma_universe(self, tmp_path):
        r = run_cli(tmp_path, ";; permissions: (q)\n" + TEST_NO_FRAME, "cm")
        assert r.returncode == 2
        assert "universe" in r.stderr

    def test_pragma_declares_the_universe(self, tmp_path):
        r = run_cli(tmp_path, ";; permissions: (p q)\n" + TEST_NO_FRAME, "cm")
        assert r.returncode == 0
        assert "Final: (lambda (a) a)" in r.stdout


class TestAnnotation:
    def test_annotate_applies_the_static_policy(self, tmp_path):
        r = run_cli(tmp_path, TEST_NO_FRAME, "cm", "--annotate", "q")
        assert r.returncode == 0
        assert "Final: (lambda (a) (frame (q) a))" in r.stdout

    def test_annotate_works_on_the_abstract_machine(self, tmp_path):
        r = run_cli(tmp_path, TEST_NO_FRAME, "acm", "--annotate", "p,q")
        assert r.returncode == 0


class TestJsonFormat:
    def test_schema_shape_and_key_order(self, tmp_path):
        r = run_cli(tmp_path, PRECISION, "kcfa", "--format", "json")
        assert r.returncode == 0
        obj = json.loads(r.stdout)
        assert list(obj.keys()) == ["machine", "k", "states", "edges", "initial", "summary"]
        assert obj["machine"] == "kcfa" and obj["k"] == 0
        state = obj["states"][0]
        assert list(state.keys()) == ["id", "control", "env", "store", "kont", "time", "final"]
        assert list(obj["summary"].keys()) == ["stateCount", "finals", "valueFlow"]
        assert obj["summary"]["stateCount"] == len(obj["states"])
        assert obj["summary"]["valueFlow"]["x"] == ["(lambda (a) a)", "(lambda (b) b)"]
        finals = {s["id"] for s in obj["states"] if s["final"]}
        assert finals == set(obj["summary"]["finals"])

    def test_concrete_json_has_linear_edges(self, tmp_path):
        r = run_cli(tmp_path, ID_ID, "cesk", "--format", "json")
        obj = json.loads(r.stdout)
        n = obj["summary"]["stateCount"]
        assert obj["edges"] == [[i, i + 1] for i in range(n - 1)]


class TestDotFormat:
    def test_finals_are_double_circled(self, tmp_path):
        r = run_cli(tmp_path, ID_ID, "kcfa", "--format", "dot")
        assert r.returncode == 0
        assert r.stdout.startswith("digraph aam {")
        assert "shape=doublecircle" in r.stdout
        assert "style=bold" in r.stdout
        assert r.stdout.rstrip().endswith("}")


class TestDeterminism:
    @pytest.mark.parametrize(
        "program,args",
        [
            (PRECISION, ("kcfa", "--k", "1", "--format", "json")),
            (PRECISION, ("pushdown", "--format", "dot")),
            (PRECISION, ("0cfa", "--widen", "--format", "json")),
            (TEST_NO_FRAME, ("cm", "--annotate", "p,q", "--format", "json")),
            (TEST_NO_FRAME, ("acm", "--format", "text")),
        ],
    )
    def test_output_is_independent_of_hash_seed(self, tmp_path, program, args):
        a = run_cli(tmp_path, program, *args, hashseed="0")
        b = run_cli(tmp_path, program, *args, hashseed="42")
        assert a.returncode == b.returncode == 0
        assert a.stdout == b.stdout
