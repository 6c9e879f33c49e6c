from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from claimed import cli
from claimed.catalog import split_spec
from claimed.cli import FLAGS, POSITIONALS, Invocation, UsageError, main, parse_invocation, render_invocation
from claimed.runner import BackendKind, RuntimeBackend

import operators as ops
from conftest import RecordingShell, write_notebook

UPLOAD_NB = Path(__file__).parent / "fixtures" / "output-upload-to-cos.ipynb"

COS_LIST_ARGV = (
    "claimed-util-cos:0.3 access_key_id=xxx secret_access_key=yyy "
    "endpoint=https://s3.us-east.cloud-object-storage.appdomain.cloud "
    "bucket_name=era5-cropscape-zarr path=/ recursive=True operation=ls"
).split()


class TestParse:
    def test_cos_list_example(self):
        inv = parse_invocation(COS_LIST_ARGV)
        assert inv.subcommand == "run"
        assert inv.positional == ("claimed-util-cos:0.3",)
        assert split_spec(inv.positional[0]) == ("claimed-util-cos", "0.3")
        assert inv.params == (
            ("access_key_id", "xxx"),
            ("secret_access_key", "yyy"),
            ("endpoint", "https://s3.us-east.cloud-object-storage.appdomain.cloud"),
            ("bucket_name", "era5-cropscape-zarr"),
            ("path", "/"),
            ("recursive", "True"),
            ("operation", "ls"),
        )

    def test_bare_equals_explicit_run(self):
        assert parse_invocation(COS_LIST_ARGV) == parse_invocation(["run", *COS_LIST_ARGV])

    def test_ls_category(self):
        assert parse_invocation(["ls", "--category", "input"]) == Invocation("ls", (), {"category": "input"}, ())
        assert parse_invocation(["ls", "--category=input"]).flags == {"category": "input"}

    def test_value_keeps_later_equals(self):
        assert parse_invocation(["x", "q=a=b=c"]).params == (("q", "a=b=c"),)

    @pytest.mark.parametrize(
        "argv",
        [
            [],
            ["ls", "extra"],
            ["compile"],
            ["ls", "--bogus"],
            ["run", "x", "--backend", "lxc"],
            ["run", "x", "--data-dir"],
            ["compile", "a.ipynb", "--build=yes"],
            ["run", "x", "1bad=v"],
        ],
    )
    def test_usage_errors(self, argv):
        with pytest.raises(UsageError) as ei:
            parse_invocation(argv)
        assert "usage: claimed" in str(ei.value)


_word = st.text(st.sampled_from("abcxyz0123-_.:/"), min_size=1, max_size=8).filter(lambda s: not s.startswith("-"))
_key = st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,6}", fullmatch=True)
_value = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"), max_size=12)


@st.composite
def invocations(draw):
    sub = draw(st.sampled_from(sorted(FLAGS)))
    positional = tuple(draw(_word.filter(lambda w: "=" not in w)) for _ in range(POSITIONALS[sub]))
    flags = {}
    for name in draw(st.lists(st.sampled_from(sorted(FLAGS[sub])), unique=True)):
        if name == "backend":
            flags[name] = draw(st.sampled_from([k.value for k in BackendKind]))
        else:
            flags[name] = draw(_word) if FLAGS[sub][name] else True
    params = tuple(draw(st.lists(st.tuples(_key, _value), max_size=5))) if sub == "run" else ()
    return Invocation(sub, positional, flags, params)


@settings(max_examples=200, deadline=None)
@given(invocations())
def test_render_round_trip(inv):
    assert parse_invocation(render_invocation(inv)) == inv


@pytest.fixture
def workdir(tmp_path, monkeypatch, home):
    monkeypatch.chdir(tmp_path)
    return tmp_path


class TestCompile:
    def test_upload_notebook_twice(self, workdir, capsys):
        assert main(["compile", str(UPLOAD_NB)]) == 0
        assert main(["compile", str(UPLOAD_NB)]) == 0
        out = capsys.readouterr().out.split()
        assert out == ["output-upload-to-cos:0.1", "output-upload-to-cos:0.1"]
        files = sorted(p.name for p in (workdir / "target" / "output-upload-to-cos").iterdir())
        assert files == ["Dockerfile", "entrypoint.sh", "output-upload-to-cos.py", "output-upload-to-cos.yaml"]

    def test_out_and_json(self, workdir, capsys):
        assert main(["compile", str(UPLOAD_NB), "--out", "art", "--json"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["version"] == "0.1"
        assert data["image_ref"] == "local/claimed-output-upload-to-cos:0.1"
        assert len(list((workdir / "art").iterdir())) == 4

    def test_major(self, workdir, capsys):
        main(["compile", str(UPLOAD_NB)])
        nb = json.loads(UPLOAD_NB.read_text())
        nb["cells"][-1]["source"] = ["print('changed')\n"]
        (workdir / "output-upload-to-cos.ipynb").write_text(json.dumps(nb))
        assert main(["compile", "output-upload-to-cos.ipynb", "--major"]) == 0
        assert capsys.readouterr().out.split()[-1] == "output-upload-to-cos:1.0"

    def test_missing_interface(self, workdir, capsys):
        path = workdir / "util-empty.ipynb"
        cells = [("markdown", "# util-empty"), ("markdown", "Does nothing"), ("code", "!pip install requests")]
        write_notebook(path, cells + [("code", "import os"), ("code", "print(1)")])
        assert main(["compile", str(path)]) == 1
        captured = capsys.readouterr()
        assert captured.out == ""
        assert "compilation error" in captured.err and "interface" in captured.err

    def test_missing_file(self, workdir, capsys):
        assert main(["compile", "nope.ipynb"]) == 1

    def test_build_and_push(self, workdir, capsys, monkeypatch):
        shell = RecordingShell()
        monkeypatch.setattr(cli, "_backend", lambda inv: RuntimeBackend(BackendKind.DOCKER, "docker", shell))
        assert main(["compile", str(UPLOAD_NB), "--build", "--push"]) == 0
        ref = "local/claimed-output-upload-to-cos:0.1"
        assert shell.calls == [
            ["docker", "version"],
            ["docker", "build", "-t", ref, "-f", "target/output-upload-to-cos/Dockerfile", "target/output-upload-to-cos"],
            ["docker", "push", ref],
        ]

    def test_build_failure_is_runtime_error(self, workdir, capsys, monkeypatch):
        shell = RecordingShell(build_rc=1)
        monkeypatch.setattr(cli, "_backend", lambda inv: RuntimeBackend(BackendKind.DOCKER, "docker", shell))
        assert main(["compile", str(UPLOAD_NB), "--build"]) == 2


class TestRunAndLs:
    @pytest.fixture
    def seeded(self, register):
        for i in (1, 2, 3):
            register("util-cos", ops.UTIL_COS_IFACE, ops.util_cos_body(f"v{i}"))
        register("util-exit", ops.EXIT_IFACE, ops.EXIT_BODY)
        register("input-url", ops.PRINT_DATA_DIR_IFACE, ops.PRINT_DATA_DIR_BODY)

    def test_ls_table(self, seeded, catalog, capsys):
        assert main(["ls"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].split() == ["NAME", "VERSION", "CATEGORY", "DIGEST"]
        rows = [line.split() for line in lines[1:]]
        assert [r[:3] for r in rows] == [
            ["input-url", "0.1", "input"],
            ["util-cos", "0.1", "util"],
            ["util-cos", "0.2", "util"],
            ["util-cos", "0.3", "util"],
            ["util-exit", "0.1", "util"],
        ]
        digest = catalog.resolve("util-cos:0.2").digest
        assert rows[2][3] == digest[:12]

    def test_ls_category_json(self, seeded, capsys):
        assert main(["ls", "--category", "input", "--json"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert [d["name"] for d in data] == ["input-url"]

    def test_bare_run_process(self, seeded, monkeypatch, capsys):
        monkeypatch.setenv("CLAIMED_RUNTIME", "process")
        argv = [a.replace("era5-cropscape-zarr", "bkt") for a in COS_LIST_ARGV]
        assert main(argv) == 0
        assert capsys.readouterr().out == "util-cos v3 ls bkt\n"

    def test_operator_exit_code(self, seeded, capsys):
        assert main(["util-exit:0.1", "code=9", "--backend", "process"]) == 9
        assert main(["run", "util-exit", "code=0", "--backend", "process"]) == 0

    def test_run_json_and_data_dir(self, seeded, tmp_path, capsys):
        target = tmp_path / "mine"
        assert main(["input-url", "--backend", "process", "--data-dir", str(target), "--json"]) == 0
        captured = capsys.readouterr()
        data = json.loads(captured.out)
        assert data["exit_code"] == 0 and Path(data["data_dir"]) == target
        assert Path(captured.err.strip().splitlines()[0]) == target

    def test_unknown_parameter_exit_1(self, seeded, capsys):
        assert main(["util-exit", "colour=red", "--backend", "process"]) == 1
        assert "colour" in capsys.readouterr().err

    def test_not_found_exit_1(self, seeded, capsys):
        assert main(["nope:1.0", "--backend", "process"]) == 1

    def test_no_runtime_exit_2(self, seeded, monkeypatch, tmp_path, capsys):
        monkeypatch.setenv("PATH", str(tmp_path))
        monkeypatch.setenv("CLAIMED_RUNTIME", "docker")
        assert main(COS_LIST_ARGV) == 2
        assert "docker" in capsys.readouterr().err

    def test_pull_failure_exit_2(self, seeded, monkeypatch, capsys):
        shell = RecordingShell(inspect_rc=1, pull_rc=1)
        monkeypatch.setattr(cli, "_backend", lambda inv: RuntimeBackend(BackendKind.DOCKER, "docker", shell))
        assert main(COS_LIST_ARGV) == 2

    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert capsys.readouterr().out.startswith("usage: claimed")

    def test_no_args(self, capsys):
        assert main([]) == 1
        assert "usage" in capsys.readouterr().err


class TestPipelineRun:
    def test_failing_step(self, register, home, tmp_path, capsys):
        register("util-exit", ops.EXIT_IFACE, ops.EXIT_BODY)
        path = tmp_path / "p.yaml"
        path.write_text(
            "name: p\nsteps:\n"
            "  - {id: ok, operator: util-exit, params: {code: 0}}\n"
            "  - {id: bad, operator: util-exit, depends_on: [ok], params: {code: 3}}\n"
            "  - {id: after, operator: util-exit, depends_on: [bad]}\n"
        )
        assert main(["pipeline-run", str(path), "--backend", "process"]) == 1
        run_id = capsys.readouterr().out.strip()
        record = json.loads((home / "runs" / run_id / "record.json").read_text())
        assert {k: v["status"] for k, v in record["step_results"].items()} == {
            "ok": "succeeded",
            "bad": "failed",
            "after": "skipped",
        }

    def test_invalid_document(self, home, tmp_path, capsys):
        path = tmp_path / "p.yaml"
        path.write_text("steps:\n  - id: a\n    operator: x\n    depends_on: [a]\n")
        assert main(["pipeline-run", str(path), "--backend", "process"]) == 1
