import hashlib
import json
from pathlib import Path

import pytest

from actihue.cli import build_parser, replay_argv, run_cli


def run(capsys, *argv):
    code = run_cli([str(a) for a in argv])
    out, err = capsys.readouterr()
    report = json.loads(out) if code == 0 and out.strip() else None
    return code, report, err


def tree_digest(root):
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(Path(root).rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert run_cli(["synth", "generate", "--kind", "activations", "--classes", "3", "--per-class", "2",
                    "--out", str(root / "mem"), "--seed", "0"]) == 0
    assert run_cli(["synth", "generate", "--kind", "activations", "--classes", "3", "--per-class", "1",
                    "--id-offset", "100", "--out", str(root / "q"), "--seed", "1"]) == 0
    assert run_cli(["index", "build", "--manifest", str(root / "mem" / "manifest.jsonl"),
                    "--index-out", str(root / "m.ahix")]) == 0
    return root


class TestExitCodes:
    def test_gradcheck(self, capsys):
        code, rep, _ = run(capsys, "loss", "gradcheck", "--classes", 5, "--trials", 200, "--seed", 1)
        assert code == 0
        assert rep["result"]["max_relative_error"] < 1e-5 and rep["result"]["passed"]
        assert rep["run"]["command"] == "loss gradcheck" and rep["run"]["seed"] == 1

    def test_gradcheck_failure_exits_one(self, capsys):
        # a huge step makes finite differences useless, so the check must fail
        code, _, _ = run(capsys, "loss", "gradcheck", "--trials", 20, "--h", 0.5)
        assert code == 1

    def test_unknown_subcommand(self, capsys):
        code, _, err = run(capsys, "frobnicate")
        assert code == 2 and "invalid choice" in err

    def test_missing_required_flag(self, capsys):
        code, _, err = run(capsys, "classify", "--query", "x.ahue")
        assert code == 2 and "--index" in err

    def test_missing_index(self, capsys, corpus, tmp_path):
        code, _, err = run(capsys, "classify", "--index", tmp_path / "none.ahix",
                           "--query", corpus / "q" / "img_000100.ahue")
        assert code == 1 and "NotFrozen" in err

    def test_unfrozen_index(self, capsys, corpus, tmp_path):
        from actihue.formats import read_index, write_index
        from actihue.memory import MemoryStore

        frozen = read_index(corpus / "m.ahix")
        s = MemoryStore()
        s.insert_vectors(frozen.vectors[:5], frozen.positions[:5], 0)
        write_index(s, tmp_path / "u.ahix")
        code, _, err = run(capsys, "classify", "--index", tmp_path / "u.ahix",
                           "--query", corpus / "q" / "img_000100.ahue")
        assert code == 1 and "NotFrozen" in err

    def test_leave_one_out_needs_image_id(self, capsys, corpus):
        code, _, err = run(capsys, "classify", "--index", corpus / "m.ahix",
                           "--query", corpus / "q" / "img_000100.ahue", "--leave-one-out")
        assert code == 2 and "--image-id" in err

    def test_synth_refuses_non_empty_dir(self, capsys, corpus):
        code, _, err = run(capsys, "synth", "generate", "--out", corpus / "mem", "--per-class", 1)
        assert code == 1

    def test_help_documents_every_flag(self):
        parser = build_parser()
        sub = next(a for a in parser._actions if a.dest == "command")
        for name, p in sub.choices.items():
            nested = [a for a in p._actions if getattr(a, "choices", None) and isinstance(a.choices, dict)]
            parsers = nested[0].choices.values() if nested else [p]
            for q in parsers:
                text = q.format_help()
                for action in q._actions:
                    for opt in action.option_strings:
                        assert opt in text


class TestCommands:
    def test_classify(self, capsys, corpus, tmp_path):
        code, rep, _ = run(capsys, "classify", "--index", corpus / "m.ahix",
                           "--query", corpus / "q" / "img_000101.ahue",
                           "--matches-out", tmp_path / "m.csv", "--out", tmp_path / "r.json")
        assert code == 0
        res = rep["result"]
        assert res["decision"] == 1
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "pixel,rank,entry,class_id,image_id,distance,kernel"
        assert len(lines) == 1 + 49 * 10
        assert json.loads((tmp_path / "r.json").read_text()) == rep

    @pytest.mark.parametrize("kind", ["energy", "matches", "angular", "radtan"])
    def test_stats(self, capsys, corpus, tmp_path, kind):
        out = tmp_path / "s.json"
        code, rep, _ = run(capsys, "stats", kind, "--queries", corpus / "q" / "manifest.jsonl",
                           "--index", corpus / "m.ahix", "--out", out)
        assert code == 0 and rep["run"]["command"] == f"stats {kind}"
        for p in tmp_path.iterdir():
            assert p == out or p.name.startswith("s.")

    def test_stats_descriptors(self, capsys, corpus):
        code, rep, _ = run(capsys, "stats", "descriptors", "--queries", corpus / "q" / "manifest.jsonl",
                           "--memory", corpus / "mem" / "manifest.jsonl", "--k", 3)
        assert code == 0
        assert set(rep["result"]["accuracy"]) == {"pixel", "avg", "max", "flatten"}

    def test_train_tiny(self, capsys):
        code, rep, _ = run(capsys, "train", "--epochs", 1, "--classes", 2, "--per-class", 4, "--folds", 2)
        assert code == 0
        assert len(rep["result"]["folds"]) == 2
        assert "TinyNet" in rep["result"]["note"]

    def test_train_comparison(self, capsys):
        code, rep, _ = run(capsys, "train", "--loss", "both", "--seeds", "0,1", "--epochs", 1,
                           "--classes", 2, "--per-class", 4, "--folds", 2)
        assert code == 0
        assert set(rep["result"]["table"]) == {"onehot", "onehot_hue"}

    def test_train_from_directory(self, capsys, tmp_path):
        assert run_cli(["synth", "generate", "--classes", "2", "--per-class", "4",
                        "--out", str(tmp_path / "d"), "--seed", "2"]) == 0
        capsys.readouterr()
        code, rep, _ = run(capsys, "train", "--data", tmp_path / "d", "--epochs", 1, "--folds", 0)
        assert code == 0 and rep["result"]["folds"][0]["val_accuracy"] is None


class TestReproducibility:
    def test_replay_gives_identical_results(self, capsys, corpus, tmp_path):
        code, first, _ = run(capsys, "stats", "angular", "--queries", corpus / "q" / "manifest.jsonl",
                             "--index", corpus / "m.ahix", "--leave-one-out", "--out", tmp_path / "a.json")
        assert code == 0
        code, second, _ = run(capsys, *replay_argv(first, out=tmp_path / "b.json"))
        assert code == 0
        assert first["result"] == second["result"]
        assert first["run"]["flags"]["leave_one_out"] is True

    def test_replay_gradcheck(self, capsys):
        _, first, _ = run(capsys, "loss", "gradcheck", "--trials", 30, "--seed", 4)
        _, second, _ = run(capsys, *replay_argv(first))
        assert first["result"] == second["result"]

    def test_synth_replay_is_byte_identical(self, capsys, tmp_path):
        code, rep, _ = run(capsys, "synth", "generate", "--classes", 2, "--per-class", 3,
                           "--out", tmp_path / "a", "--seed", 5)
        assert code == 0
        assert run_cli(replay_argv(rep, out=tmp_path / "b")) == 0
        a = tree_digest(tmp_path / "a")
        b = tree_digest(tmp_path / "b")
        a.pop("run.json"), b.pop("run.json")
        assert a == b

    def test_inputs_untouched(self, capsys, corpus, tmp_path):
        before = tree_digest(corpus)
        run(capsys, "classify", "--index", corpus / "m.ahix", "--query", corpus / "q" / "img_000100.ahue",
            "--out", tmp_path / "c.json")
        run(capsys, "stats", "matches", "--queries", corpus / "q" / "manifest.jsonl",
            "--index", corpus / "m.ahix", "--out", tmp_path / "s.json")
        assert tree_digest(corpus) == before
        assert sorted(p.name for p in tmp_path.iterdir() if p.suffix == ".json") == ["c.json", "s.json"]

    def test_no_out_writes_nothing(self, capsys, corpus, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        code, _, _ = run(capsys, "stats", "radtan", "--queries", corpus / "q" / "manifest.jsonl",
                         "--index", corpus / "m.ahix")
        assert code == 0 and list(tmp_path.iterdir()) == []
