"""End-to-end command-line tests; every run uses desk-scale settings."""

from pathlib import Path

import pytest

from nnam.cli import main

TINY_SYNTH = ["--phones", "4", "--states", "2", "--dim", "5", "--train", "14",
              "--dev", "4", "--test", "4", "--len-min", "12", "--len-max", "20",
              "--noise", "0.3"]
TINY_TRAIN = ["--cell", "lstm", "--layers", "1", "--hidden", "12", "--context", "1",
              "--delay", "0", "--dropout", "0.1",
              "--stages", "adam:4:5e-3,sgd:4:1e-3", "--max-epochs", "3"]


def run(*argv) -> int:
    return main(list(argv))


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("data")
    assert run("synth", "--out", str(path), "--seed", "7", *TINY_SYNTH) == 0
    return path


@pytest.fixture(scope="module")
def model_dir(corpus_dir, tmp_path_factory):
    path = tmp_path_factory.mktemp("model")
    assert run("train", "--data", str(corpus_dir), "--out", str(path),
               "--seed", "3", *TINY_TRAIN) == 0
    return path


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestSynth:
    def test_identical_trees_for_same_seed(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("synth", "--out", str(a), "--seed", "7", *TINY_SYNTH) == 0
        assert run("synth", "--out", str(b), "--seed", "7", *TINY_SYNTH) == 0
        assert tree_bytes(a) == tree_bytes(b)

    def test_missing_out_is_usage_error(self):
        assert run("synth", "--seed", "7") == 2

    def test_corpus_loads(self, corpus_dir):
        from nnam.corpus import load_corpus

        corpus = load_corpus(corpus_dir)
        assert corpus.num_classes == 8
        assert len(corpus.train) == 14


class TestTrain:
    def test_outputs_exist(self, model_dir):
        assert (model_dir / "model.txt").exists()
        log = (model_dir / "train.log").read_text().splitlines()
        assert log and all(len(line.split()) == 5 for line in log)

    def test_same_seed_identical_model_bytes(self, corpus_dir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("train", "--data", str(corpus_dir), "--out", str(out),
                       "--seed", "3", *TINY_TRAIN) == 0
        assert (a / "model.txt").read_bytes() == (b / "model.txt").read_bytes()
        assert (a / "train.log").read_bytes() == (b / "train.log").read_bytes()

    @pytest.mark.parametrize("cell", ["gru", "zoneout", "ff"])
    def test_cell_selector(self, corpus_dir, tmp_path, cell):
        out = tmp_path / cell
        args = TINY_TRAIN.copy()
        args[args.index("lstm")] = cell
        if cell == "ff":
            args += ["--lr", "0.05", "--batch", "4"]
        assert run("train", "--data", str(corpus_dir), "--out", str(out),
                   "--seed", "3", *args) == 0
        header = (out / "model.txt").read_text().splitlines()[0]
        assert header.split()[2] == cell


class TestDecodeScore:
    def test_decode_and_score(self, corpus_dir, model_dir, tmp_path):
        hyp = tmp_path / "hyp.txt"
        assert run("decode", "--data", str(corpus_dir), "--model",
                   str(model_dir / "model.txt"), "--split", "test",
                   "--out", str(hyp)) == 0
        lines = hyp.read_text().splitlines()
        assert len(lines) == 4
        for line in lines:
            fields = line.split()
            assert fields[0].startswith("test-")
            assert len(fields) > 1

    def test_decode_deterministic(self, corpus_dir, model_dir, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        for out in (a, b):
            assert run("decode", "--data", str(corpus_dir), "--model",
                       str(model_dir / "model.txt"), "--out", str(out)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_score_identity_hypothesis(self, corpus_dir, tmp_path, capsys):
        from nnam.corpus import load_corpus

        corpus = load_corpus(corpus_dir)
        hyp = tmp_path / "ref_as_hyp.txt"
        hyp.write_text("".join(f"{u.utt_id} {' '.join(u.transcript)}\n"
                               for u in corpus.test))
        assert run("score", "--data", str(corpus_dir), "--hyp", str(hyp),
                   "--split", "test") == 0
        out = capsys.readouterr().out.strip()
        assert out.startswith("PER 0.00 S 0 D 0 I 0 N ")

    def test_score_aggregates_counts(self, corpus_dir, tmp_path, capsys):
        from nnam.corpus import load_corpus

        corpus = load_corpus(corpus_dir)
        # Drop the first phone of the first utterance only.
        lines = []
        for k, u in enumerate(corpus.test):
            seq = u.transcript[1:] if k == 0 else u.transcript
            lines.append(f"{u.utt_id} {' '.join(seq)}\n")
        hyp = tmp_path / "h.txt"
        hyp.write_text("".join(lines))
        assert run("score", "--data", str(corpus_dir), "--hyp", str(hyp)) == 0
        out = capsys.readouterr().out.strip()
        total_ref = sum(len(u.transcript) for u in corpus.test)
        expected = 100.0 * 1 / total_ref
        assert out == f"PER {expected:.2f} S 0 D 1 I 0 N {total_ref}"

    def test_decode_needs_exactly_one_source(self, corpus_dir, tmp_path):
        assert run("decode", "--data", str(corpus_dir),
                   "--out", str(tmp_path / "h.txt")) == 2


@pytest.fixture(scope="module")
def ens_dir(corpus_dir, tmp_path_factory):
    path = tmp_path_factory.mktemp("ens")
    assert run("train-ensemble", "--data", str(corpus_dir), "--out", str(path),
               "--seed", "5", "--folds", "2", "--master", "--rpl",
               *TINY_TRAIN) == 0
    return path


class TestEnsembleCli:
    def test_expected_files(self, ens_dir):
        names = {p.name for p in ens_dir.iterdir()}
        assert {"ensemble.txt", "master.txt", "fold0.txt", "fold1.txt",
                "rpl.txt"} <= names

    def test_manifest_round_trips_through_decode(self, corpus_dir, ens_dir, tmp_path):
        for scenario in ("master", "folds", "master+folds"):
            out = tmp_path / f"{scenario.replace('+', '_')}.txt"
            assert run("decode", "--data", str(corpus_dir), "--ensemble",
                       str(ens_dir / "ensemble.txt"), "--scenario", scenario,
                       "--out", str(out)) == 0
            assert len(out.read_text().splitlines()) == 4
        rpl_out = tmp_path / "with_rpl.txt"
        assert run("decode", "--data", str(corpus_dir), "--ensemble",
                   str(ens_dir / "ensemble.txt"), "--scenario", "folds", "--rpl",
                   "--out", str(rpl_out)) == 0


class TestGradcheckCli:
    def test_pass_and_exit_zero(self, capsys):
        assert run("gradcheck", "--kinds", "gru", "--trials", "2") == 0
        out = capsys.readouterr().out
        assert "gradcheck gru" in out and "PASS" in out

    def test_corrupt_hook_fails_with_block_name(self, capsys):
        assert run("gradcheck", "--kinds", "lstm", "--trials", "1",
                   "--corrupt", "layer0.b_f") == 1
        out = capsys.readouterr().out
        assert "FAIL" in out and "layer0.b_f" in out


class TestConfigFileFlow:
    def test_config_file_applies_and_flags_override(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("synth.phones = 3\nsynth.states = 1\nsynth.dim = 4\n"
                       "synth.train = 6\nsynth.dev = 2\nsynth.test = 2\n"
                       "synth.len_min = 8\nsynth.len_max = 12\n")
        out = tmp_path / "data"
        assert run("synth", "--config", str(cfg), "--out", str(out),
                   "--seed", "1", "--phones", "5") == 0
        phones = (out / "phones.txt").read_text().split()
        assert len(phones) == 5  # flag beat the file

    def test_unknown_key_aborts(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("nope.key = 1\n")
        out = tmp_path / "data"
        assert run("synth", "--config", str(cfg), "--out", str(out)) == 1
        assert not out.exists()  # aborted before any work
