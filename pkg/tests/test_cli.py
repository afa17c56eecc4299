import json
import os
import subprocess
import sys

import numpy as np
import pytest

from niid.cli import main
from niid.core import DistributionSequence, ProbabilityVector, RngSeed, ValidationError, draw_batch, uniform
from niid.instances import gen_paired_bias
from niid.io import read_batch, read_reference, read_sequence, write_batch, write_sequence


@pytest.fixture
def files(tmp_path):
    k = 10
    uni = DistributionSequence.repeat(uniform(k), 400)
    far = DistributionSequence.repeat(ProbabilityVector.point_mass(k, 1), 400)
    paths = {
        "uni2": tmp_path / "uni2.csv",
        "far2": tmp_path / "far2.csv",
        "uni3a": tmp_path / "uni3a.csv",
        "uni3b": tmp_path / "uni3b.csv",
        "ref": tmp_path / "ref.json",
        "seq": tmp_path / "seq.json",
    }
    write_batch(draw_batch(uni, 2, RngSeed(0)), paths["uni2"])
    write_batch(draw_batch(far, 2, RngSeed(1)), paths["far2"])
    write_batch(draw_batch(uni, 3, RngSeed(2)), paths["uni3a"])
    write_batch(draw_batch(uni, 3, RngSeed(3)), paths["uni3b"])
    write_sequence(DistributionSequence([uniform(k)]), paths["ref"])
    write_sequence(uni, paths["seq"])
    return paths


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestIO:
    def test_batch_round_trip(self, tmp_path):
        b = draw_batch(DistributionSequence.repeat(uniform(7), 5), 3, RngSeed(0))
        write_batch(b, tmp_path / "b.csv")
        back = read_batch(tmp_path / "b.csv", k=7)
        np.testing.assert_array_equal(back.draws, b.draws)

    def test_batch_errors(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b,c\n1,1,1\n")
        with pytest.raises(ValidationError):
            read_batch(p)
        p.write_text("source,draw_index,value\n1,1,1\n1,2,1\n2,1,1\n")
        with pytest.raises(ValidationError):
            read_batch(p)  # ragged
        p.write_text("source,draw_index,value\n1,1,1\n1,1,2\n")
        with pytest.raises(ValidationError):
            read_batch(p)  # duplicate

    def test_sequence_round_trip(self, tmp_path):
        seq = DistributionSequence([gen_paired_bias(4, 0.5), uniform(4)])
        write_sequence(seq, tmp_path / "s.json")
        back = read_sequence(tmp_path / "s.json")
        np.testing.assert_allclose(back.rows(), seq.rows())
        doc = json.loads((tmp_path / "s.json").read_text())
        assert set(doc) == {"k", "T", "rows"}

    def test_exact_reference(self, tmp_path):
        p = tmp_path / "r.json"
        p.write_text('{"k": 3, "T": 1, "rows": [[0.1, 0.2, 0.7]]}')
        q = read_reference(p, exact=True)
        assert q.exact[0].denominator == 10

    def test_reference_single_row(self, tmp_path):
        p = tmp_path / "r.json"
        write_sequence(DistributionSequence.repeat(uniform(3), 2), p)
        with pytest.raises(ValidationError):
            read_reference(p)

    def test_sequence_header_mismatch(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text('{"k": 2, "T": 2, "rows": [[0.5, 0.5]]}')
        with pytest.raises(ValidationError):
            read_sequence(p)


class TestExitCodes:
    def test_uniform_accepts(self, files, capsys):
        code, out, _ = run(["test-uniformity", "--samples", files["uni2"], "--k", 10, "--epsilon", 1.0], capsys)
        assert code == 0
        assert "decision: accept" in out

    def test_far_rejects(self, files, capsys):
        code, _, _ = run(["test-uniformity", "--samples", files["far2"], "--k", 10, "--epsilon", 1.0], capsys)
        assert code == 1

    def test_missing_epsilon(self, files, capsys):
        code, _, err = run(["test-uniformity", "--samples", files["uni2"], "--k", 10], capsys)
        assert code == 2
        assert "usage" in err

    def test_unreadable_file(self, tmp_path, capsys):
        code, _, err = run(["test-uniformity", "--samples", tmp_path / "missing.csv", "--k", 10, "--epsilon", 1.0], capsys)
        assert code == 3

    def test_validation_error(self, files, capsys):
        code, _, err = run(["test-uniformity", "--samples", files["uni2"], "--k", 10, "--epsilon", 1.5], capsys)
        assert code == 2
        assert "epsilon" in err

    def test_no_subcommand(self, capsys):
        assert run([], capsys)[0] == 2


class TestJson:
    def test_verdict_schema_round_trip(self, files, capsys):
        code, out, _ = run(["test-uniformity", "--samples", files["uni2"], "--k", 10, "--epsilon", 1.0, "--json"], capsys)
        doc = json.loads(out)
        for key in ("statistic", "threshold", "decision", "under_sampled", "T", "k"):
            assert key in doc
        assert json.dumps(doc, sort_keys=True) == out.strip()

    def test_identity(self, files, capsys):
        code, out, _ = run(["test-identity", "--samples", files["uni2"], "--reference", files["ref"],
                            "--epsilon", 1.0, "--json", "--seed", 4], capsys)
        doc = json.loads(out)
        assert doc["k"] == 40 and doc["reference_k"] == 10 and doc["seed"] == 4
        assert code in (0, 1)

    def test_identity_exact(self, files, capsys):
        code, out, _ = run(["test-identity", "--samples", files["uni2"], "--reference", files["ref"],
                            "--epsilon", 1.0, "--exact-rational", "--json"], capsys)
        assert json.loads(out)["k"] == 40

    def test_identity_poisson(self, files, capsys):
        code, out, _ = run(["test-identity-poisson", "--sequence", files["seq"], "--reference", files["ref"],
                            "--c-mean", 1.0, "--epsilon", 1.0, "--json"], capsys)
        doc = json.loads(out)
        assert "discarded_odd_sample" in doc

    def test_closeness(self, files, capsys):
        code, out, _ = run(["test-closeness", "--samples-p", files["uni3a"], "--samples-q", files["uni3b"],
                            "--epsilon", 1.0, "--k", 10, "--json"], capsys)
        doc = json.loads(out)
        assert doc["decided_by"] in ("heavy", "l2")

    def test_learn(self, files, tmp_path, capsys):
        out_path = tmp_path / "est.json"
        code, out, _ = run(["learn", "--samples", files["uni2"], "--k", 10, "--json", "--out", out_path], capsys)
        doc = json.loads(out)
        assert code == 0 and doc["T"] == 400 and len(doc["estimate"]) == 10
        assert read_reference(out_path).k == 10

    def test_fingerprint(self, files, capsys):
        code, out, _ = run(["fingerprint", "--samples", files["uni2"]], capsys)
        doc = json.loads(out)
        assert sum(int(j) * n for j, n in doc.items()) == 800

    def test_seed_env(self, files, capsys, monkeypatch):
        argv = ["test-identity", "--samples", files["uni2"], "--reference", files["ref"], "--epsilon", 1.0, "--json"]
        monkeypatch.setenv("NIID_SEED", "17")
        a = json.loads(run(argv, capsys)[1])
        b = json.loads(run(argv + ["--seed", 17], capsys)[1])
        assert a == b and a["seed"] == 17
        c = json.loads(run(argv + ["--seed", 18], capsys)[1])
        assert c["seed"] == 18

    def test_bad_seed_env(self, files, capsys, monkeypatch):
        monkeypatch.setenv("NIID_SEED", "abc")
        code, _, _ = run(["test-identity", "--samples", files["uni2"], "--reference", files["ref"], "--epsilon", 1.0], capsys)
        assert code == 2


class TestGenerateAndExperiment:
    @pytest.mark.parametrize("argv", [
        ["--kind", "paired-bias", "--k", 8, "--epsilon", 0.5],
        ["--kind", "paired-bias", "--k", 8, "--epsilon", 0.5, "--exact-rational"],
        ["--kind", "pooled-lb", "--m", 16, "--n-blocks", 4, "--member", "b"],
        ["--kind", "c1-pair", "--k", 16, "--T", 8, "--member", "b"],
    ])
    def test_gen_instance(self, argv, tmp_path, capsys):
        out = tmp_path / "inst.json"
        code, _, _ = run(["gen-instance", "--out", out] + argv, capsys)
        assert code == 0
        seq = read_sequence(out)
        assert np.allclose(seq.rows().sum(axis=1), 1)

    def test_gen_instance_missing_args(self, tmp_path, capsys):
        code, _, _ = run(["gen-instance", "--kind", "c1-pair", "--out", tmp_path / "x.json"], capsys)
        assert code == 2

    def test_writes_only_named_paths(self, tmp_path, capsys):
        before = set(os.listdir(tmp_path))
        run(["gen-instance", "--kind", "paired-bias", "--k", 4, "--epsilon", 0.2, "--out", tmp_path / "only.json"], capsys)
        assert set(os.listdir(tmp_path)) - before == {"only.json"}

    def test_experiment(self, tmp_path, capsys):
        spec = {"tester": "uniformity", "k": 10, "epsilon": 0.5, "null": {"kind": "uniform"},
                "alt": {"kind": "paired-bias", "epsilon": 0.5}, "trials": 3, "seed": 1, "T": [50, 100]}
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec))
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run(["experiment", "--spec", spec_path, "--out", out_a, "--no-timing"], capsys)[0] == 0
        assert run(["experiment", "--spec", spec_path, "--out", out_b, "--no-timing"], capsys)[0] == 0
        assert out_a.read_bytes() == out_b.read_bytes()
        header = out_a.read_text().splitlines()[0]
        assert header == "T,trials,type1,type1_lo,type1_hi,type2,type2_lo,type2_hi,mean_stat,mean_threshold,seconds"

    def test_experiment_bad_spec(self, tmp_path, capsys):
        p = tmp_path / "spec.json"
        p.write_text("{not json")
        assert run(["experiment", "--spec", p], capsys)[0] == 2


def test_console_entry_point(files):
    proc = subprocess.run([sys.executable, "-m", "niid.cli", "test-uniformity", "--samples", str(files["far2"]),
                           "--k", "10", "--epsilon", "1"], capture_output=True, text=True)
    assert proc.returncode == 1
