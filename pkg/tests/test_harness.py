import csv
import json
import re
from dataclasses import replace

import numpy as np
import pytest

from fsqlab.cli import main
from fsqlab.codec import DeskCodec
from fsqlab.harness import (
    CSV_COLUMNS,
    DEFAULT_SWEEP,
    ExperimentConfig,
    SweepReport,
    analyze_codes,
    channel_for,
    run_experiment,
    run_sweep,
    train_codecs,
    write_analysis,
)

SMALL = dict(
    seed=3,
    codecs=["fsq-desk", "rvq-desk", "student-fsq"],
    corpus={"seed": 4, "count": 3, "duration_s": 1.0},
    train_corpus={"seed": 5, "count": 4, "duration_s": 1.0},
    rvq_max_iters=5,
    student={"epochs": 2, "warmup_steps": 10},
)


def small_config(out, **kw):
    return ExperimentConfig(output_dir=str(out), **{**SMALL, **kw})


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    config = small_config(out)
    return config, run_experiment(config), out


@pytest.fixture(scope="module")
def trained(experiment):
    config, _, out = experiment
    return {name: DeskCodec.load(out / "models" / f"{name}.ndsk", name) for name in config.codecs}


@pytest.fixture(scope="module")
def test_corpus(experiment):
    from fsqlab.corpus import load_corpus

    return load_corpus(experiment[2] / "corpus" / "test")


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.p_flip == list(DEFAULT_SWEEP)
        assert cfg.corpus["count"] == 20

    @pytest.mark.parametrize("kw", [dict(p_flip=[1.5]), dict(p_flip=[]), dict(codecs=[]), dict(codecs=["opus"])])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            ExperimentConfig(**kw)

    def test_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            ExperimentConfig.from_dict({"seed": 1, "sede": 2})

    def test_from_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 9, "p_flip": [0.1]}))
        cfg = ExperimentConfig.from_json(path)
        assert (cfg.seed, cfg.p_flip) == (9, [0.1])


class TestSweep:
    def test_record_count(self, experiment):
        config, report, _ = experiment
        assert len(report.records) == len(config.codecs) * len(config.p_flip) * 3
        assert len(report.baselines) == len(config.codecs) * 3

    def test_seven_aggregate_rows_per_codec(self, experiment):
        config, report, _ = experiment
        aggs = report.aggregates()
        for codec in config.codecs:
            rows = [a for a in aggs if a["codec"] == codec]
            assert [a["p_flip"] for a in rows] == list(DEFAULT_SWEEP)
            assert all(a["n"] == 3 for a in rows)

    def test_zero_grid_equals_baseline(self, experiment, trained, test_corpus):
        config = replace(experiment[0], p_flip=[0.0])
        report = run_sweep(config, trained, test_corpus)
        strip = [{k: v for k, v in r.items()} for r in report.records]
        assert strip == report.baselines

    def test_parallel_matches_sequential(self, experiment, trained, test_corpus):
        config = replace(experiment[0], p_flip=[0.01, 0.1])
        seq = run_sweep(config, trained, test_corpus)
        par = run_sweep(replace(config, jobs=2), trained, test_corpus)
        assert seq.records == par.records
        assert seq.baselines == par.baselines

    def test_point_seeds_are_isolated(self, experiment, trained, test_corpus):
        base = replace(experiment[0], codecs=["rvq-desk"])
        a = run_sweep(replace(base, p_flip=[0.02, 0.05]), trained, test_corpus)
        b = run_sweep(replace(base, p_flip=[0.3, 0.02]), trained, test_corpus)
        pick = lambda rep: [r for r in rep.records if r["p_flip"] == 0.02]  # noqa: E731
        assert pick(a) == pick(b)

    def test_channel_depends_on_every_key(self):
        ch = channel_for(1, "fsq-desk", "utt0000", 0.01)
        others = [channel_for(2, "fsq-desk", "utt0000", 0.01), channel_for(1, "rvq-desk", "utt0000", 0.01),
                  channel_for(1, "fsq-desk", "utt0001", 0.01), channel_for(1, "fsq-desk", "utt0000", 0.02)]
        assert all((o.seed, o.stream_id) != (ch.seed, ch.stream_id) for o in others)

    def test_missing_codec(self, experiment, trained, test_corpus):
        with pytest.raises(ValueError, match="untrained"):
            run_sweep(experiment[0], {"fsq-desk": trained["fsq-desk"]}, test_corpus)

    def test_missing_corpus(self, tmp_path):
        cfg = small_config(tmp_path, corpus={"path": str(tmp_path / "nowhere")})
        with pytest.raises(FileNotFoundError):
            run_sweep(cfg)

    def test_rerun_is_byte_identical(self, experiment, tmp_path):
        config, _, out = experiment
        run_experiment(replace(config, output_dir=str(tmp_path)))
        for name in ("sweep.csv", "baseline.csv", "sweep.json"):
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes()

    def test_trained_models_reused(self, experiment, test_corpus, tmp_path):
        config, report, out = experiment
        models = {n: str(out / "models" / f"{n}.ndsk") for n in config.codecs}
        again = run_sweep(replace(config, output_dir=str(tmp_path), models=models), corpus=test_corpus)
        assert again.records == report.records

    def test_train_codecs_share_teacher(self, experiment):
        config, _, out = experiment
        from fsqlab.corpus import load_corpus

        audio = list(load_corpus(out / "corpus" / "train").values())
        codecs = train_codecs(replace(config, codecs=["fsq-desk", "student-fsq"]), audio)
        np.testing.assert_array_equal(codecs["fsq-desk"].teacher.basis, codecs["student-fsq"].teacher.basis)
        assert codecs["student-fsq"].student is not None


class TestReport:
    def test_csv(self, experiment):
        _, report, out = experiment
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == len(report.records) + 1

    def test_json_matches_csv(self, experiment):
        _, report, out = experiment
        rows = [{"codec": r["codec"], "p_flip": float(r["p_flip"]), "utterance_id": r["utterance_id"],
                 "si_sdr": float(r["si_sdr_db"]), "stoi": float(r["stoi"]), "mel_mse": float(r["mel_mse"])}
                for r in read_csv(out / "sweep.csv")]
        recomputed = report.aggregates(rows)
        stored = json.loads((out / "sweep.json").read_text())["aggregates"]
        assert len(recomputed) == len(stored)
        for a, b in zip(recomputed, stored):
            assert (a["codec"], a["p_flip"], a["n"]) == (b["codec"], b["p_flip"], b["n"])
            for key in a:
                if key.endswith(("_mean", "_median")):
                    assert abs(a[key] - b[key]) <= 1e-12

    def test_json_records_complete(self, experiment):
        _, report, out = experiment
        data = json.loads((out / "sweep.json").read_text())
        assert data["records"] == report.records
        assert len(data["baseline_aggregates"]) == 3

    def test_svg_polyline_per_codec(self, experiment):
        config, _, out = experiment
        for metric in ("si_sdr", "stoi", "mel_mse"):
            svg = (out / f"{metric}.svg").read_text()
            ids = re.findall(r'<polyline id="series-([^"]+)"', svg)
            assert ids == config.codecs
            for pts in re.findall(r'points="([^"]+)"', svg):
                assert len(pts.split()) == len(DEFAULT_SWEEP)

    def test_png_written(self, experiment):
        data = (experiment[2] / "robustness.png").read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"

    def test_manifest(self, experiment):
        config, _, out = experiment
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seed"] == config.seed
        kinds = {a["kind"] for a in manifest["artifacts"]}
        assert kinds == {"corpus", "model", "report"}
        for a in manifest["artifacts"]:
            assert (out / a["path"]).is_file()
            assert "seed" in a
        listed = {a["path"] for a in manifest["artifacts"]}
        assert {"sweep.csv", "sweep.json", "si_sdr.svg", "models/rvq-desk.ndsk"} <= listed

    def test_empty_report_rejected(self, tmp_path):
        from fsqlab.harness import emit_report

        with pytest.raises(ValueError):
            emit_report(SweepReport([], [], ["fsq-desk"], [0.1]), tmp_path)


class TestAnalysis:
    def test_identical_encoders(self, trained, test_corpus):
        res = analyze_codes(test_corpus, trained["fsq-desk"], trained["fsq-desk"])
        assert res["exact_code_agreement"] == 1.0
        assert res["level_accuracy"] == 1.0
        for counts in res["confusion"]:
            counts = np.array(counts)
            assert np.array_equal(counts, np.diag(np.diag(counts)))

    def test_teacher_vs_student(self, trained, test_corpus, tmp_path):
        res = analyze_codes(test_corpus, trained["fsq-desk"], trained["student-fsq"])
        assert res["within_one_level"] >= res["level_accuracy"]
        assert res["exact_code_agreement"] <= res["level_accuracy"]
        paths = write_analysis(res, tmp_path)
        names = {p.name for p in paths}
        assert {"analysis.json", "confusion.png"} | {f"confusion_q{i}.csv" for i in range(8)} == names
        stored = json.loads((tmp_path / "analysis.json").read_text())
        assert stored["confusion"] == res["confusion"]
        rows = read_csv(tmp_path / "confusion_q0.csv")
        assert [[int(r[f"b{j}"]) for j in range(4)] for r in rows] == res["confusion"][0]

    def test_mismatched_encoders(self, trained, test_corpus):
        with pytest.raises(ValueError):
            analyze_codes(test_corpus, trained["fsq-desk"], trained["rvq-desk"])


class TestCli:
    def test_pipeline(self, tmp_path, capsys):
        d = tmp_path
        assert main(["gen-data", "--seed", "1", "--count", "4", "--dur", "1", "--out", str(d / "c")]) == 0
        assert main(["train", "--corpus", str(d / "c"), "--preset", "fsq-desk", "--out", str(d / "f.ndsk")]) == 0
        assert main(["train", "--corpus", str(d / "c"), "--preset", "rvq-desk", "--max-iters", "3",
                     "--out", str(d / "r.ndsk")]) == 0
        assert main(["train", "--corpus", str(d / "c"), "--preset", "student-fsq", "--teacher", str(d / "f.ndsk"),
                     "--epochs", "1", "--out", str(d / "s.ndsk")]) == 0
        wav = d / "c" / "utt0000.wav"
        for model in ("f", "r"):
            assert main(["encode", "--model", str(d / f"{model}.ndsk"), "--in", str(wav),
                         "--out", str(d / f"{model}.codes")]) == 0
            assert main(["corrupt", "--in", str(d / f"{model}.codes"), "--p", "0.05", "--seed", "2",
                         "--out", str(d / f"{model}.bad")]) == 0
            assert main(["decode", "--model", str(d / f"{model}.ndsk"), "--in", str(d / f"{model}.bad"),
                         "--out", str(d / f"{model}.wav")]) == 0
            capsys.readouterr()
            assert main(["eval", "--ref", str(wav), "--est", str(d / f"{model}.wav")]) == 0
            scores = json.loads(capsys.readouterr().out)
            assert set(scores) >= {"si_sdr", "stoi", "mel_mse"}
        assert main(["analyze-codes", "--a", str(d / "f.ndsk"), "--b", str(d / "s.ndsk"), "--corpus", str(d / "c"),
                     "--out", str(d / "an")]) == 0
        assert (d / "an" / "confusion_q7.csv").is_file()

    def test_corrupt_p_zero_round_trips(self, tmp_path):
        from fsqlab.bitstream import CodeSequence

        seq = CodeSequence([[1, 2], [3, 4]], (256, 256))
        (tmp_path / "a.codes").write_bytes(seq.to_bytes())
        assert main(["corrupt", "--in", str(tmp_path / "a.codes"), "--p", "0", "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "b").read_bytes() == seq.to_bytes()

    def test_output_parent_created(self, tmp_path):
        from fsqlab.bitstream import CodeSequence

        (tmp_path / "a.codes").write_bytes(CodeSequence([[1]], (4,)).to_bytes())
        out = tmp_path / "deep" / "er" / "b.codes"
        assert main(["corrupt", "--in", str(tmp_path / "a.codes"), "--p", "0", "--out", str(out)]) == 0
        assert out.is_file()

    def test_sweep_command(self, tmp_path):
        cfg = {**SMALL, "codecs": ["fsq-desk"], "p_flip": [0.05], "output_dir": str(tmp_path / "ignored")}
        (tmp_path / "cfg.json").write_text(json.dumps(cfg))
        assert main(["sweep", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "res")]) == 0
        assert len(read_csv(tmp_path / "res" / "sweep.csv")) == 3

    def test_bad_input_exit_code(self, tmp_path, capsys):
        (tmp_path / "x.wav").write_bytes(b"junk")
        assert main(["eval", "--ref", str(tmp_path / "x.wav"), "--est", str(tmp_path / "x.wav")]) == 2
        assert "error" in capsys.readouterr().err
