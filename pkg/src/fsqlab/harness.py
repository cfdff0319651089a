"""End-to-end experiment driver: corpora, codec training, the bit-flip sweep,
code-divergence analysis and report files."""

from __future__ import annotations

import csv
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import plotting
from .analysis import (
    exact_code_agreement,
    level_accuracy,
    level_confusion,
    mean_cosine_similarity,
    uniform_within_baseline,
    within_level_rate,
)
from .bitstream import ChannelSpec, CodeSequence, corrupt_sequence
from .codec import CodecConfig, DeskCodec, train_fsq_codec, train_rvq_codec
from .corpus import gen_corpus, load_corpus
from .distill import LossWeights, TrainConfig, train_student
from .fsq import fsq_dequantize, fsq_index_decode
from .metrics import mel_mse, si_sdr, stoi

log = logging.getLogger(__name__)

CODECS = ("fsq-desk", "rvq-desk", "student-fsq")
DEFAULT_SWEEP = (0.001, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5)
METRICS = ("si_sdr", "stoi", "mel_mse")
CSV_COLUMNS = ("codec", "p_flip", "utterance_id", "si_sdr_db", "stoi", "mel_mse")


@dataclass
class ExperimentConfig:
    output_dir: str = "results"
    seed: int = 0
    codecs: list[str] = field(default_factory=lambda: ["fsq-desk", "rvq-desk"])
    p_flip: list[float] = field(default_factory=lambda: list(DEFAULT_SWEEP))
    corpus: dict = field(default_factory=lambda: {"seed": 2, "count": 20, "duration_s": 2.0})
    train_corpus: dict = field(default_factory=lambda: {"seed": 1, "count": 20, "duration_s": 2.0})
    models: dict = field(default_factory=dict)
    rvq_max_iters: int = 50
    student: dict = field(default_factory=dict)
    jobs: int = 1

    def __post_init__(self):
        if not self.codecs:
            raise ValueError("at least one codec is required")
        unknown = set(self.codecs) - set(CODECS)
        if unknown:
            raise ValueError(f"unknown codecs {sorted(unknown)}; choose from {CODECS}")
        if not self.p_flip:
            raise ValueError("at least one p_flip value is required")
        if any(not 0.0 <= float(p) <= 1.0 for p in self.p_flip):
            raise ValueError("p_flip values must lie in [0, 1]")
        self.p_flip = [float(p) for p in self.p_flip]
        self.seed = int(self.seed)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**obj)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SweepReport:
    records: list[dict]
    baselines: list[dict]
    codecs: list[str]
    p_flip: list[float]
    artifacts: list[dict] = field(default_factory=list)

    def aggregates(self, rows: list[dict] | None = None) -> list[dict]:
        rows = self.records if rows is None else rows
        out = []
        for codec in self.codecs:
            for p in sorted({r["p_flip"] for r in rows if r["codec"] == codec}):
                group = [r for r in rows if r["codec"] == codec and r["p_flip"] == p]
                agg = {"codec": codec, "p_flip": p, "n": len(group)}
                for m in METRICS:
                    vals = [r[m] for r in group]
                    agg[f"{m}_mean"] = float(np.mean(vals))
                    agg[f"{m}_median"] = float(statistics.median(vals))
                out.append(agg)
        return out

    def series(self, metric: str, stat: str = "mean") -> dict[str, tuple[list[float], list[float]]]:
        series = {}
        for codec in self.codecs:
            rows = [a for a in self.aggregates() if a["codec"] == codec]
            series[codec] = ([a["p_flip"] for a in rows], [a[f"{metric}_{stat}"] for a in rows])
        return series


# --- corpora and codecs ------------------------------------------------------


def resolve_corpus(spec: dict, out_dir: Path, artifacts: list[dict]) -> dict[str, np.ndarray]:
    if "path" in spec:
        return load_corpus(spec["path"])
    paths = gen_corpus(int(spec["seed"]), int(spec["count"]), float(spec["duration_s"]), out_dir)
    for p in paths:
        artifacts.append({"kind": "corpus", "path": p, "seed": int(spec["seed"])})
    return load_corpus(out_dir)


def student_settings(cfg: dict, seed: int) -> tuple[LossWeights, TrainConfig]:
    cfg = dict(cfg)
    weights = LossWeights(float(cfg.pop("lambda_rec", 1.0)), float(cfg.pop("lambda_distill", 1.0)))
    train = TrainConfig(seed=int(cfg.pop("seed", seed)), **cfg)
    return weights, train


def train_codecs(config: ExperimentConfig, train_audio: list[np.ndarray]) -> dict[str, DeskCodec]:
    codecs: dict[str, DeskCodec] = {}
    teacher = None
    for name in config.codecs:
        if name in config.models:
            codecs[name] = DeskCodec.load(config.models[name], name)
            continue
        if name == "rvq-desk":
            codecs[name] = train_rvq_codec(train_audio, CodecConfig(), config.seed, config.rvq_max_iters)
            continue
        if teacher is None:
            teacher = train_fsq_codec(train_audio, CodecConfig(), config.seed)
        if name == "fsq-desk":
            codecs[name] = teacher
        else:
            weights, tcfg = student_settings(config.student, config.seed)
            result = train_student(teacher, train_audio, weights, tcfg)
            codecs[name] = teacher.with_student(result.student, name)
    return codecs


# --- sweep -------------------------------------------------------------------


def channel_for(seed: int, codec: str, utterance: str, p: float) -> ChannelSpec:
    return ChannelSpec(p, seed, f"{codec}|{utterance}|{p!r}")


def score(reference: np.ndarray, estimate: np.ndarray) -> dict:
    return {"si_sdr": si_sdr(reference, estimate), "stoi": stoi(reference, estimate),
            "mel_mse": mel_mse(reference, estimate)}


def _sweep_task(args) -> tuple[dict, list[dict]]:
    codec_name, codec, utt, audio, grid, seed = args
    seq = codec.encode(audio)
    clean = codec.decode(seq, audio.size)
    baseline = {"codec": codec_name, "p_flip": 0.0, "utterance_id": utt, **score(audio, clean)}
    rows = []
    for p in grid:
        corrupted = corrupt_sequence(seq, channel_for(seed, codec_name, utt, p))
        est = codec.decode(corrupted, audio.size)
        rows.append({"codec": codec_name, "p_flip": p, "utterance_id": utt, **score(audio, est)})
    return baseline, rows


def run_sweep(config: ExperimentConfig, codecs: dict[str, DeskCodec] | None = None,
              corpus: dict[str, np.ndarray] | None = None) -> SweepReport:
    """Encode, pack, corrupt, unpack, decode and score every (codec, utterance, p_flip)."""
    out = Path(config.output_dir)
    artifacts: list[dict] = []
    if corpus is None:
        corpus = resolve_corpus(config.corpus, out / "corpus" / "test", artifacts)
    if codecs is None:
        train_audio = list(resolve_corpus(config.train_corpus, out / "corpus" / "train", artifacts).values())
        codecs = train_codecs(config, train_audio)
        (out / "models").mkdir(parents=True, exist_ok=True)
        for name, codec in codecs.items():
            path = out / "models" / f"{name}.ndsk"
            codec.save(path)
            artifacts.append({"kind": "model", "path": path, "seed": config.seed})
    missing = set(config.codecs) - set(codecs)
    if missing:
        raise ValueError(f"untrained codecs: {sorted(missing)}")

    tasks = [(name, codecs[name], utt, audio, config.p_flip, config.seed)
             for name in config.codecs for utt, audio in corpus.items()]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]

    # records ordered codec, p_flip (grid order), utterance regardless of scheduling
    baselines = [b for b, _ in results]
    records = [rows[i] for name in config.codecs for i in range(len(config.p_flip))
               for (b, rows) in results if b["codec"] == name]
    return SweepReport(records, baselines, list(config.codecs), list(config.p_flip), artifacts)


# --- report files ------------------------------------------------------------


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def emit_report(report: SweepReport, out_dir, formats=("csv", "json", "svg", "png")) -> list[Path]:
    if not report.records:
        raise ValueError("empty report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if "csv" in formats:
        for name, rows in (("sweep.csv", report.records), ("baseline.csv", report.baselines)):
            path = out_dir / name
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(CSV_COLUMNS)
                for r in rows:
                    writer.writerow([r["codec"], repr(r["p_flip"]), r["utterance_id"],
                                     repr(r["si_sdr"]), repr(r["stoi"]), repr(r["mel_mse"])])
            paths.append(path)
    if "json" in formats:
        paths.append(_write_json(out_dir / "sweep.json", {
            "codecs": report.codecs,
            "p_flip": report.p_flip,
            "records": report.records,
            "aggregates": report.aggregates(),
            "baselines": report.baselines,
            "baseline_aggregates": report.aggregates(report.baselines),
        }))
    if "svg" in formats:
        for metric in METRICS:
            path = out_dir / f"{metric}.svg"
            path.write_text(plotting.svg_line_chart(report.series(metric), "Robustness to bit flips",
                                                    plotting.METRIC_LABELS[metric]))
            paths.append(path)
    if "png" in formats:
        series = {m: report.series(m) for m in METRICS}
        paths.append(plotting.sweep_figure(series, out_dir / "robustness.png"))
    return paths


def write_manifest(out_dir, config: ExperimentConfig, artifacts: list[dict]) -> Path:
    out_dir = Path(out_dir)
    entries = []
    for a in artifacts:
        entry = dict(a)
        entry["path"] = Path(a["path"]).relative_to(out_dir).as_posix()
        entries.append(entry)
    return _write_json(out_dir / "manifest.json", {"config": asdict(config), "artifacts": entries})


def run_experiment(config: ExperimentConfig) -> SweepReport:
    out = Path(config.output_dir)
    report = run_sweep(config)
    for path in emit_report(report, out):
        report.artifacts.append({"kind": "report", "path": path, "seed": config.seed})
    write_manifest(out, config, report.artifacts)
    return report


# --- code analysis -----------------------------------------------------------


def _check_shared_backend(a: DeskCodec, b: DeskCodec):
    if a.config.bottleneck != "fsq" or b.config.bottleneck != "fsq":
        raise ValueError("code analysis needs two FSQ-path codecs")
    if a.config != b.config:
        raise ValueError("encoders use different codec configurations")
    if a.teacher is None or b.teacher is None or not (
            np.array_equal(a.teacher.basis, b.teacher.basis)
            and np.array_equal(a.teacher.dim_scale, b.teacher.dim_scale)):
        raise ValueError("encoders do not share the frozen quantizer and decoder")


def analyze_codes(corpus: dict[str, np.ndarray], codec_a: DeskCodec, codec_b: DeskCodec) -> dict:
    _check_shared_backend(codec_a, codec_b)
    spec = codec_a.config.fsq_spec
    audio = list(corpus.values())
    seq_a = [codec_a.encode(x) for x in audio]
    seq_b = [codec_b.encode(x) for x in audio]
    cat_a = CodeSequence(np.concatenate([s.codes for s in seq_a]), seq_a[0].slot_sizes, seq_a[0].quantizer_id)
    cat_b = CodeSequence(np.concatenate([s.codes for s in seq_b]), seq_b[0].slot_sizes, seq_b[0].quantizer_id)
    h_a = np.concatenate([codec_a.latents(x).h for x in audio])
    h_b = np.concatenate([codec_b.latents(x).h for x in audio])
    dq_a = fsq_dequantize(spec, fsq_index_decode(spec, cat_a.codes[:, 0]))
    dq_b = fsq_dequantize(spec, fsq_index_decode(spec, cat_b.codes[:, 0]))

    per_dim, overall = level_accuracy(cat_a, cat_b, spec)
    confusions = [level_confusion(cat_a, cat_b, spec, d) for d in range(spec.dim)]
    cos_pre = mean_cosine_similarity(h_a, h_b)
    cos_dq = mean_cosine_similarity(dq_a, dq_b)
    return {
        "encoder_a": codec_a.name,
        "encoder_b": codec_b.name,
        "frames": int(cat_a.num_frames),
        "exact_code_agreement": exact_code_agreement(cat_a, cat_b),
        "level_accuracy": overall,
        "level_accuracy_per_dim": [float(v) for v in per_dim],
        "within_one_level": within_level_rate(cat_a, cat_b, spec, 1),
        "uniform_within_one_baseline": [uniform_within_baseline(n, 1) for n in spec.levels],
        "cosine_pre_quantization": cos_pre.mean,
        "cosine_pre_quantization_skipped": cos_pre.skipped,
        "cosine_dequantized": cos_dq.mean,
        "cosine_dequantized_skipped": cos_dq.skipped,
        "confusion": [cm.counts.tolist() for cm in confusions],
        "_confusion_matrices": confusions,
    }


def write_analysis(result: dict, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    matrices = result["_confusion_matrices"]
    paths = [_write_json(out_dir / "analysis.json", {k: v for k, v in result.items() if not k.startswith("_")})]
    for cm in matrices:
        path = out_dir / f"confusion_q{cm.dim}.csv"
        n = cm.counts.shape[0]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["level_a"] + [f"b{j}" for j in range(n)])
            for i, row in enumerate(cm.counts):
                writer.writerow([i] + [int(v) for v in row])
        paths.append(path)
    paths.append(plotting.confusion_figure(matrices, out_dir / "confusion.png"))
    return paths
