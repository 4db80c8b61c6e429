"""Command line entry point.

Subcommands: gen-data, train, distill, eval, inspect, count, ablate.

Settings are a flat namespace of dotted keys.  They come from a profile
(``desk`` by default, or ``paper``), then an optional ``--config`` file of
``key = value`` lines, then ``--key value`` flags, each layer overriding
the previous one.  Exit codes: 0 ok, 2 config error, 3 data error,
4 checkpoint error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (PROGRAMS, SamplingSpec, SyntheticSpec, VideoFormatError, generate_synthetic, load_corpus,
                   synthetic_video)
from .distill import DistillConfig
from .evaluate import evaluate, export_modulator_maps
from .network import PRESETS, ModelConfig, build_model, flop_count, param_count
from .training import (METRICS_HEADER, ScheduleSpec, distill_student, model_from_checkpoint, run_training,
                       write_metrics)

log = logging.getLogger("stfocal")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# keys and profiles


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace(" ", "").split(",") if v)


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.replace(" ", "").split(",") if v)


def _strs(s: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(conv):
    def parse(s: str):
        return None if s.strip().lower() in ("", "none", "auto") else conv(s)
    parse.__name__ = f"optional {conv.__name__}"
    return parse


def _views(s: str) -> tuple[tuple[int, int], ...]:
    out = []
    for part in _strs(s):
        a, sep, b = part.lower().partition("x")
        if not sep:
            raise ValueError(f"views must look like 4x3, got {part!r}")
        out.append((int(a), int(b)))
    return tuple(out)


_ints.__name__, _floats.__name__, _strs.__name__ = "int list", "float list", "name list"
_views.__name__, _bool.__name__ = "views list", "bool"

# key -> parser.  Every key also works as a --flag.
KEYS = {
    "seed": int,
    "data.root": str,
    "data.classes": _strs,
    "data.samples_per_class": int,
    "data.height": int,
    "data.width": int,
    "data.frames": int,
    "data.noise": float,
    "data.seed": int,
    "data.train_fraction": float,
    "sampling.frames": int,
    "sampling.stride": _opt(int),
    "sampling.crop_size": int,
    "sampling.crop_scale_min": float,
    "model.role": str,
    "model.embed_dim": int,
    "model.depths": _ints,
    "model.focal_levels": _ints,
    "model.focal_windows": _ints,
    "model.drop_path_rate": float,
    "model.mlp_ratio": float,
    "model.temporal_mode": str,
    "model.out_proj": _bool,
    "schedule.base_lr": float,
    "schedule.warmup_lr": float,
    "schedule.warmup_epochs": int,
    "schedule.epochs": int,
    "schedule.batch_size": int,
    "schedule.reference_batch": int,
    "schedule.momentum": float,
    "schedule.weight_decay": float,
    "schedule.clip_grad": _opt(float),
    "schedule.eval_every": int,
    "distill.alpha": float,
    "distill.tau": float,
    "run.out": str,
    "run.teacher": str,
    "run.resume": _opt(str),
    "eval.checkpoint": str,
    "eval.views": _views,
    "eval.split": str,
    "eval.out": _opt(str),
    "inspect.checkpoint": _opt(str),
    "inspect.layer": str,
    "inspect.sample": str,
    "inspect.out": str,
    "count.preset": _strs,
    "count.frames": int,
    "count.size": int,
    "count.csv": _bool,
    "ablate.alphas": _floats,
    "ablate.taus": _floats,
    "ablate.out": str,
    "ablate.workers": int,
    "ablate.sanity": _bool,
}

# short spellings used on the command line
ALIASES = {
    "alpha": "distill.alpha",
    "tau": "distill.tau",
    "epochs": "schedule.epochs",
    "preset": "count.preset",
    "views": "eval.views",
    "data": "data.root",
    "out": "run.out",
    "teacher": "run.teacher",
    "checkpoint": "eval.checkpoint",
    "layer": "inspect.layer",
    "csv": "count.csv",
}

_COMMON = {
    "seed": "0",
    "data.root": "corpus",
    "data.classes": ",".join(PROGRAMS),
    "data.samples_per_class": "50",
    "data.noise": "0.08",
    "data.seed": "0",
    "data.train_fraction": "0.7",
    "sampling.frames": "8",
    "sampling.stride": "auto",
    "model.role": "auto",
    "model.focal_levels": "2,2,2,2",
    "model.focal_windows": "3,3,3,3",
    "model.mlp_ratio": "4",
    "model.temporal_mode": "temporal",
    "model.out_proj": "true",
    "schedule.batch_size": "8",
    "schedule.reference_batch": "512",
    "schedule.momentum": "0.9",
    "schedule.weight_decay": "0",
    "schedule.eval_every": "1",
    "distill.alpha": "0.3",
    "distill.tau": "10",
    "run.out": "runs/out",
    "run.teacher": "",
    "run.resume": "none",
    "eval.checkpoint": "",
    "eval.views": "1x1,4x3",
    "eval.split": "val",
    "eval.out": "none",
    "inspect.checkpoint": "none",
    "inspect.layer": "0.0",
    "inspect.sample": "0",
    "inspect.out": "heatmaps",
    "count.preset": "student,teacher",
    "count.frames": "8",
    "count.size": "224",
    "count.csv": "false",
    "ablate.alphas": "0.3,0.5,0.7",
    "ablate.taus": "5,10,15",
    "ablate.out": "ablate.csv",
    "ablate.workers": "1",
    "ablate.sanity": "false",
}

PROFILES = {
    # full-scale values; documented, far too slow for CI
    "paper": {
        **_COMMON,
        "data.height": "256",
        "data.width": "320",
        "data.frames": "64",
        "sampling.crop_size": "224",
        "sampling.crop_scale_min": "0.08",
        "schedule.base_lr": "0.1",
        "schedule.warmup_lr": "0.001",
        "schedule.warmup_epochs": "20",
        "schedule.epochs": "120",
        "schedule.clip_grad": "none",
        "teacher.embed_dim": "128",
        "teacher.depths": "2,2,18,2",
        "teacher.drop_path_rate": "0.5",
        "student.embed_dim": "96",
        "student.depths": "1,1,2,1",
        "student.drop_path_rate": "0.2",
    },
    # laptop scale: small canvas, few epochs, larger step size
    "desk": {
        **_COMMON,
        "data.height": "32",
        "data.width": "32",
        "data.frames": "16",
        # fresh clips beat extra epochs at a fixed compute budget
        "data.samples_per_class": "300",
        # blink toggles every raw frame, so an even stride would hide it
        "sampling.stride": "1",
        "sampling.crop_size": "32",
        "sampling.crop_scale_min": "1.0",
        "schedule.base_lr": "1.6",
        "schedule.warmup_lr": "0.016",
        "schedule.warmup_epochs": "1",
        "schedule.epochs": "8",
        "schedule.clip_grad": "1.0",
        "teacher.embed_dim": "64",
        "teacher.depths": "1,1,2,1",
        "teacher.drop_path_rate": "0.1",
        "student.embed_dim": "16",
        "student.depths": "1,1,2,1",
        "student.drop_path_rate": "0.0",
    },
}

_ROLE_KEYS = ("embed_dim", "depths", "drop_path_rate")


def _parse_value(key: str, raw: str):
    try:
        return KEYS[key](raw)
    except (TypeError, ValueError) as exc:
        kind = getattr(KEYS[key], "__name__", "value")
        raise ConfigError(f"config key {key}: expected {kind}, got {raw!r} ({exc})") from None


def canonical(key: str) -> str:
    key = ALIASES.get(key, key)
    if key not in KEYS:
        close = sorted(k for k in KEYS if k.split(".")[-1] == key.split(".")[-1])
        hint = f"; did you mean {', '.join(close)}?" if close else ""
        raise ConfigError(f"unknown config key {key!r}{hint}")
    return key


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; ``[section]`` lines are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        try:
            out[canonical(key)] = value.strip()
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def parse_overrides(tokens: list[str]) -> dict[str, str]:
    """``--key value`` or ``--key=value`` pairs."""
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}; settings are given as --key value")
        name, eq, value = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(tokens):
                raise ConfigError(f"flag --{name} needs a value")
            value = tokens[i + 1]
            i += 1
        out[canonical(name)] = value
        i += 1
    return out


@dataclass
class RunConfig:
    values: dict
    profile: str
    command: str

    def __getitem__(self, key):
        return self.values[key]

    def role(self) -> str:
        role = self.values["model.role"]
        if role == "auto":
            return "teacher" if self.command == "train" else "student"
        if role not in ("teacher", "student"):
            raise ConfigError(f"config key model.role must be teacher, student or auto, got {role!r}")
        return role

    def synthetic(self) -> SyntheticSpec:
        v = self.values
        spec = SyntheticSpec(classes=v["data.classes"], samples_per_class=v["data.samples_per_class"],
                             height=v["data.height"], width=v["data.width"], frames=v["data.frames"],
                             noise=v["data.noise"], seed=v["data.seed"], train_fraction=v["data.train_fraction"])
        return spec.validate()

    def sampling(self) -> SamplingSpec:
        return SamplingSpec(self.values["sampling.frames"], self.values["sampling.stride"], "train")

    def crop(self) -> tuple[int, tuple[float, float]]:
        size = self.values["sampling.crop_size"]
        smin = self.values["sampling.crop_scale_min"]
        if size < 32 or size % 32:
            raise ConfigError(f"config key sampling.crop_size must be a positive multiple of 32, got {size}")
        if not 0.0 < smin <= 1.0:
            raise ConfigError(f"config key sampling.crop_scale_min must be in (0, 1], got {smin}")
        return size, (smin, 1.0)

    def model(self, num_classes: int) -> ModelConfig:
        v = self.values
        cfg = ModelConfig(embed_dim=v["model.embed_dim"], depths=v["model.depths"],
                          focal_levels=v["model.focal_levels"], focal_windows=v["model.focal_windows"],
                          drop_path_rate=v["model.drop_path_rate"], num_classes=num_classes,
                          mlp_ratio=v["model.mlp_ratio"], temporal_mode=v["model.temporal_mode"],
                          out_proj=v["model.out_proj"])
        return cfg.validate()

    def schedule(self) -> ScheduleSpec:
        v = self.values
        spec = ScheduleSpec(base_lr=v["schedule.base_lr"], warmup_lr=v["schedule.warmup_lr"],
                            warmup_epochs=v["schedule.warmup_epochs"], total_epochs=v["schedule.epochs"],
                            batch_size=v["schedule.batch_size"], reference_batch=v["schedule.reference_batch"],
                            momentum=v["schedule.momentum"], weight_decay=v["schedule.weight_decay"],
                            clip_grad=v["schedule.clip_grad"])
        return spec.validate()

    def distill(self) -> DistillConfig:
        return DistillConfig(self.values["distill.alpha"], self.values["distill.tau"])


def load_run_config(command: str, profile: str = "desk", config_path: str | None = None,
                    overrides: dict[str, str] | None = None) -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    raw = {k: v for k, v in PROFILES[profile].items() if not k.startswith(("teacher.", "student."))}
    file_values = {}
    if config_path:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from None
        file_values = parse_config_text(text, config_path)
    layered = {**file_values, **(overrides or {})}
    role = layered.get("model.role", raw["model.role"])
    if role == "auto":
        role = "teacher" if command == "train" else "student"
    if role in ("teacher", "student"):
        for k in _ROLE_KEYS:
            raw[f"model.{k}"] = PROFILES[profile][f"{role}.{k}"]
    raw.update(layered)
    values = {k: _parse_value(k, raw[k]) for k in KEYS}
    return RunConfig(values, profile, command)


# ---------------------------------------------------------------------------
# commands


def _corpus(rc: RunConfig):
    root = Path(rc["data.root"])
    if not (root / "index.tsv").exists():
        raise VideoFormatError(f"no corpus index at {root / 'index.tsv'}; run gen-data first")
    corpus = load_corpus(root)
    if not corpus.train:
        raise VideoFormatError(f"corpus at {root} has an empty training split")
    return corpus


def cmd_gen_data(rc: RunConfig) -> int:
    spec = rc.synthetic()
    entries = generate_synthetic(spec, rc["data.root"])
    n_train = sum(e.split == "train" for e in entries)
    print(f"wrote {len(entries)} videos to {rc['data.root']}: {len(spec.classes)} classes, "
          f"{n_train} train / {len(entries) - n_train} val, {spec.frames}x{spec.height}x{spec.width}")
    return EXIT_OK


def _run(rc: RunConfig, teacher_ckpt=None, corpus=None) -> int:
    corpus = corpus or _corpus(rc)
    cfg = rc.model(corpus.num_classes)
    spec = rc.schedule()
    size, scale = rc.crop()
    out = Path(rc["run.out"])
    resume = None
    if rc["run.resume"]:
        resume = load_checkpoint(rc["run.resume"], expected_fingerprint=cfg.fingerprint())
    out.mkdir(parents=True, exist_ok=True)
    metrics = out / "metrics.csv"
    ckpt_path = out / "checkpoint.vflc"
    if resume is None and metrics.exists():
        metrics.unlink()

    def on_epoch(row, ckpt):
        save_checkpoint(ckpt, ckpt_path)
        write_metrics([row], metrics, append=True)

    kw = dict(sampling=rc.sampling(), crop_size=size, crop_scale=scale, resume=resume, on_epoch=on_epoch,
              eval_every=rc["schedule.eval_every"])
    start = time.time()
    if teacher_ckpt is None:
        result = run_training(corpus, cfg, spec, rc["seed"], meta={"role": rc.role()}, **kw)
    else:
        result = distill_student(corpus, teacher_ckpt, cfg, rc.distill(), spec, rc["seed"], **kw)
    last = result.rows[-1] if result.rows else {}
    print(f"{rc.command}: {len(result.rows)} epochs in {time.time() - start:.1f}s; "
          f"val top1 {last.get('top1', float('nan')):.4f} top5 {last.get('top5', float('nan')):.4f}; "
          f"checkpoint {ckpt_path}, metrics {metrics}")
    return EXIT_OK


def _load_teacher(rc: RunConfig):
    path = rc["run.teacher"]
    if not path:
        raise ConfigError("distill needs a teacher checkpoint: --teacher PATH")
    ckpt = load_checkpoint(path)
    try:
        model_from_checkpoint(ckpt)
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"teacher checkpoint {path} is unusable: {exc}") from None
    return ckpt


def cmd_train(rc: RunConfig) -> int:
    return _run(rc)


def cmd_distill(rc: RunConfig) -> int:
    ckpt = _load_teacher(rc)
    n_cls = ModelConfig(**ckpt.meta["model"]).num_classes
    corpus = _corpus(rc)
    if n_cls != corpus.num_classes:
        raise CheckpointError(f"class-count mismatch: teacher head has {n_cls} classes, "
                              f"corpus has {corpus.num_classes}")
    return _run(rc, ckpt, corpus)


def cmd_eval(rc: RunConfig) -> int:
    path = rc["eval.checkpoint"]
    if not path:
        raise ConfigError("eval needs --checkpoint PATH")
    ckpt = load_checkpoint(path)
    model = model_from_checkpoint(ckpt)
    root = Path(rc["data.root"])
    if not (root / "index.tsv").exists():
        raise VideoFormatError(f"no corpus index at {root / 'index.tsv'}")
    corpus = load_corpus(root)
    split = rc["eval.split"]
    if split not in ("train", "val"):
        raise ConfigError(f"config key eval.split must be train or val, got {split!r}")
    samples = corpus.val if split == "val" else corpus.train
    if not samples:
        raise VideoFormatError(f"{split} split at {root} is empty")
    size, _ = rc.crop()
    rows = []
    for views in rc["eval.views"]:
        rep = evaluate(model, samples, SamplingSpec(rc["sampling.frames"], rc["sampling.stride"], "eval"), size,
                       views=views)
        print(f"views {views[0]}x{views[1]} ({rep.views_per_sample}/sample): top1 {rep.top1:.4f} "
              f"top5 {rep.top5:.4f} over {rep.n_samples} {split} videos")
        rows.append(rep.csv_row())
    if rc["eval.out"]:
        with open(rc["eval.out"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            w.writerows(rows)
    return EXIT_OK


def cmd_inspect(rc: RunConfig) -> int:
    root = Path(rc["data.root"])
    sample_key = rc["inspect.sample"]
    if (root / "index.tsv").exists():
        corpus = load_corpus(root)
        pool = corpus.val or corpus.train
        match = [s for s in pool if s.id == sample_key]
        if match:
            video = match[0].frames
        elif sample_key.isdigit() and int(sample_key) < len(pool):
            video = pool[int(sample_key)].frames
        else:
            raise VideoFormatError(f"no sample {sample_key!r} in {root}")
        n_cls = corpus.num_classes
    else:
        spec = rc.synthetic()
        video, _ = synthetic_video(spec, 0, int(sample_key) if sample_key.isdigit() else 0)
        n_cls = len(spec.classes)
    if rc["inspect.checkpoint"]:
        model = model_from_checkpoint(load_checkpoint(rc["inspect.checkpoint"]))
    else:
        model = build_model(rc.model(n_cls), rc["seed"])
    size, _ = rc.crop()
    try:
        res = export_modulator_maps(model, video, rc["inspect.layer"], rc["inspect.out"],
                                    SamplingSpec(rc["sampling.frames"], rc["sampling.stride"], "eval"), size)
    except ValueError as exc:
        raise ConfigError(f"config key inspect.layer: {exc}") from None
    print(f"wrote {len(res['files'])} heatmaps ({res['spatial'].shape[1]}x{res['spatial'].shape[2]} per frame) "
          f"to {rc['inspect.out']}")
    return EXIT_OK


def count_rows(presets, frames: int, size: int, rc: RunConfig | None = None) -> list[tuple[str, int, float]]:
    rows = []
    for name in presets:
        if name in PRESETS:
            cfg = PRESETS[name](101)
        elif name == "config" and rc is not None:
            cfg = rc.model(101)
        else:
            raise ConfigError(f"config key count.preset: unknown preset {name!r}; use teacher, student or config")
        model = build_model(cfg, 0)
        rows.append((name, param_count(model), flop_count(cfg, frames, size, size) / 1e9))
    return rows


def cmd_count(rc: RunConfig) -> int:
    rows = count_rows(rc["count.preset"], rc["count.frames"], rc["count.size"], rc)
    if rc["count.csv"]:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["preset", "params", "gflops"])
        for name, params, gf in rows:
            w.writerow([name, params, f"{gf:.3f}"])
        sys.stdout.write(buf.getvalue())
    else:
        shape = f"{rc['count.frames']}x{rc['count.size']}x{rc['count.size']}"
        for name, params, gf in rows:
            print(f"{name:8s} params {params / 1e6:8.2f}M   GFLOPs @ {shape}: {gf:8.2f}")
    return EXIT_OK


ABLATE_HEADER = ("alpha", "tau", "top1", "top5", "seed")


def _ablate_cell(args):
    rc, teacher_path, alpha, tau = args
    corpus = _corpus(rc)
    size, scale = rc.crop()
    teacher = load_checkpoint(teacher_path)
    res = distill_student(corpus, teacher, rc.model(corpus.num_classes), DistillConfig(alpha, tau),
                          rc.schedule(), rc["seed"], sampling=rc.sampling(), crop_size=size, crop_scale=scale,
                          eval_every=rc["schedule.epochs"])
    last = res.rows[-1]
    return alpha, tau, last["top1"], last["top5"], res.rows


def cmd_ablate(rc: RunConfig) -> int:
    teacher_path = rc["run.teacher"]
    _load_teacher(rc)
    _corpus(rc)
    cells = [(rc, teacher_path, a, t) for a in rc["ablate.alphas"] for t in rc["ablate.taus"]]
    for a, t in ((c[2], c[3]) for c in cells):
        DistillConfig(a, t)
    workers = max(1, rc["ablate.workers"])
    if workers == 1:
        results = [_ablate_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_ablate_cell, cells))
    with open(rc["ablate.out"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATE_HEADER)
        for alpha, tau, top1, top5, _ in results:
            w.writerow([repr(alpha), repr(tau), repr(top1), repr(top5), rc["seed"]])
    for alpha, tau, top1, top5, _ in results:
        print(f"alpha {alpha:.2f} tau {tau:5.1f}: top1 {top1:.4f} top5 {top5:.4f}")
    if rc["ablate.sanity"]:
        corpus = _corpus(rc)
        size, scale = rc.crop()
        kw = dict(sampling=rc.sampling(), crop_size=size, crop_scale=scale, eval_every=rc["schedule.epochs"])
        plain = run_training(corpus, rc.model(corpus.num_classes), rc.schedule(), rc["seed"], **kw).rows
        zero = _ablate_cell((rc, teacher_path, 0.0, rc["ablate.taus"][0]))[4]
        gap = max(abs(a[k] - b[k]) for a, b in zip(plain, zero) for k in ("loss_total", "loss_ce"))
        ok = gap <= 1e-6
        print(f"alpha=0 sanity: max loss gap vs plain training {gap:.3g} ({'ok' if ok else 'MISMATCH'})")
        if not ok:
            return 1
    print(f"wrote {len(results)} rows to {rc['ablate.out']}")
    return EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate the synthetic motion corpus"),
    "train": (cmd_train, "supervised training (teacher by default)"),
    "distill": (cmd_distill, "train a student against a frozen teacher checkpoint"),
    "eval": (cmd_eval, "top-1/top-5 with single- and multi-view inference"),
    "inspect": (cmd_inspect, "export modulator heatmaps as PGM files"),
    "count": (cmd_count, "parameter and FLOP table for the presets"),
    "ablate": (cmd_ablate, "alpha x tau distillation grid"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stfocal", description=__doc__.split("\n\n")[0],
                                 epilog="Any config key may be given as --key value, e.g. --model.embed_dim 32.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="file of 'key = value' lines")
        p.add_argument("--profile", default="desk", help="desk (default) or paper")
        p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    handler = COMMANDS[args.command][0]
    try:
        rc = load_run_config(args.command, args.profile, args.config, parse_overrides(rest))
        return handler(rc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (VideoFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # dataclass validation messages already name the key
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
