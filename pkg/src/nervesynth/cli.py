"""Command line: ``nervesynth {gen-data,train,sample,eval,report}``.

Each command takes an optional JSON config (``--config``); flags override it.
The resolved config is archived next to the command's outputs. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import biomarkers as B
from . import datagen, diffusion, downstream, metrics
from .adapt import DEFAULT_TARGETS
from .errors import ConfigError, DataError, NumericalError
from .imgio import read_gray, read_mask, write_gray, write_mask
from .model import CLASS_NAMES, Mmdit, MmditConfig, load_model, save_model
from .train import TrainConfig, fit, smooth

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SMOOTH_WINDOW = 100
INITIAL_WINDOW = 50


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
@dataclass
class DataConfig:
    n_per_class: int = 10
    test_fraction: float = 0.2
    image_size: int = datagen.TRAIN_SIZE
    full_size: int = datagen.FULL_SIZE
    format: str = "png"
    style: str = "ccm"


@dataclass
class AdapterConfig:
    kind: str = "wdlora"
    rank: int = 8
    scale: float = 1.0
    targets: list = field(default_factory=lambda: sorted(DEFAULT_TARGETS))
    norm_axis: str = "column"


@dataclass
class OptimConfig:
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    warmup_steps: int = 50
    cycles: float = 0.5
    max_steps: int = 2000
    batch_size: int = 8
    grad_clip: float = 1.0


@dataclass
class SampleConfig:
    n: int = 4
    stride: int = 20
    mask_source: str = "procedural"
    class_name: str = "control"


@dataclass
class EvalConfig:
    pillars: list = field(default_factory=lambda: [1, 2])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    cls_epochs: int = 30
    seg_epochs: int = 30
    hybrid_ratio: float = 1.0
    n_real_per_class: int | None = None
    feature_seed: int = 0


@dataclass
class ExperimentConfig:
    seed: int | None = None
    data: DataConfig = field(default_factory=DataConfig)
    model: MmditConfig = field(default_factory=MmditConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        cfg = cls()
        for key, val in doc.items():
            if key == "seed":
                cfg.seed = val
                continue
            sub = getattr(cfg, key, None)
            if sub is None or not hasattr(sub, "__dataclass_fields__"):
                raise ConfigError(f"unknown config section {key!r}")
            if not isinstance(val, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            names = {f.name for f in fields(sub)}
            for k, v in val.items():
                if k not in names:
                    raise ConfigError(f"unknown key {key}.{k}")
                setattr(sub, k, v)
        try:  # re-run validation
            cfg.model = MmditConfig(**asdict(cfg.model))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(doc)


def resolve_seed(flag: int | None, cfg: ExperimentConfig) -> int:
    """Flag, then config file, then ``NERVESYNTH_SEED``, then 0."""
    if flag is not None:
        return int(flag)
    if cfg.seed is not None:
        return int(cfg.seed)
    env = os.environ.get("NERVESYNTH_SEED")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"NERVESYNTH_SEED must be an integer, got {env!r}") from exc
    return 0


def _override(section, **kv) -> None:
    for k, v in kv.items():
        if v is not None:
            setattr(section, k, v)


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_json_safe(doc), indent=1, sort_keys=True) + "\n")


def _archive(out: Path, cfg: ExperimentConfig, seed: int, command: str) -> None:
    doc = cfg.as_dict()
    doc["seed"] = seed
    write_json(out / f"config.{command}.json", doc)


def _mkdir(path: str | Path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {p}: {exc}") from exc
    return p


def parse_class(name: str) -> list[int]:
    name = name.lower()
    if name == "all":
        return list(range(len(CLASS_NAMES)))
    if name not in CLASS_NAMES:
        raise ConfigError(f"unknown class {name!r}; choose from {{{', '.join(CLASS_NAMES)}}} or 'all'")
    return [CLASS_NAMES.index(name)]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_gen_data(args, cfg: ExperimentConfig) -> int:
    _override(cfg.data, n_per_class=args.n_per_class, test_fraction=args.test_fraction,
              format=args.format, style=args.style)
    seed = resolve_seed(args.seed, cfg)
    out = _mkdir(args.out)
    d = cfg.data
    man = datagen.gen_dataset(d.n_per_class, seed, out, d.image_size, d.full_size, d.test_fraction, d.format, d.style)
    _archive(out, cfg, seed, "gen-data")
    n_test = sum(e["split"] == "test" for e in man["samples"])
    print(f"wrote {len(man['samples'])} samples ({len(man['samples']) - n_test} train, {n_test} test) to {out}")
    return EXIT_OK


def cmd_train(args, cfg: ExperimentConfig) -> int:
    _override(cfg.optim, lr=args.lr, max_steps=args.max_steps, batch_size=args.batch_size,
              warmup_steps=args.warmup_steps)
    _override(cfg.adapter, kind=args.adapter, rank=args.rank, scale=args.scale)
    if args.targets:
        cfg.adapter.targets = sorted(args.targets.split(","))
    seed = resolve_seed(args.seed, cfg)
    man = datagen.load_manifest(args.data)
    images, masks, labels = datagen.load_arrays(man, "train")
    if len(labels) == 0:
        raise DataError(f"no training samples in {args.data}")
    if args.base:
        model, _ = load_model(args.base)
        if model.adapters:
            raise ConfigError("base checkpoint already carries adapters")
        cfg.model = model.config
    else:
        model = Mmdit(cfg.model)
    if images.shape[1] != cfg.model.image_size:
        raise DataError(f"images are {images.shape[1]} px, model expects {cfg.model.image_size}")
    adapter_report = None
    if not args.full:
        a = cfg.adapter
        adapter_report = model.attach(a.kind, a.rank, set(a.targets), seed, a.scale, a.norm_axis)
    hash_before = model.frozen_hash()
    out = _mkdir(args.out)
    _archive(out, cfg, seed, "train")
    o = cfg.optim
    tcfg = TrainConfig(lr=o.lr, beta1=o.beta1, beta2=o.beta2, warmup_steps=o.warmup_steps, cycles=o.cycles,
                       max_steps=o.max_steps, batch_size=o.batch_size, seed=seed, grad_clip=o.grad_clip)
    losses = fit(model, images, masks, labels, tcfg, diffusion.make_schedule(), log_path=out / "loss.csv")
    hash_after = model.frozen_hash()
    save_model(model, out / "model", extra={"seed": seed, "data": Path(args.data).name})
    sm = smooth(losses, SMOOTH_WINDOW)
    initial = float(np.mean(losses[:INITIAL_WINDOW]))
    doc = {
        "steps": len(losses), "initial_loss": initial, "final_smoothed_loss": float(sm[-1]),
        "reduction": 1.0 - float(sm[-1]) / initial, "smooth_window": SMOOTH_WINDOW,
        "initial_window": INITIAL_WINDOW, "mode": "full" if args.full else "adapter",
        "frozen_hash_before": hash_before, "frozen_hash_after": hash_after,
        "trainable_parameters": model.num_parameters(trainable_only=True),
        "total_parameters": model.num_parameters(),
        "adapter": adapter_report.as_dict() if adapter_report else None,
    }
    write_json(out / "train.json", doc)
    print(f"trained {len(losses)} steps: loss {initial:.4f} -> {sm[-1]:.4f} (smoothed); checkpoint {out / 'model'}")
    return EXIT_OK


def cmd_sample(args, cfg: ExperimentConfig) -> int:
    _override(cfg.sample, n=args.n, stride=args.stride, mask_source=args.mask_source, class_name=args.class_name)
    s = cfg.sample
    if s.mask_source not in ("dataset", "procedural"):
        raise ConfigError("mask_source must be 'dataset' or 'procedural'")
    if s.n < 1:
        raise ConfigError("n must be >= 1")
    classes = parse_class(s.class_name)
    seed = resolve_seed(args.seed, cfg)
    try:
        model, doc = load_model(args.checkpoint)
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {args.checkpoint}") from exc
    size = model.config.image_size
    out = _mkdir(args.out)
    _mkdir(out / "images")
    _mkdir(out / "masks")
    pool = None
    if s.mask_source == "dataset":
        if not args.data:
            raise ConfigError("--data is required with mask_source=dataset")
        man = datagen.load_manifest(args.data)
        pool = datagen.split(man, "test")
    sched = diffusion.make_schedule()
    ss = np.random.SeedSequence(seed)
    entries = []
    for class_id, child in zip(classes, ss.spawn(len(classes))):
        mask_seeds = child.generate_state(s.n)
        masks, sources = [], []
        if pool is not None:
            rows = [e for e in pool if e["class_id"] == class_id]
            if not rows:
                raise DataError(f"no held-out masks for class {CLASS_NAMES[class_id]}")
            for i in range(s.n):
                e = rows[i % len(rows)]
                masks.append(read_mask(Path(man["_root"]) / e["mask"]))
                sources.append(e["id"])
        else:
            for ms in mask_seeds:
                full, _ = datagen.gen_mask(class_id, int(ms))
                masks.append(datagen.downsample_mask(full, size))
                sources.append(None)
        masks = np.stack(masks)
        if masks.shape[1:] != (size, size):
            raise DataError(f"masks are {masks.shape[1:]}, model expects {size}x{size}")
        imgs = diffusion.sample(model, masks, class_id, sched, seed=int(child.generate_state(1, np.uint32)[0]),
                                stride=s.stride)
        for i, (img, mk, src) in enumerate(zip(imgs, masks, sources)):
            name = f"gen_{CLASS_NAMES[class_id]}_{i:04d}"
            write_gray(out / "images" / f"{name}.png", img)
            write_mask(out / "masks" / f"{name}.png", mk)
            entries.append({"id": name, "class": CLASS_NAMES[class_id], "class_id": class_id, "split": "synthetic",
                            "image": f"images/{name}.png", "mask": f"masks/{name}.png", "source_id": src})
    manifest = {"format": "nervesynth-dataset-v1", "generated": True, "seed": seed, "image_size": size,
                "mask_source": s.mask_source, "stride": s.stride, "classes": list(CLASS_NAMES), "samples": entries}
    write_json(out / "manifest.json", manifest)
    _archive(out, cfg, seed, "sample")
    print(f"wrote {len(entries)} samples to {out}")
    return EXIT_OK


# -- evaluation ----------------------------------------------------------------
def _load_all(man: dict, which: str | None):
    rows = man["samples"] if which is None else datagen.split(man, which)
    root = Path(man["_root"])
    imgs = np.stack([read_gray(root / e["image"]) for e in rows]) if rows else np.zeros((0, 1, 1))
    return rows, imgs


def _stats(vals: list) -> dict:
    arr = np.asarray(vals, dtype=np.float64)
    return {"mean": float(arr.mean()) if arr.size else None,
            "sd": float(arr.std(ddof=1)) if arr.size > 1 else (0.0 if arr.size else None), "n": int(arr.size)}


def _fidelity(real_rows, real_imgs, gen_rows, gen_imgs, extractor) -> tuple[dict, dict]:
    real_f, gen_f = extractor(real_imgs), extractor(gen_imgs)
    real_lab = np.array([e["class_id"] for e in real_rows])
    gen_lab = np.array([e["class_id"] for e in gen_rows])
    real_by_id = {e["id"]: i for i, e in enumerate(real_rows)}
    per_class = {}
    for c, name in enumerate(CLASS_NAMES):
        rm, gm = real_lab == c, gen_lab == c
        row = {"n_real": int(rm.sum()), "n_gen": int(gm.sum()), "fid": None, "psnr": None, "ssim": None, "n_pairs": 0}
        if rm.sum() >= 2 and gm.sum() >= 2:
            row["fid"] = metrics.fid(metrics.GaussianStats.from_features(real_f[rm]),
                                     metrics.GaussianStats.from_features(gen_f[gm]))
        pairs = []
        for gi in np.flatnonzero(gm):
            src = gen_rows[gi].get("source_id") or gen_rows[gi]["id"]
            if src in real_by_id:
                pairs.append((real_by_id[src], gi))
        if pairs:
            row["psnr"] = float(np.mean([metrics.psnr(real_imgs[r], gen_imgs[g]) for r, g in pairs]))
            row["ssim"] = float(np.mean([metrics.ssim(real_imgs[r], gen_imgs[g]) for r, g in pairs]))
            row["n_pairs"] = len(pairs)
        per_class[name] = row
    avg = {}
    for key in ("fid", "psnr", "ssim"):
        vals = [r[key] for r in per_class.values() if r[key] is not None]
        avg[key] = float(np.mean(vals)) if vals else None
    fidelity = {"per_class": per_class, "average": avg, "feature_seed": extractor.seed}

    div = {"intra_class": {}, "separability": {}}
    for src, feats, lab in (("real", real_f, real_lab), ("generated", gen_f, gen_lab)):
        groups = {CLASS_NAMES[c]: feats[lab == c] for c in np.unique(lab) if (lab == c).sum() >= 2}
        div["intra_class"][src] = metrics.intra_class_diversity(groups) if groups else {}
        div["separability"][src] = (metrics.inter_class_separability(groups) if len(groups) >= 2 else None)
    a, b = div["separability"]["real"], div["separability"]["generated"]
    div["separability"]["relative_difference"] = (metrics.relative_difference(a, b)
                                                  if a is not None and b is not None else None)
    return fidelity, div


def _biomarker_rows(real_man, real_rows, real_imgs, gen_rows, gen_imgs) -> list[dict]:
    root = Path(real_man["_root"])
    rows = []
    sources = [("real-annotation", real_rows, None), ("real", real_rows, real_imgs), ("generated", gen_rows, gen_imgs)]
    for c, name in enumerate(CLASS_NAMES):
        for source, entries, imgs in sources:
            reps = []
            for i, e in enumerate(entries):
                if e["class_id"] != c:
                    continue
                if imgs is None:
                    key = "mask_full" if "mask_full" in e else "mask"
                    mask = read_mask(root / e[key])
                else:
                    mask = B.segment_image(imgs[i])
                reps.append(B.report(mask))
            if not reps:
                continue
            summ = B.cohort_summary(reps)
            rows.append({"group": name, "source": source, **summ})
    return rows


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    if args.pillar:
        cfg.eval.pillars = sorted(set(args.pillar))
    _override(cfg.eval, n_real_per_class=args.n_real_per_class, hybrid_ratio=args.hybrid_ratio)
    if args.eval_seeds:
        cfg.eval.seeds = [int(x) for x in args.eval_seeds.split(",")]
    ev = cfg.eval
    if not set(ev.pillars) <= {1, 2, 3}:
        raise ConfigError("pillars must be drawn from 1, 2, 3")
    seed = resolve_seed(args.seed, cfg)
    real_man = datagen.load_manifest(args.real)
    gen_man = datagen.load_manifest(args.gen)
    which = args.real_split if args.real_split != "all" else None
    real_rows, real_imgs = _load_all(real_man, which)
    gen_rows, gen_imgs = _load_all(gen_man, None)
    if not real_rows or not gen_rows:
        raise DataError("both manifests need at least one sample")
    report = {"format": "nervesynth-eval-v1", "pillars": ev.pillars, "seed": seed,
              "real": {"n": len(real_rows), "split": args.real_split,
                       "hash": datagen.manifest_hash(real_man, which)},
              "generated": {"n": len(gen_rows), "hash": datagen.manifest_hash(gen_man)}}
    if 1 in ev.pillars:
        fidelity, div = _fidelity(real_rows, real_imgs, gen_rows, gen_imgs, metrics.FeatureExtractor(ev.feature_seed))
        report["fidelity"] = fidelity
        report["diversity"] = div
    if 2 in ev.pillars:
        report["biomarkers"] = {"units": B.UNITS, "rows": _biomarker_rows(real_man, real_rows, real_imgs,
                                                                         gen_rows, gen_imgs)}
    if 3 in ev.pillars:
        test_hash = datagen.manifest_hash(real_man, "test")
        regimes = [downstream.Regime(kind, real_man, None if kind == "A_real_only" else gen_man,
                                     ev.hybrid_ratio, n_real_per_class=ev.n_real_per_class)
                   for kind in downstream.KINDS]
        rows = downstream.run_regimes(regimes, ev.seeds, ev.cls_epochs, ev.seg_epochs)
        if datagen.manifest_hash(real_man, "test") != test_hash:
            raise DataError("held-out test split changed during evaluation")
        report["downstream"] = {"rows": rows, "test_hash": test_hash, "hybrid_ratio": ev.hybrid_ratio,
                                "n_real_per_class": ev.n_real_per_class}
    out = Path(args.out)
    _mkdir(out.parent)
    write_json(out, report)
    text = render_report(json.loads(out.read_text()))
    out.with_suffix(".txt").write_text(text + "\n")
    _archive(out.parent, cfg, seed, "eval")
    print(text)
    return EXIT_OK


def _fmt(v, spec: str = ".4f") -> str:
    if v is None:
        return "n/a"
    if isinstance(v, str):
        return v
    return format(v, spec)


def render_report(doc: dict) -> str:
    """Text tables for an evaluation report."""
    parts = []
    if "fidelity" in doc:
        lines = ["Visual fidelity", f"{'Class':<10}  {'FID':>10}  {'PSNR (dB)':>10}  {'SSIM':>8}  {'pairs':>5}"]
        per = doc["fidelity"]["per_class"]
        for name in [n for n in CLASS_NAMES if n in per]:
            r = per[name]
            lines.append(f"{name:<10}  {_fmt(r['fid']):>10}  {_fmt(r['psnr'], '.2f'):>10}  "
                         f"{_fmt(r['ssim']):>8}  {r['n_pairs']:>5}")
        a = doc["fidelity"]["average"]
        lines.append(f"{'average':<10}  {_fmt(a['fid']):>10}  {_fmt(a['psnr'], '.2f'):>10}  {_fmt(a['ssim']):>8}")
        parts.append("\n".join(lines))
    if "diversity" in doc:
        d = doc["diversity"]
        lines = ["Diversity", f"{'Source':<10}  " + "  ".join(f"{n:>10}" for n in CLASS_NAMES) + f"  {'Separability':>12}"]
        for src in ("real", "generated"):
            intra = d["intra_class"].get(src, {})
            lines.append(f"{src:<10}  " + "  ".join(f"{_fmt(intra.get(n)):>10}" for n in CLASS_NAMES)
                         + f"  {_fmt(d['separability'].get(src)):>12}")
        lines.append(f"relative difference of separability: {_fmt(d['separability'].get('relative_difference'))}")
        parts.append("\n".join(lines))
    if "biomarkers" in doc:
        rows = sorted(doc["biomarkers"]["rows"], key=lambda r: CLASS_NAMES.index(r["group"]))
        table = B.format_table([(r["group"], r["source"], r) for r in rows])
        parts.append("Clinical biomarkers\n" + table)
    if "downstream" in doc:
        parts.append("Downstream tasks\n" + downstream.format_rows(doc["downstream"]["rows"]))
    return "\n\n".join(parts)


def cmd_report(args, cfg: ExperimentConfig) -> int:
    try:
        doc = json.loads(Path(args.eval).read_text())
    except FileNotFoundError as exc:
        raise DataError(f"no evaluation report at {args.eval}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.eval} is not valid JSON") from exc
    if doc.get("format") != "nervesynth-eval-v1":
        raise DataError(f"{args.eval} is not an evaluation report")
    text = render_report(doc)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nervesynth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="global seed (falls back to NERVESYNTH_SEED)")

    g = sub.add_parser("gen-data", help="write a procedural dataset")
    common(g)
    g.add_argument("--out", required=True)
    g.add_argument("--n-per-class", type=int)
    g.add_argument("--test-fraction", type=float)
    g.add_argument("--format", choices=["png", "pgm"])
    g.add_argument("--style", choices=sorted(datagen.STYLES))
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="fine-tune adapters (or pretrain with --full)")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--base", help="checkpoint stem of a base model")
    t.add_argument("--full", action="store_true", help="train every parameter, no adapters")
    t.add_argument("--adapter", choices=["lora", "wdlora"])
    t.add_argument("--rank", type=int)
    t.add_argument("--scale", type=float)
    t.add_argument("--targets", help="comma-separated layer roles")
    t.add_argument("--lr", type=float)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--warmup-steps", type=int)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw conditional samples")
    common(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--class", dest="class_name")
    s.add_argument("--mask-source", choices=["dataset", "procedural"])
    s.add_argument("--data", help="dataset whose held-out masks are reused")
    s.add_argument("--n", type=int)
    s.add_argument("--stride", type=int)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="three-pillar evaluation")
    common(e)
    e.add_argument("--real", required=True)
    e.add_argument("--gen", required=True)
    e.add_argument("--out", required=True, help="report JSON path")
    e.add_argument("--real-split", choices=["test", "train", "all"], default="test",
                   help="real samples used for pillars 1 and 2")
    e.add_argument("--pillar", type=int, action="append", choices=[1, 2, 3])
    e.add_argument("--n-real-per-class", type=int)
    e.add_argument("--hybrid-ratio", type=float)
    e.add_argument("--eval-seeds", help="comma-separated downstream seeds")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="render an evaluation report as text")
    common(r)
    r.add_argument("--eval", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, copy.deepcopy(cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
