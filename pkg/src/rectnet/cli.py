"""``rectnet`` command line: phantom | segment | build-dataset | train | detect | eval | describe | selftest.

Every stage reads its parameters from one resolved ``RunConfig``: built-in
defaults, then an optional JSON file (``--config``), then explicit flags.
Exit status is 0 on success, 1 on usage errors and 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path


log = logging.getLogger("rectnet")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- configuration

@dataclass
class PhantomBlock:
    count: int = 5
    first_index: int = 0
    n_nodules: tuple[int, int] = (1, 3)
    juxtapleural: bool = False
    noise_sd: float = 20.0
    nodule_hu: tuple[float, float] = (-200.0, 200.0)


@dataclass
class SegmentBlock:
    threshold_hu: float = -480.0
    dilate_radius: int = 3


@dataclass
class DatasetBlock:
    k: int = 3
    patch_size: int | None = None  # None: preset default
    scales: tuple[int, ...] | None = None
    grid_mult: float | None = None
    pos_rate: float | None = None
    augment_ops: tuple[str, ...] = ("flip_h", "flip_v", "rot90", "rot180", "rot270")


@dataclass
class TrainBlock:
    arch: str = "rectnet"
    pretrain: bool = True
    freeze_cnn: bool = False
    epochs: int | None = None
    pretrain_epochs: int | None = None
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.7
    patience: int = 5
    batches_per_epoch: int | None = None
    val_limit: int | None = None
    val_fraction: float = 0.2


@dataclass
class DetectBlock:
    grid_mult: float = 4.0
    accept_p: float = 0.75
    bandwidth: float = 1.5
    cutoff: float = 0.5
    batch_size: int = 128


@dataclass
class EvalBlock:
    operating_p: float = 0.75
    sweep: str = "0.5:0.99:0.01"
    agreement: int = 1


@dataclass
class PathsBlock:
    """Fallbacks for path flags not given on the command line."""

    data: str | None = None
    out: str | None = None
    volume: str | None = None
    manifest: str | None = None
    model: str | None = None
    candidates: str | None = None
    truth: str | None = None
    pgm: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    preset: str = "desk"
    deterministic: bool = False
    paths: PathsBlock = field(default_factory=PathsBlock)
    phantom: PhantomBlock = field(default_factory=PhantomBlock)
    segment: SegmentBlock = field(default_factory=SegmentBlock)
    dataset: DatasetBlock = field(default_factory=DatasetBlock)
    train: TrainBlock = field(default_factory=TrainBlock)
    detect: DetectBlock = field(default_factory=DetectBlock)
    eval: EvalBlock = field(default_factory=EvalBlock)

    def to_json(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


_BLOCKS = {f.name for f in fields(RunConfig) if f.default_factory is not MISSING}

PRESET_DEFAULTS = {
    "desk": {"patch_size": 30, "scales": (30, 48), "grid_mult": 4.0, "pos_rate": 0.1,
             "epochs": 12, "pretrain_epochs": 12, "batches_per_epoch": 60, "val_limit": 3000},
    "paper": {"patch_size": 50, "scales": (50, 80), "grid_mult": 25.0, "pos_rate": 0.5,
              "epochs": 30, "pretrain_epochs": 30, "batches_per_epoch": None, "val_limit": None},
}


PHANTOM_PRESET = {"desk": "desk", "paper": "full"}


def _coerce(block, key, value, where):
    cur = getattr(block, key)
    if isinstance(cur, tuple) or (cur is None and isinstance(value, list)):
        return tuple(value)
    return value


def _apply(block, updates: dict, where: str):
    names = {f.name for f in fields(block)}
    for key, value in updates.items():
        if key not in names:
            raise UsageError(f"unknown configuration key {where}.{key}")
        setattr(block, key, _coerce(block, key, value, where))


def load_config(path=None) -> RunConfig:
    """Defaults overlaid with a JSON document; unknown keys are rejected."""
    cfg = RunConfig()
    if path is None:
        return cfg
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    top = {f.name for f in fields(RunConfig)}
    for key, value in doc.items():
        if key not in top:
            raise UsageError(f"unknown configuration key {key}")
        if key in _BLOCKS:
            if not isinstance(value, dict):
                raise UsageError(f"configuration block {key} must be an object")
            _apply(getattr(cfg, key), value, key)
        else:
            setattr(cfg, key, value)
    return cfg


def resolved(cfg: RunConfig) -> RunConfig:
    """Fill preset-dependent defaults."""
    if cfg.preset not in PRESET_DEFAULTS:
        raise UsageError(f"unknown preset {cfg.preset!r}")
    p = PRESET_DEFAULTS[cfg.preset]
    ds = cfg.dataset
    for key in ("patch_size", "scales", "grid_mult", "pos_rate"):
        if getattr(ds, key) is None:
            setattr(ds, key, p[key])
    tr = cfg.train
    for key in ("epochs", "pretrain_epochs", "batches_per_epoch", "val_limit"):
        if getattr(tr, key) is None:
            setattr(tr, key, p[key])
    if tr.arch not in ("rectnet", "cnn"):
        raise UsageError(f"unknown architecture {tr.arch!r}")
    return cfg


# ---------------------------------------------------------------- parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _range(text):
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected lo:hi")
    return tuple(int(p) for p in parts)


def _ints(text):
    return tuple(int(p) for p in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="JSON run configuration (flags override it)")
    g.add_argument("--seed", type=int)
    g.add_argument("--preset", choices=sorted(PRESET_DEFAULTS))
    g.add_argument("--deterministic", action="store_true", default=None,
                   help="single-threaded numerics for byte-identical outputs")
    g.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="rectnet", description="Recurrent CNN nodule detection on CT volumes.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("phantom", parents=[common], help="generate synthetic CT phantoms")
    p.add_argument("--out")
    p.add_argument("--count", type=int, dest="phantom.count")
    p.add_argument("--first-index", type=int, dest="phantom.first_index")
    p.add_argument("--n-nodules", type=_range, dest="phantom.n_nodules", help="lo:hi nodules per phantom")
    p.add_argument("--juxtapleural", action="store_true", default=None, dest="phantom.juxtapleural")
    p.add_argument("--noise-sd", type=float, dest="phantom.noise_sd")

    p = sub.add_parser("segment", parents=[common], help="lung mask from a volume")
    p.add_argument("--volume", help="volume header, or a directory of volumes")
    p.add_argument("--out", help="mask header (or directory); default <name>.lung.json next to the volume")
    p.add_argument("--threshold-hu", type=float, dest="segment.threshold_hu")
    p.add_argument("--dilate-radius", type=int, dest="segment.dilate_radius")

    p = sub.add_parser("build-dataset", parents=[common], help="sample a training manifest")
    p.add_argument("--data", help="directory with volumes, annotations and lung masks")
    p.add_argument("--out", help="manifest (.jsonl)")
    p.add_argument("--k", type=int, dest="dataset.k")
    p.add_argument("--patch-size", type=int, dest="dataset.patch_size")
    p.add_argument("--scales", type=_ints, dest="dataset.scales")
    p.add_argument("--grid-mult", type=float, dest="dataset.grid_mult")
    p.add_argument("--pos-rate", type=float, dest="dataset.pos_rate")

    p = sub.add_parser("train", parents=[common], help="train ReCTnet or the CNN baseline")
    p.add_argument("--manifest")
    p.add_argument("--data", help="volume directory (default: the manifest's directory)")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--arch", choices=("rectnet", "cnn"), dest="train.arch")
    p.add_argument("--pretrain", action=argparse.BooleanOptionalAction, default=None, dest="train.pretrain")
    p.add_argument("--freeze-cnn", action="store_true", default=None, dest="train.freeze_cnn")
    p.add_argument("--epochs", type=int, dest="train.epochs")
    p.add_argument("--pretrain-epochs", type=int, dest="train.pretrain_epochs")
    p.add_argument("--batch-size", type=int, dest="train.batch_size")
    p.add_argument("--lr", type=float, dest="train.lr")

    p = sub.add_parser("detect", parents=[common], help="detect nodules in volumes")
    p.add_argument("--model")
    p.add_argument("--volume", help="volume header, or a directory of volumes")
    p.add_argument("--out", help="candidates JSON, or a directory")
    p.add_argument("--accept-p", type=float, dest="detect.accept_p")
    p.add_argument("--bandwidth", type=float, dest="detect.bandwidth")
    p.add_argument("--grid-mult", type=float, dest="detect.grid_mult")
    p.add_argument("--pgm", help="directory for per-slice probability-map images")

    p = sub.add_parser("eval", parents=[common], help="FROC and stratified sensitivity")
    p.add_argument("--candidates", help="directory of <name>.candidates.json")
    p.add_argument("--truth", help="directory of <name>.nodules.json")
    p.add_argument("--out", help="output directory for froc.csv and strata.csv")
    p.add_argument("--operating-p", type=float, dest="eval.operating_p")
    p.add_argument("--sweep", dest="eval.sweep", help="start:stop:step over accept_p")
    p.add_argument("--agreement", type=int, dest="eval.agreement", help="minimum reader agreement level")

    p = sub.add_parser("describe", parents=[common], help="layer table and parameter count")
    p.add_argument("--arch", choices=("rectnet", "cnn"), dest="train.arch")

    sub.add_parser("selftest", parents=[common], help="gradient checks and oracle suites")
    return parser


def resolve_args(args) -> RunConfig:
    cfg = load_config(args.config)
    for top in ("seed", "preset", "deterministic"):
        if getattr(args, top, None) is not None:
            setattr(cfg, top, getattr(args, top))
    for key, value in vars(args).items():
        if "." in key and value is not None:
            block, name = key.split(".")
            _apply(getattr(cfg, block), {name: value}, block)
    for f in fields(PathsBlock):
        if getattr(args, f.name, None) is not None:
            setattr(cfg.paths, f.name, getattr(args, f.name))
    return resolved(cfg)


_REQUIRED = {"phantom": ("out",), "segment": ("volume",), "build-dataset": ("data", "out"),
             "train": ("manifest", "out"), "detect": ("model", "volume", "out"),
             "eval": ("candidates", "truth", "out")}


def _check_paths(command: str, cfg: RunConfig) -> None:
    for name in _REQUIRED.get(command, ()):
        if getattr(cfg.paths, name) is None:
            raise UsageError(f"{command}: --{name} is required (flag or paths.{name} in the config)")


# ---------------------------------------------------------------- file helpers

def _stem(path: Path) -> str:
    name = path.name
    for suffix in (".nodules.json", ".lung.json", ".truth.json", ".candidates.json", ".json", ".raw"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


def list_volumes(directory) -> list[Path]:
    """Volume headers (int16) in a directory, sorted by name."""
    out = []
    for p in sorted(Path(directory).glob("*.json")):
        if p.name.endswith((".nodules.json", ".candidates.json")):
            continue
        try:
            head = json.loads(p.read_text())
        except (json.JSONDecodeError, UnicodeDecodeError):
            continue
        if isinstance(head, dict) and head.get("dtype") == "i16":
            out.append(p)
    return out


def _volume_inputs(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        vols = list_volumes(p)
        if not vols:
            raise FileNotFoundError(f"no volumes in {p}")
        return vols
    return [p]


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


# ---------------------------------------------------------------- commands

def cmd_phantom(args, cfg: RunConfig) -> int:
    from .phantom import generate_phantom, random_phantom_spec
    from .volume_io import annotations_path, write_annotations, write_mask, write_volume
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    pb = cfg.phantom
    for i in range(pb.first_index, pb.first_index + pb.count):
        spec = random_phantom_spec(cfg.seed * 100_003 + i, PHANTOM_PRESET[cfg.preset],
                                   tuple(pb.n_nodules), juxtapleural=pb.juxtapleural,
                                   nodule_hu=tuple(pb.nodule_hu), noise_sd=pb.noise_sd)
        vol, truth, anns = generate_phantom(spec)
        name = f"phantom{i:03d}"
        write_volume(vol, out / f"{name}.json")
        write_mask(truth, out / f"{name}.truth.json", spacing=vol.spacing)
        write_annotations(anns, vol.dims, annotations_path(out / name))
        log.info("%s: %d nodules", name, len(anns))
    print(f"wrote {pb.count} phantoms to {out}")
    return 0


def _seg_config(cfg):
    from .lung_seg import SegmentationConfig
    return SegmentationConfig(cfg.segment.threshold_hu, cfg.segment.dilate_radius)


def cmd_segment(args, cfg: RunConfig) -> int:
    from .lung_seg import segment_lungs
    from .volume_io import read_volume, write_mask
    inputs = _volume_inputs(cfg.paths.volume)
    for vp in inputs:
        vol = read_volume(vp)
        mask = segment_lungs(vol, _seg_config(cfg))
        if cfg.paths.out is None:
            dest = vp.parent / f"{_stem(vp)}.lung.json"
        elif len(inputs) > 1 or Path(cfg.paths.out).is_dir():
            Path(cfg.paths.out).mkdir(parents=True, exist_ok=True)
            dest = Path(cfg.paths.out) / f"{_stem(vp)}.lung.json"
        else:
            dest = Path(cfg.paths.out)
        write_mask(mask, dest, spacing=vol.spacing)
        log.info("%s -> %s (%d voxels)", vp, dest, int(mask.data.sum()))
    return 0


def _load_corpus(directory, cfg: RunConfig, names=None, need_masks=True):
    from .lung_seg import segment_lungs
    from .volume_io import annotations_path, read_annotations, read_mask, read_volume
    vols, anns, masks = {}, {}, {}
    for vp in list_volumes(directory):
        name = _stem(vp)
        if names is not None and name not in names:
            continue
        vols[name] = read_volume(vp)
        ap = annotations_path(vp.parent / name)
        anns[name] = read_annotations(ap) if ap.exists() else []
        if need_masks:
            mp = vp.parent / f"{name}.lung.json"
            masks[name] = read_mask(mp) if mp.exists() else segment_lungs(vols[name], _seg_config(cfg))
    if names is not None and set(names) - set(vols):
        raise FileNotFoundError(f"volumes missing from {directory}: {sorted(set(names) - set(vols))}")
    return vols, anns, masks


def _dataset_config(cfg: RunConfig):
    from .sampler import DatasetConfig
    ds = cfg.dataset
    return DatasetConfig(k=ds.k, patch_size=ds.patch_size, scales=tuple(ds.scales), grid_mult=ds.grid_mult,
                         pos_rate=ds.pos_rate, augment_ops=tuple(ds.augment_ops), seed=cfg.seed)


def cmd_build_dataset(args, cfg: RunConfig) -> int:
    from .sampler import build_dataset
    vols, anns, masks = _load_corpus(cfg.paths.data, cfg)
    if not vols:
        raise FileNotFoundError(f"no volumes in {cfg.paths.data}")
    manifest = build_dataset(vols, anns, masks, _dataset_config(cfg))
    manifest.save(cfg.paths.out)
    c = manifest.counts
    print(f"{len(manifest.entries)} entries ({c[1]} positive, {c[0]} negative) from {len(vols)} volumes")
    return 0


def model_configs(cfg: RunConfig, patch: int, k: int):
    from .models import CNN_PRESETS, RECTNET_PRESETS
    rc = replace(RECTNET_PRESETS[cfg.preset], patch=patch, k=k)
    cc = replace(CNN_PRESETS[cfg.preset], patch=patch, k=k)
    if cc.arch.startswith("I("):
        cc = replace(cc, arch=f"I({2 * k + 1})" + cc.arch[cc.arch.index(")") + 1:])
    return rc, cc


def cmd_train(args, cfg: RunConfig) -> int:
    from .nn.checkpoint import save_model
    from .sampler import DatasetManifest, StackSource
    from .training import TrainConfig, pretrain_cnn, split_by_volume, train_cnn_baseline, train_rectnet
    manifest = DatasetManifest.load(cfg.paths.manifest)
    if not manifest.entries:
        raise ValueError("manifest has no entries")
    data = cfg.paths.data or str(Path(cfg.paths.manifest).parent)
    vols, _, _ = _load_corpus(data, cfg, names=set(manifest.volumes()), need_masks=False)
    source = StackSource(manifest, vols)
    _, val_vols = split_by_volume(manifest.volumes(), cfg.train.val_fraction, cfg.seed)
    rc, cc = model_configs(cfg, manifest.config.patch_size, manifest.config.k)
    tb = cfg.train
    out = Path(cfg.paths.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    def tcfg(epochs):
        return TrainConfig(epochs=epochs, batch_size=tb.batch_size, lr=tb.lr, momentum=tb.momentum,
                           patience=tb.patience, batches_per_epoch=tb.batches_per_epoch,
                           val_limit=tb.val_limit, seed=cfg.seed)

    if tb.arch == "cnn":
        model, result = train_cnn_baseline(source, cc, tcfg(tb.epochs), val_vols, log_path=f"{out}.log.csv")
    else:
        pretrained = None
        if tb.pretrain:
            pretrained, r0 = pretrain_cnn(source, rc, tcfg(tb.pretrain_epochs), val_vols,
                                          log_path=f"{out}.pretrain.log.csv")
            save_model(pretrained, f"{out}.pretrain")
            log.info("pretraining best epoch %d", r0.best_epoch)
        model, result = train_rectnet(source, rc, tcfg(tb.epochs), pretrained, tb.freeze_cnn, val_vols,
                                      log_path=f"{out}.log.csv")
    save_model(model, out, meta={"best_epoch": result.best_epoch, "seed": cfg.seed})
    last = result.history[-1]
    print(f"saved {out}: best epoch {result.best_epoch}, val_loss {result.best_val_loss:.4f}, "
          f"last train_loss {last['train_loss']:.4f}")
    return 0


def cmd_detect(args, cfg: RunConfig) -> int:
    from .detector import DetectConfig, detect, save_detection, write_pgm_slices
    from .lung_seg import segment_lungs
    from .nn.checkpoint import load_model
    from .volume_io import read_mask, read_volume
    model = load_model(cfg.paths.model)
    db = cfg.detect
    dcfg = DetectConfig(db.grid_mult, db.accept_p, db.bandwidth, db.cutoff, db.batch_size, _seg_config(cfg))
    inputs = _volume_inputs(cfg.paths.volume)
    many = len(inputs) > 1 or Path(cfg.paths.volume).is_dir()
    if many:
        Path(cfg.paths.out).mkdir(parents=True, exist_ok=True)
    for vp in inputs:
        name = _stem(vp)
        vol = read_volume(vp)
        mp = vp.parent / f"{name}.lung.json"
        mask = read_mask(mp) if mp.exists() else segment_lungs(vol, dcfg.segmentation)
        result = detect(model, vol, dcfg, lung_mask=mask, volume_id=name)
        dest = Path(cfg.paths.out) / f"{name}.candidates.json" if many else Path(cfg.paths.out)
        save_detection(result, dest)
        if cfg.paths.pgm:
            write_pgm_slices(result.full_map, vol.dims, cfg.paths.pgm, prefix=name)
        print(f"{name}: {len(result.candidates)} candidates")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    from .detector import candidates_from_json
    from .evaluator import (STRATA, aggregate, filter_agreement, froc, match_candidates, save_strata_csv,
                            stratified_sensitivity, sweep_grid)
    from .volume_io import read_annotations
    cand_dir, truth_dir, out = Path(cfg.paths.candidates), Path(cfg.paths.truth), Path(cfg.paths.out)
    docs = {}
    for p in sorted(cand_dir.glob("*.candidates.json")):
        docs[_stem(p)] = json.loads(p.read_text())
    if not docs:
        raise FileNotFoundError(f"no candidate files in {cand_dir}")
    truth = {}
    for name in docs:
        tp = truth_dir / f"{name}.nodules.json"
        if not tp.exists():
            raise FileNotFoundError(f"no annotations for {name} in {truth_dir}")
        truth[name] = read_annotations(tp)
    truth = filter_agreement(truth, cfg.eval.agreement)
    steps = {d["grid_step"] for d in docs.values()}
    step = max(steps)
    a, b, c = (float(x) for x in cfg.eval.sweep.split(":"))
    grid = sweep_grid(a, b, c)
    curve = froc(lambda vid, p: candidates_from_json(docs[vid], p), truth, grid + [cfg.eval.operating_p], step)
    out.mkdir(parents=True, exist_ok=True)
    curve.save_csv(out / "froc.csv")
    outcomes = [match_candidates(candidates_from_json(docs[v], cfg.eval.operating_p), truth[v], step, v)
                for v in sorted(truth)]
    tables = {s: stratified_sensitivity(outcomes, truth, s) for s in STRATA}
    save_strata_csv(tables, out / "strata.csv")
    sens, fps = aggregate(outcomes)
    print(f"accept_p {cfg.eval.operating_p:g}: sensitivity {sens:.3f} at {fps:.2f} FPs/scan "
          f"over {len(outcomes)} volumes")
    return 0


def cmd_describe(args, cfg: RunConfig) -> int:
    from .models import CNN_PRESETS, RECTNET_PRESETS, MultiChannelCNN, ReCTNet, format_description
    if cfg.train.arch == "cnn":
        model = MultiChannelCNN(CNN_PRESETS[cfg.preset])
    else:
        model = ReCTNet(RECTNET_PRESETS[cfg.preset])
    print(format_description(model))
    return 0


def cmd_selftest(args, cfg: RunConfig) -> int:
    from .selftest import run_selftest
    ok = run_selftest(print)
    return 0 if ok else 2


COMMANDS = {"phantom": cmd_phantom, "segment": cmd_segment, "build-dataset": cmd_build_dataset,
            "train": cmd_train, "detect": cmd_detect, "eval": cmd_eval, "describe": cmd_describe,
            "selftest": cmd_selftest}


def _thread_limit(cfg: RunConfig):
    if cfg.deterministic:
        return 1
    env = os.environ.get("RECTNET_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"RECTNET_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise UsageError("RECTNET_THREADS must be at least 1")
        return n
    return None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        cfg = resolve_args(args)
        _check_paths(args.command, cfg)
        limit = _thread_limit(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    log.info("resolved config: %s", json.dumps(cfg.to_json(), sort_keys=True))
    from threadpoolctl import threadpool_limits
    try:
        with threadpool_limits(limits=limit):
            return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
