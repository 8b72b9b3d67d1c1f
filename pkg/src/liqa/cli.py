"""Command-line entry point.

Every subcommand accepts ``--config FILE``: a flat ``key = value`` text file
whose keys are the long flag names without dashes (``batch-size = 16`` or
``batch_size = 16``). Precedence is flags > config file > built-in defaults.
Unknown flags or keys are usage errors. Each run writes ``config.resolved``
into its output directory; ``liqa <cmd> --config <out>/config.resolved``
repeats it.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, CheckpointError
from .data.augment import AugmentConfig
from .data.dataset import FrameArrays, build_dataset, load_frames, load_split
from .data.manifest import DatasetManifest
from .data.pgm import PGMError, read_pgm, write_pgm
from .data.phantom import PhantomGeometry
from .data.preprocess import preprocess
from .heads import ThresholdRule
from .lora import LoraConfig, LoraError
from .metrics import EvalReport, aggregate, format_table, report_records
from .model import HEADS, STRATEGIES, ModelConfig, build_model
from .pca import ConvergenceError, pca_project
from .tensor import GraphError, ShapeError
from .train import (TrainConfig, TrainingError, evaluate, export_embeddings, model_checkpoint,
                    model_from_checkpoint, predict, train)
from .vit import PROJECTIONS, EncoderConfig

log = logging.getLogger("liqa")

ENV_OUTPUT = "LIQA_OUTPUT"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3
RUNTIME_ERRORS = (TrainingError, CheckpointError, PGMError, ConvergenceError, LoraError,
                  ShapeError, GraphError, OSError, ValueError)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- option helpers -------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _targets(text: str) -> tuple[str, ...]:
    vals = tuple(v.strip() for v in str(text).split(",") if v.strip())
    bad = [v for v in vals if v not in PROJECTIONS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown LoRA targets {bad}; choose from {list(PROJECTIONS)}")
    return vals


class Options:
    """Declares flags with real defaults kept aside, so explicit flags can be
    told apart from defaults when merging with a config file."""

    def __init__(self, parser: argparse.ArgumentParser):
        self.parser = parser
        self.defaults: dict[str, object] = {}
        self.types: dict[str, object] = {}

    def add(self, flag: str, default=None, type=str, help: str = "", **kw):
        dest = flag.lstrip("-").replace("-", "_")
        self.defaults[dest] = default
        self.types[dest] = type
        shown = f" (default: {default})" if default not in (None, "") else ""
        self.parser.add_argument(flag, dest=dest, type=type, default=argparse.SUPPRESS,
                                 help=help + shown, **kw)

    def switch(self, flag: str, default: bool, help: str):
        """``--name`` / ``--no-name`` pair for a boolean option."""
        name = flag.lstrip("-")
        dest = name.replace("-", "_")
        self.defaults[dest] = default
        self.types[dest] = _bool
        group = self.parser.add_mutually_exclusive_group()
        group.add_argument(f"--{name}", dest=dest, action="store_const", const=True,
                           default=argparse.SUPPRESS, help=f"{help} (default: {default})")
        group.add_argument(f"--no-{name}", dest=dest, action="store_const", const=False,
                           default=argparse.SUPPRESS, help=argparse.SUPPRESS if default is False else f"disable: {help}")


def read_config(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(opts: Options, ns: argparse.Namespace) -> dict:
    explicit = {k: v for k, v in vars(ns).items() if k in opts.defaults}
    resolved = dict(opts.defaults)
    if getattr(ns, "config", None):
        for key, raw in read_config(ns.config).items():
            if key == "command":
                continue
            if key not in opts.defaults:
                raise UsageError(f"unknown config key {key!r} in {ns.config}")
            conv = opts.types[key]
            try:
                resolved[key] = None if raw in ("", "None") else conv(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"bad value for {key!r} in {ns.config}: {exc}") from None
    resolved.update(explicit)
    return resolved


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def write_snapshot(out: Path, command: str, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# resolved configuration, liqa {__version__}", f"command = {command}"]
    lines += [f"{k} = {_format_value(v)}" for k, v in sorted(cfg.items())]
    (out / "config.resolved").write_text("\n".join(lines) + "\n", encoding="utf-8")


def output_dir(cfg: dict, command: str) -> Path:
    if cfg.get("out"):
        return Path(cfg["out"])
    return Path(os.environ.get(ENV_OUTPUT, "liqa_runs")) / command


# -- shared option groups -----------------------------------------------------

def _model_options(o: Options) -> None:
    enc, lora = EncoderConfig(), LoraConfig()
    o.add("--head", "classification", choices=HEADS, help="task head")
    o.add("--strategy", "lora", choices=STRATEGIES, help="fine-tuning strategy")
    o.add("--image-size", enc.image_size, int, "working resolution S")
    o.add("--patch-size", enc.patch_size, int, "ViT patch size")
    o.add("--embed-dim", enc.embed_dim, int, "ViT width")
    o.add("--depth", enc.depth, int, "number of transformer blocks")
    o.add("--num-heads", enc.num_heads, int, "attention heads")
    o.add("--mlp-ratio", enc.mlp_ratio, float, "MLP hidden width / embed dim")
    o.add("--encoder-seed", 0, int, "seed of the frozen stand-in encoder")
    o.add("--lora-rank", lora.rank, int, "adapter rank r")
    o.add("--lora-alpha", lora.alpha, float, "adapter alpha (scale alpha / r)")
    o.add("--lora-targets", ",".join(lora.targets), _targets, "comma-separated projections")


def model_config(cfg: dict) -> ModelConfig:
    enc = EncoderConfig(image_size=cfg["image_size"], patch_size=cfg["patch_size"],
                        embed_dim=cfg["embed_dim"], depth=cfg["depth"],
                        num_heads=cfg["num_heads"], mlp_ratio=cfg["mlp_ratio"])
    targets = cfg["lora_targets"]
    if isinstance(targets, str):
        targets = _targets(targets)
    lora = LoraConfig(rank=cfg["lora_rank"], alpha=cfg["lora_alpha"], targets=targets)
    return ModelConfig(encoder=enc, lora=lora, head=cfg["head"], strategy=cfg["strategy"],
                       encoder_seed=cfg["encoder_seed"])


def _common(o: Options) -> None:
    o.parser.add_argument("--config", help="flat key = value file; flags override it")
    o.add("--out", None, str, f"output directory (default: ${ENV_OUTPUT}/<command> or ./liqa_runs/<command>)")
    o.add("--verbose", False, _bool, "log progress to stderr")


# -- generate-data ------------------------------------------------------------

def _geometry_flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def setup_generate(o: Options) -> None:
    o.add("--patients", 60, int, "number of synthetic patients")
    o.add("--seed", 0, int, "global seed")
    o.add("--workers", 1, int, "parallel worker processes (output does not depend on it)")
    o.add("--ratios", (0.7, 0.1, 0.2), _floats, "train,val,test patient fractions")
    o.switch("--filter", True, "drop sweeps without any annotated frame")
    o.switch("--augment", True, "add augmented copies of training frames")
    for f in fields(PhantomGeometry):
        o.add(_geometry_flag(f.name), f.default, type(f.default), f"phantom {f.name.replace('_', ' ')}")
    aug = AugmentConfig()
    o.add("--aug-versions", aug.versions, int, "augmented copies per training frame")
    o.add("--aug-clahe-p", aug.clahe_p, float, "probability of CLAHE per copy")
    o.add("--aug-rotation", aug.rotation_deg, float, "max rotation in degrees")
    o.add("--aug-translate", aug.translate, float, "max shift as a fraction of the side")
    o.add("--aug-gain", aug.gain, _floats, "brightness gain range lo,hi")
    o.add("--aug-bias", aug.bias, _floats, "brightness bias range lo,hi (fraction of 255)")
    o.add("--aug-scale", aug.scale, _floats, "zoom range lo,hi")


def cmd_generate(cfg: dict, out: Path) -> int:
    geo = PhantomGeometry(**{f.name: cfg[f.name] for f in fields(PhantomGeometry)})
    aug = AugmentConfig(gain=tuple(cfg["aug_gain"]), bias=tuple(cfg["aug_bias"]),
                        clahe_p=cfg["aug_clahe_p"], rotation_deg=cfg["aug_rotation"],
                        translate=cfg["aug_translate"], scale=tuple(cfg["aug_scale"]),
                        versions=cfg["aug_versions"])
    t0 = time.perf_counter()
    res = build_dataset(out, cfg["patients"], cfg["seed"], geo, filter_empty=cfg["filter"],
                        ratios=tuple(cfg["ratios"]), augment_train=cfg["augment"],
                        augment_cfg=aug, workers=cfg["workers"])
    meta = res.final.metadata
    counts = {s: sum(1 for v in res.splits.values() if v == s) for s in ("train", "val", "test")}
    print(f"raw records:          {len(res.raw)}")
    print(f"prevalence raw:       {100 * res.raw.prevalence:.2f}%")
    if cfg["filter"]:
        print(f"prevalence filtered:  {100 * meta['filtered_prevalence']:.2f}% "
              f"({meta['sweeps_dropped']} sweeps dropped)")
    print(f"patients train/val/test: {counts['train']}/{counts['val']}/{counts['test']}")
    print(f"final records:        {len(res.final)}  -> {out / 'manifest.jsonl'}")
    log.info("generate-data took %.1fs", time.perf_counter() - t0)
    return EXIT_OK


# -- train --------------------------------------------------------------------

def setup_train(o: Options) -> None:
    o.add("--data", None, str, "dataset directory")
    _model_options(o)
    tc = TrainConfig()
    o.add("--lr", tc.lr, float, "AdamW learning rate")
    o.add("--epochs", tc.epochs, int, "training epochs")
    o.add("--batch-size", tc.batch_size, int, "minibatch size")
    o.add("--weight-decay", tc.weight_decay, float, "decoupled weight decay")
    o.add("--betas", tc.betas, _floats, "Adam betas b1,b2")
    o.add("--eps", tc.eps, float, "Adam epsilon")
    o.add("--seed", 0, int, "first seed; repeat i uses seed + i")
    o.add("--repeats", tc.repeats, int, "independent training runs")
    o.add("--max-train-frames", None, int, "train on a label-stratified subset of this many frames")
    o.add("--eval-split", "test", choices=("val", "test"), help="split evaluated after training")
    o.add("--threshold-fraction", 0.01, float, "mask area fraction above which a frame is positive")
    o.add("--workers", 1, int, "parallel processes for repeats")


def _train_one(job) -> dict:
    cfg, seed, out = job
    mcfg = model_config(cfg)
    s = mcfg.encoder.image_size
    tcfg = TrainConfig(lr=cfg["lr"], epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                       weight_decay=cfg["weight_decay"], betas=tuple(cfg["betas"]), eps=cfg["eps"],
                       seed=seed, repeats=cfg["repeats"], max_train_frames=cfg["max_train_frames"])
    man = DatasetManifest.read(Path(cfg["data"]) / "manifest.jsonl")
    tr = load_split(cfg["data"], "train", s, man)
    va = load_split(cfg["data"], "val", s, man)
    res = train(mcfg, tcfg, tr, va)
    run_dir = Path(out) / f"seed_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    res.best.save(run_dir / "best.ckpt")
    with open(run_dir / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        loss_name = "dice_loss" if mcfg.head == "segmentation" else "bce"
        w.writerow(["epoch", f"train_{loss_name}", f"val_{loss_name}"])
        for r in res.history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss)])
    ev = load_split(cfg["data"], cfg["eval_split"], s, man)
    rep, _ = evaluate(res.model, ev, ThresholdRule(s, s, cfg["threshold_fraction"]))
    (run_dir / "report.json").write_text(json.dumps(rep.as_dict(), sort_keys=True) + "\n")
    return {"seed": seed, "report": rep, "best_epoch": res.best_epoch,
            "history": [(r.epoch, r.train_loss, r.val_loss) for r in res.history]}


def cmd_train(cfg: dict, out: Path) -> int:
    if not cfg["data"]:
        raise UsageError("train: --data is required")
    if cfg["repeats"] < 1:
        raise UsageError("train: --repeats must be >= 1")
    mcfg = model_config(cfg)
    trainable = build_model(mcfg).count_trainable()
    name = f"{mcfg.head}/{mcfg.strategy}"
    print(f"model {name}: {trainable} trainable parameters")
    seeds = [cfg["seed"] + i for i in range(cfg["repeats"])]
    jobs = [(cfg, s, str(out)) for s in seeds]
    if cfg["workers"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(j) for j in jobs]
    for r in results:
        hist = ", ".join(f"e{e}: {tl:.4f}/{vl:.4f}" for e, tl, vl in r["history"])
        print(f"seed {r['seed']}: best epoch {r['best_epoch']} (train/val loss {hist})")
    reports = [r["report"] for r in results]
    lines = report_records(reports, seeds, model=name, split=cfg["eval_split"], trainable=trainable)
    (out / "report.jsonl").write_text("\n".join(lines) + "\n")
    if len(reports) >= 2:
        table = format_table({name: aggregate(reports)}, {name: trainable})
    else:
        table = format_table({name: {k: (v, 0.0) for k, v in reports[0].as_dict().items()
                                     if isinstance(v, float)}}, {name: trainable})
    (out / "report.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


# -- evaluate / predict -------------------------------------------------------

def _load_checkpoint(path) -> tuple[Checkpoint, object]:
    if not path:
        raise UsageError("--checkpoint is required")
    ckpt = Checkpoint.load(path)
    return ckpt, model_from_checkpoint(ckpt)


def setup_evaluate(o: Options) -> None:
    o.add("--checkpoint", None, str, "checkpoint file")
    o.add("--data", None, str, "dataset directory")
    o.add("--split", "test", choices=("train", "val", "test"), help="split to evaluate")
    o.add("--threshold-fraction", 0.01, float, "mask area fraction above which a frame is positive")
    o.add("--export-masks", False, _bool, "write predicted masks as 0/255 PGM files",
          nargs="?", const=True)


def cmd_evaluate(cfg: dict, out: Path) -> int:
    if not cfg["data"]:
        raise UsageError("evaluate: --data is required")
    ckpt, model = _load_checkpoint(cfg["checkpoint"])
    s = model.cfg.encoder.image_size
    frames = load_split(cfg["data"], cfg["split"], s)
    rep, pred = evaluate(model, frames, ThresholdRule(s, s, cfg["threshold_fraction"]))
    name = f"{model.cfg.head}/{model.cfg.strategy}"
    lines = report_records([rep], [int(ckpt.metadata.get("seed", 0))], model=name, split=cfg["split"])
    (out / "report.jsonl").write_text("\n".join(lines) + "\n")
    table = format_table({name: {k: (v, 0.0) for k, v in rep.as_dict().items() if isinstance(v, float)}})
    (out / "report.txt").write_text(table + "\n")
    print(f"{cfg['split']}: {rep.total} frames, tp={rep.tp} fp={rep.fp} tn={rep.tn} fn={rep.fn}")
    print(table)
    if cfg["export_masks"]:
        if pred.masks is None:
            raise UsageError("--export-masks needs a segmentation checkpoint")
        for rec, m in zip(frames.records, pred.masks):
            rel = f"masks/{rec.patient_id}/s{rec.sweep_id}/f{rec.frame_index:03d}_v{rec.aug_version}.pgm"
            write_pgm(out / rel, (m * 255).astype(np.uint8))
        print(f"wrote {len(pred.masks)} masks under {out / 'masks'}")
    return EXIT_OK


def setup_predict(o: Options) -> None:
    o.add("--checkpoint", None, str, "checkpoint file")
    o.add("--data", None, str, "dataset directory (used with --split)")
    o.add("--split", "test", choices=("train", "val", "test"), help="split to predict")
    o.parser.add_argument("--input", nargs="+", default=argparse.SUPPRESS,
                          help="PGM frames to predict instead of a dataset split")
    o.defaults["input"], o.types["input"] = None, lambda v: str(v).split(",")
    o.add("--threshold-fraction", 0.01, float, "mask area fraction above which a frame is positive")


def cmd_predict(cfg: dict, out: Path) -> int:
    _, model = _load_checkpoint(cfg["checkpoint"])
    s = model.cfg.encoder.image_size
    if cfg["input"]:
        paths = list(cfg["input"])
        imgs = np.stack([preprocess(read_pgm(p), s) for p in paths])[:, None]
        frames = FrameArrays(imgs, np.zeros((len(paths), s, s), np.uint8),
                             np.zeros(len(paths), np.int64), [None] * len(paths))
        names = paths
    else:
        if not cfg["data"]:
            raise UsageError("predict: give --input files or --data with --split")
        frames = load_split(cfg["data"], cfg["split"], s)
        names = [r.image_path for r in frames.records]
    pred = predict(model, frames, ThresholdRule(s, s, cfg["threshold_fraction"]))
    score = "foreground_pixels" if pred.masks is not None else "logit"
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "label", score])
        for n, lab, sc in zip(names, pred.labels, pred.scores):
            w.writerow([n, int(lab), int(sc) if pred.masks is not None else repr(float(sc))])
    print(f"{len(names)} frames, {int(pred.labels.sum())} predicted positive -> {out / 'predictions.csv'}")
    return EXIT_OK


# -- export-embeddings --------------------------------------------------------

def setup_export(o: Options) -> None:
    o.add("--checkpoint", None, str, "classification checkpoint")
    o.add("--data", None, str, "dataset directory")
    o.add("--split", "test", choices=("train", "val", "test"), help="split to embed")
    o.add("--layer", "pre_head", choices=("pre_head", "penultimate_block"),
          help="pre_head: final-norm CLS; penultimate_block: last block CLS before the norm")


def cmd_export(cfg: dict, out: Path) -> int:
    if not cfg["data"]:
        raise UsageError("export-embeddings: --data is required")
    _, model = _load_checkpoint(cfg["checkpoint"])
    if model.cfg.head != "classification":
        raise UsageError("export-embeddings needs a classification checkpoint")
    frames = load_split(cfg["data"], cfg["split"], model.cfg.encoder.image_size)
    emb = export_embeddings(model, frames, cfg["layer"])
    ids = [(r.patient_id, r.sweep_id, r.frame_index, r.aug_version) for r in frames.records]
    with open(out / "embeddings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "sweep_id", "frame_index", "aug_version", "label"]
                   + [f"e{i}" for i in range(emb.shape[1])])
        for key, lab, row in zip(ids, frames.labels, emb):
            w.writerow([*key, int(lab), *(repr(float(v)) for v in row)])
    res = pca_project(emb, k=2)
    with open(out / "pca.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pc1", "pc2", "label"])
        for (a, b), lab in zip(res.coords, frames.labels):
            w.writerow([repr(float(a)), repr(float(b)), int(lab)])
    with open(out / "pca_explained.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "eigenvalue", "explained_variance"])
        for i, (ev, fr) in enumerate(zip(res.eigenvalues, res.explained), 1):
            w.writerow([i, repr(float(ev)), repr(float(fr))])
    print(f"{len(emb)} embeddings of width {emb.shape[1]}; PCA explained "
          f"{res.explained[0]:.4f} + {res.explained[1]:.4f}")
    return EXIT_OK


# -- gradcheck ----------------------------------------------------------------

def setup_gradcheck(o: Options) -> None:
    from .checks import corruptible_ops
    o.add("--corrupt", None, str, "break one op's backward rule (negative control); one of "
          + ", ".join(corruptible_ops()))
    o.switch("--models", True, "also check the end-to-end toy models")


def cmd_gradcheck(cfg: dict, out: Path) -> int:
    from .checks import corruptible_ops, run_suite
    corrupt = ()
    if cfg["corrupt"]:
        if cfg["corrupt"] not in corruptible_ops():
            raise UsageError(f"--corrupt must be one of {corruptible_ops()}")
        corrupt = (cfg["corrupt"],)
    results = run_suite(corrupt, include_models=cfg["models"])
    lines = []
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        lines.append(f"{mark} {r.name:<20s} max_rel_err={r.report.max_rel_error:.3e} "
                     f"(tol {r.report.tolerance:g})")
    worst = max(r.report.max_rel_error for r in results)
    ok = all(r.passed for r in results)
    lines.append(f"{'PASS' if ok else 'FAIL'}: {sum(r.passed for r in results)}/{len(results)} checks, "
                 f"max relative error {worst:.3e}")
    (out / "gradcheck.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {
    "generate-data": (setup_generate, cmd_generate, "synthesise a blind-sweep dataset"),
    "train": (setup_train, cmd_train, "train one or more seeds and report test metrics"),
    "evaluate": (setup_evaluate, cmd_evaluate, "evaluate a checkpoint on a split"),
    "predict": (setup_predict, cmd_predict, "write per-frame predictions"),
    "export-embeddings": (setup_export, cmd_export, "export CLS embeddings and a 2-D PCA"),
    "gradcheck": (setup_gradcheck, cmd_gradcheck, "finite-difference checks of every op and model"),
}


def build_parser() -> tuple[Parser, dict[str, Options]]:
    parser = Parser(prog="liqa", description=__doc__,
                    formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"liqa {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=Parser)
    options = {}
    for name, (setup, _, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        o = Options(p)
        _common(o)
        setup(o)
        options[name] = o
    return parser, options


def main(argv: list[str] | None = None) -> int:
    parser, options = build_parser()
    try:
        ns = parser.parse_args(argv)
        if not ns.command:
            parser.print_help()
            return EXIT_USAGE
        cfg = resolve(options[ns.command], ns)
        logging.basicConfig(level=logging.INFO if cfg.get("verbose") else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        out = output_dir(cfg, ns.command)
        write_snapshot(out, ns.command, cfg)
        return COMMANDS[ns.command][1](cfg, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
