"""Command-line entry point: ``alcir {synth,prepare,train,evaluate,recommend}``.

Configuration is a flat ``key = value`` file (``#`` starts a comment) merged
over built-in defaults, then overridden by command-line flags. Unknown keys
are rejected before any work starts. ``--print-config`` shows the merged
result.

Directory layout::

    raw_dir/   items.csv, features.alcf, recs.csv           (input; `synth` writes these)
    data_dir/  items.csv, features.alcf, pairs.csv, split.csv, cc_map.csv, stats.csv
    run_dir/   model.ckpt (+ model.bin), train_log.csv

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import __version__, losses
from .baselines import PopularityScorer, build_popularity
from .data import (
    SyntheticConfig,
    derive_complementary_categories,
    discretize_prices,
    build_labeled_pairs,
    dataset_statistics,
    filter_rare_categories,
    generate_synthetic,
    load_catalog,
    load_prepared_catalog,
    read_cc_map_csv,
    read_raw_recs,
    read_split_csv,
    split_cold,
    write_cc_map_csv,
    write_features,
    write_items_csv,
    write_pairs_csv,
    write_raw_recs,
    write_split_csv,
)
from .errors import (
    ConfigError,
    ConstraintError,
    DegenerateVectorError,
    DimensionError,
    EmbeddingLookupError,
    EvaluationError,
    IngestionError,
    SamplingError,
    SplitInfeasibleError,
    TrainingDivergenceError,
)
from .evaluation import PROTOCOLS, evaluate, evaluate_by_label_bins, write_bins_csv, write_metrics_csv
from .experiments import EXPERIMENT_SYNTH, EXPERIMENT_TRAIN
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .retrieval import AlcirScorer, build_category_index, recommend, recommend_multi, write_recommendations
from .training import TrainConfig, fit, write_training_log

logger = logging.getLogger("alcir")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MODELS = ("alcir", "popularity")

# TrainConfig fields exposed as ``train.<name>``; the nested ones are flattened
_TRAIN_SCALARS = ("epochs", "batch_size", "learning_rate", "early_stop_patience", "unlabeled_ratio",
                  "optimizer", "momentum", "weight_decay", "clip_norm")
_SYNTH_SCALARS = tuple(f.name for f in fields(SyntheticConfig) if f.name != "seed")


def _defaults() -> dict[str, object]:
    d: dict[str, object] = {
        "seed": 0,
        "raw_dir": "raw",
        "data_dir": "data",
        "run_dir": "run",
        "prepare.min_category_items": 5,
        "prepare.price_bins": 20,
        "prepare.train_fraction": 0.8,
        "model.latent_dim": 32,
        "model.hidden": 64,
        "model.image_dim": 32,
        "model.category_dim": 8,
        "model.price_dim": 8,
        "train.preset": "full",
        "train.margin": EXPERIMENT_TRAIN.triplet.margin,
        "train.distance": EXPERIMENT_TRAIN.triplet.distance,
        "evaluate.model": "alcir",
        "evaluate.protocol": "category_aware",
        "evaluate.bins": 0,
        "evaluate.out": "",
        "evaluate.bins_out": "",
        "recommend.k": 10,
    }
    for name in _TRAIN_SCALARS:
        d[f"train.{name}"] = getattr(EXPERIMENT_TRAIN, name)
    for name in _SYNTH_SCALARS:
        d[f"synth.{name}"] = getattr(EXPERIMENT_SYNTH, name)
    return d


DEFAULTS = _defaults()


def _cast(key: str, raw) -> object:
    default = DEFAULTS[key]
    if isinstance(raw, type(default)) and not isinstance(raw, bool):
        return raw
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {text!r} as {type(default).__name__}") from None
    return text


@dataclass
class RunConfig:
    """Merged configuration: defaults < config file < flags."""

    values: dict[str, object] = field(default_factory=lambda: dict(DEFAULTS))

    def update(self, pairs: dict[str, object], source: str = "flags") -> None:
        for key, raw in pairs.items():
            if key not in DEFAULTS:
                raise ConfigError(f"{source}: unknown config key {key!r}")
            self.values[key] = _cast(key, raw)

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cfg = cls()
        cfg.update(read_config_file(path), source=str(path))
        return cfg

    def render(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values))

    # typed views -------------------------------------------------------

    @property
    def raw_dir(self) -> Path:
        return Path(self["raw_dir"])

    @property
    def data_dir(self) -> Path:
        return Path(self["data_dir"])

    @property
    def run_dir(self) -> Path:
        return Path(self["run_dir"])

    def train_config(self) -> TrainConfig:
        preset = self["train.preset"]
        if preset not in losses.PRESETS:
            raise ConfigError(f"train.preset must be one of {sorted(losses.PRESETS)}, got {preset!r}")
        kw = {name: self[f"train.{name}"] for name in _TRAIN_SCALARS}
        cfg = TrainConfig(
            loss_weights=losses.PRESETS[preset],
            triplet=losses.TripletConfig(self["train.margin"], self["train.distance"]),
            rng_seed=self["seed"],
            **kw,
        )
        if preset == "sup":
            cfg = replace(cfg, unlabeled_ratio=0.0)
        return cfg

    def synth_config(self) -> SyntheticConfig:
        return SyntheticConfig(seed=self["seed"], **{n: self[f"synth.{n}"] for n in _SYNTH_SCALARS})

    def model_config(self, feature_width: int, n_categories: int, n_price_bins: int) -> ModelConfig:
        return ModelConfig.build(
            feature_width, n_categories,
            latent_dim=self["model.latent_dim"], hidden=self["model.hidden"], image_dim=self["model.image_dim"],
            category_dim=self["model.category_dim"], price_dim=self["model.price_dim"], n_price_bins=n_price_bins,
        )

    def validate(self) -> None:
        self.train_config()
        self.synth_config()
        if self["evaluate.protocol"] not in PROTOCOLS:
            raise ConfigError(f"evaluate.protocol must be one of {PROTOCOLS}")
        if self["evaluate.model"] not in MODELS:
            raise ConfigError(f"evaluate.model must be one of {MODELS}")
        if self["evaluate.bins"] < 0 or self["recommend.k"] < 1 or self["prepare.price_bins"] < 1:
            raise ConfigError("evaluate.bins >= 0, recommend.k >= 1 and prepare.price_bins >= 1 are required")
        if not 0.0 < self["prepare.train_fraction"] < 1.0:
            raise ConfigError("prepare.train_fraction must lie strictly between 0 and 1")


def read_config_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


# --------------------------------------------------------------------------
# dataset files


def _prepared(cfg: RunConfig):
    d = cfg.data_dir
    for name in ("items.csv", "features.alcf", "split.csv", "cc_map.csv"):
        if not (d / name).exists():
            raise IngestionError(f"prepared dataset incomplete: {d / name} not found (run `alcir prepare` first)")
    catalog = load_prepared_catalog(d / "items.csv", d / "features.alcf")
    return catalog, read_split_csv(d / "split.csv", catalog), read_cc_map_csv(d / "cc_map.csv", catalog)


def _checkpoint(cfg: RunConfig):
    path = cfg.run_dir / "model.ckpt"
    if not path.exists():
        raise IngestionError(f"checkpoint {path} not found (run `alcir train` first)")
    return load_checkpoint(path)


# --------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, args) -> int:
    data = generate_synthetic(cfg.synth_config())
    out = cfg.raw_dir
    out.mkdir(parents=True, exist_ok=True)
    write_items_csv(out / "items.csv", data.catalog)
    write_features(out / "features.alcf", data.catalog.features)
    write_raw_recs(out / "recs.csv", [(p.seed_id, p.target_id) for p in data.pairs])
    with open(out / "ground_truth.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed_id", "target_category", "target_id"])
        for (s, c), t in sorted(data.ground_truth.items()):
            w.writerow([s, data.catalog.categories[c], t])
    print(f"wrote {len(data.catalog)} items and {len(data.pairs)} labeled pairs to {out}")
    return EXIT_OK


def cmd_prepare(cfg: RunConfig, args) -> int:
    raw = cfg.raw_dir
    for name in ("items.csv", "features.alcf", "recs.csv"):
        if not (raw / name).exists():
            raise IngestionError(f"input file {raw / name} not found")
    catalog = load_catalog(raw / "items.csv", raw / "features.alcf")
    catalog = filter_rare_categories(catalog, cfg["prepare.min_category_items"])
    catalog = discretize_prices(catalog, cfg["prepare.price_bins"])
    pairs = build_labeled_pairs(catalog, read_raw_recs(raw / "recs.csv"))
    split = split_cold(pairs, cfg["prepare.train_fraction"], cfg["seed"])
    cc_map = derive_complementary_categories(split.train, catalog.n_categories)

    out = cfg.data_dir
    out.mkdir(parents=True, exist_ok=True)
    write_items_csv(out / "items.csv", catalog, with_bins=True)
    write_features(out / "features.alcf", catalog.features)
    write_pairs_csv(out / "pairs.csv", pairs, catalog)
    write_split_csv(out / "split.csv", split, catalog)
    write_cc_map_csv(out / "cc_map.csv", cc_map, catalog)
    stats = dataset_statistics(catalog, pairs)
    with open(out / "stats.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["statistic", "value"])
        w.writerows((name, _num(v)) for name, v in stats)
    for name, v in stats:
        print(f"{name}\t{_num(v)}")
    logger.info("split: %d train / %d validation / %d test pairs",
                len(split.train), len(split.validation), len(split.test))
    return EXIT_OK


def _num(v) -> str:
    return f"{v:.2f}" if isinstance(v, float) else str(v)


def cmd_train(cfg: RunConfig, args) -> int:
    catalog, split, cc_map = _prepared(cfg)
    tcfg = cfg.train_config()
    n_bins = int(catalog.price_bins.max()) + 1 if len(catalog) else 1
    model_cfg = cfg.model_config(catalog.feature_width, catalog.n_categories, max(n_bins, cfg["prepare.price_bins"]))
    params, history = fit(catalog, split, cc_map, tcfg, model_cfg)
    out = cfg.run_dir
    out.mkdir(parents=True, exist_ok=True)
    meta = {"preset": cfg["train.preset"], "seed": str(cfg["seed"]), "epochs_run": str(len(history))}
    save_checkpoint(out / "model.ckpt", params, model_cfg, meta)
    write_training_log(out / "train_log.csv", history)
    if history:
        best = max(history, key=lambda h: (h.val_hr10, h.val_ndcg))
        print(f"trained {len(history)} epochs; best validation HR@10 {best.val_hr10:.4f} at epoch {best.epoch}")
    else:
        print("0 epochs: checkpoint holds the initial parameters")
    return EXIT_OK


def _scorer(cfg: RunConfig, catalog, split):
    if cfg["evaluate.model"] == "popularity":
        return PopularityScorer(build_popularity(split.train), catalog)
    params, model_cfg, _ = _checkpoint(cfg)
    if model_cfg.n_categories != catalog.n_categories or model_cfg.encoder.image_mlp.in_width != catalog.feature_width:
        raise IngestionError("checkpoint does not match the prepared dataset")
    return AlcirScorer(params, model_cfg, catalog)


def _open_out(path: str):
    return open(path, "w", newline="", encoding="utf-8") if path else sys.stdout


def cmd_evaluate(cfg: RunConfig, args) -> int:
    catalog, split, cc_map = _prepared(cfg)
    scorer = _scorer(cfg, catalog, split)
    name = cfg["evaluate.model"]
    report = evaluate(split.test, scorer, catalog, cfg["evaluate.protocol"], cc_map)
    fh = _open_out(cfg["evaluate.out"])
    try:
        write_metrics_csv(fh, {name: report})
    finally:
        if fh is not sys.stdout:
            fh.close()
    if cfg["evaluate.bins"]:
        bins = evaluate_by_label_bins(split, scorer, catalog, cfg["evaluate.bins"])
        if cfg["evaluate.bins_out"]:
            write_bins_csv(cfg["evaluate.bins_out"], bins)
        else:
            sys.stdout.write("\n")
            write_bins_csv(sys.stdout, bins)
    return EXIT_OK


def cmd_recommend(cfg: RunConfig, args) -> int:
    catalog, _, cc_map = _prepared(cfg)
    if args.seed_id not in catalog.index_of:
        raise IngestionError(f"unknown seed item {args.seed_id!r}")
    params, model_cfg, _ = _checkpoint(cfg)
    index = build_category_index(catalog, params, model_cfg)
    seed = catalog.item(args.seed_id)
    k = cfg["recommend.k"]
    if args.category is not None:
        try:
            c = catalog.category_index(args.category)
        except KeyError as e:
            raise ConstraintError(str(e.args[0])) from None
        lists = [recommend(seed, c, k, index, params, model_cfg)]
    else:
        lists = [recommend_multi(seed, cc_map, k, index, params, model_cfg)]
    write_recommendations(lists, catalog, sys.stdout)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "recommend": cmd_recommend,
}


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="alcir", description="Complementary item recommendation for cold seed items.")
    p.add_argument("--version", action="version", version=f"alcir {__version__}")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="seed for splitting, synthetic data and training")
    p.add_argument("--print-config", action="store_true", help="print the merged configuration and exit")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    sub.add_parser("synth", help="write a synthetic raw dataset to raw_dir")
    sub.add_parser("prepare", help="filter, bin, pair and split raw_dir into data_dir")

    t = sub.add_parser("train", help="train a model on data_dir into run_dir")
    t.add_argument("--preset", choices=sorted(losses.PRESETS))
    t.add_argument("--epochs", type=int)

    e = sub.add_parser("evaluate", help="test-split metrics as CSV")
    e.add_argument("--model", choices=MODELS)
    e.add_argument("--protocol", choices=PROTOCOLS)
    e.add_argument("--bins", nargs="?", type=int, const=10, help="also report label-count bins (default 10)")
    e.add_argument("--out", help="metrics CSV path (default stdout)")

    r = sub.add_parser("recommend", help="recommendation CSV for one seed item")
    r.add_argument("seed_id")
    r.add_argument("--category", help="target category name; omitted = round-robin over complementary categories")
    r.add_argument("-k", "--k", type=int)
    return p


def _flag_overrides(args) -> dict[str, object]:
    out: dict[str, object] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    if args.seed is not None:
        out["seed"] = args.seed
    mapping = {"preset": "train.preset", "epochs": "train.epochs", "model": "evaluate.model",
               "protocol": "evaluate.protocol", "bins": "evaluate.bins", "out": "evaluate.out", "k": "recommend.k"}
    for attr, key in mapping.items():
        v = getattr(args, attr, None)
        if v is not None:
            out[key] = v
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # usage errors, --help, --version
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        cfg.update(_flag_overrides(args))
        cfg.validate()
        if args.print_config:
            sys.stdout.write(cfg.render())
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("alcir: error: a command is required", file=sys.stderr)
            return EXIT_USAGE
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ConstraintError, DimensionError) as e:
        print(f"alcir: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (IngestionError, SplitInfeasibleError, SamplingError, EvaluationError, EmbeddingLookupError,
            OSError) as e:
        print(f"alcir: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergenceError, DegenerateVectorError, FloatingPointError) as e:
        print(f"alcir: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        # remaining parameter checks (e.g. synthetic generator bounds)
        print(f"alcir: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
