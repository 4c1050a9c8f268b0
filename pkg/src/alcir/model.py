"""Item encoder, category translator, classifier and reconstructor.

All four networks work on batches. Translator and reconstructor each own a
category embedding table, separate from the encoder's, and no parameter path
is shared between any two networks.

Parameter path prefixes: ``encoder/``, ``translator/``, ``classifier/``,
``reconstructor/``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_math import (
    MlpSpec,
    ParamStore,
    Var,
    concat,
    constant,
    embedding_lookup,
    init_mlp,
    mlp_forward,
    pick,
    softmax,
)
from .errors import DimensionError, EmbeddingLookupError, IngestionError

NETWORKS = ("encoder", "translator", "classifier", "reconstructor")


@dataclass(frozen=True)
class EncoderConfig:
    image_mlp: MlpSpec
    category_embedding_dim: int
    price_bin_embedding_dim: int
    fusion_mlp: MlpSpec
    n_categories: int
    n_price_bins: int = 20

    @property
    def latent_dim(self):
        return self.fusion_mlp.out_width

    def validate(self):
        want = self.image_mlp.out_width + self.category_embedding_dim + self.price_bin_embedding_dim
        if self.fusion_mlp.in_width != want:
            raise DimensionError(f"fusion MLP input {self.fusion_mlp.in_width} != {want}")


@dataclass(frozen=True)
class TranslatorConfig:
    target_category_embedding_dim: int
    mlp: MlpSpec


@dataclass(frozen=True)
class ClassifierConfig:
    mlp: MlpSpec


@dataclass(frozen=True)
class ReconstructorConfig:
    origin_category_embedding_dim: int
    mlp: MlpSpec


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    translator: TranslatorConfig
    classifier: ClassifierConfig
    reconstructor: ReconstructorConfig

    @property
    def latent_dim(self) -> int:
        return self.encoder.latent_dim

    @property
    def n_categories(self) -> int:
        return self.encoder.n_categories

    @classmethod
    def build(cls, feature_width, n_categories, latent_dim=32, hidden=64, image_dim=32,
              category_dim=8, price_dim=8, n_price_bins=20) -> "ModelConfig":
        D = latent_dim
        cfg = cls(
            EncoderConfig(
                image_mlp=MlpSpec((feature_width, hidden, image_dim)),
                category_embedding_dim=category_dim,
                price_bin_embedding_dim=price_dim,
                fusion_mlp=MlpSpec((image_dim + category_dim + price_dim, hidden, D)),
                n_categories=n_categories,
                n_price_bins=n_price_bins,
            ),
            TranslatorConfig(category_dim, MlpSpec((D + category_dim, hidden, D))),
            ClassifierConfig(MlpSpec((D, hidden, n_categories))),
            ReconstructorConfig(category_dim, MlpSpec((D + category_dim, hidden, D))),
        )
        cfg.validate()
        return cfg

    def validate(self):
        D = self.latent_dim
        self.encoder.validate()
        t, c, r = self.translator, self.classifier, self.reconstructor
        if t.mlp.in_width != D + t.target_category_embedding_dim or t.mlp.out_width != D:
            raise DimensionError("translator MLP must map D + category embedding -> D")
        if c.mlp.in_width != D or c.mlp.out_width != self.n_categories:
            raise DimensionError("classifier MLP must map D -> number of categories")
        if r.mlp.in_width != D + r.origin_category_embedding_dim or r.mlp.out_width != D:
            raise DimensionError("reconstructor MLP must map D + category embedding -> D")

    def to_dict(self) -> dict[str, str]:
        def w(spec):
            return ",".join(str(x) for x in spec.layer_widths)

        e = self.encoder
        return {
            "encoder.image_mlp": w(e.image_mlp),
            "encoder.fusion_mlp": w(e.fusion_mlp),
            "encoder.category_embedding_dim": str(e.category_embedding_dim),
            "encoder.price_bin_embedding_dim": str(e.price_bin_embedding_dim),
            "encoder.n_categories": str(e.n_categories),
            "encoder.n_price_bins": str(e.n_price_bins),
            "translator.category_embedding_dim": str(self.translator.target_category_embedding_dim),
            "translator.mlp": w(self.translator.mlp),
            "classifier.mlp": w(self.classifier.mlp),
            "reconstructor.category_embedding_dim": str(self.reconstructor.origin_category_embedding_dim),
            "reconstructor.mlp": w(self.reconstructor.mlp),
        }

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "ModelConfig":
        def s(key):
            return MlpSpec(tuple(int(x) for x in d[key].split(",")))

        cfg = cls(
            EncoderConfig(
                image_mlp=s("encoder.image_mlp"),
                category_embedding_dim=int(d["encoder.category_embedding_dim"]),
                price_bin_embedding_dim=int(d["encoder.price_bin_embedding_dim"]),
                fusion_mlp=s("encoder.fusion_mlp"),
                n_categories=int(d["encoder.n_categories"]),
                n_price_bins=int(d["encoder.n_price_bins"]),
            ),
            TranslatorConfig(int(d["translator.category_embedding_dim"]), s("translator.mlp")),
            ClassifierConfig(s("classifier.mlp")),
            ReconstructorConfig(int(d["reconstructor.category_embedding_dim"]), s("reconstructor.mlp")),
        )
        cfg.validate()
        return cfg


def init_params(cfg: ModelConfig, rng_seed: int = 0) -> ParamStore:
    p = ParamStore(rng_seed)
    e = cfg.encoder
    init_mlp(e.image_mlp, p, "encoder/image_mlp")
    p.embedding("encoder/category_embedding", e.n_categories, e.category_embedding_dim)
    p.embedding("encoder/price_embedding", e.n_price_bins, e.price_bin_embedding_dim)
    init_mlp(e.fusion_mlp, p, "encoder/fusion_mlp")
    p.embedding("translator/category_embedding", cfg.n_categories, cfg.translator.target_category_embedding_dim)
    init_mlp(cfg.translator.mlp, p, "translator/mlp")
    init_mlp(cfg.classifier.mlp, p, "classifier/mlp")
    p.embedding("reconstructor/category_embedding", cfg.n_categories, cfg.reconstructor.origin_category_embedding_dim)
    init_mlp(cfg.reconstructor.mlp, p, "reconstructor/mlp")
    return p


def _check_cats(cats, n, what):
    cats = np.atleast_1d(np.asarray(cats, dtype=np.int64))
    if cats.size and (cats.min() < 0 or cats.max() >= n):
        raise EmbeddingLookupError(f"{what} index outside [0, {n})")
    return cats


def encode(params: ParamStore, cfg: EncoderConfig, features, categories, price_bins, tape=None) -> Var:
    """Batched item encoder: features (B, F), categories (B,), price bins (B,) -> (B, D)."""
    x = features if isinstance(features, Var) else constant(np.atleast_2d(features))
    cats = _check_cats(categories, cfg.n_categories, "category")
    bins = _check_cats(price_bins, cfg.n_price_bins, "price bin")
    h_img = mlp_forward(cfg.image_mlp, params, x, tape, prefix="encoder/image_mlp")
    h_cat = embedding_lookup(params, "encoder/category_embedding", cats, tape)
    h_price = embedding_lookup(params, "encoder/price_embedding", bins, tape)
    return mlp_forward(cfg.fusion_mlp, params, concat([h_img, h_cat, h_price], tape), tape, prefix="encoder/fusion_mlp")


def encode_item(params: ParamStore, cfg: EncoderConfig, item, tape=None) -> Var:
    if item.price_bin is None:
        raise ValueError(f"item {item.item_id!r} has no price bin")
    return encode(params, cfg, item.image_features[None, :], [item.category_id], [item.price_bin], tape)


def encode_catalog(params: ParamStore, cfg: EncoderConfig, catalog) -> np.ndarray:
    """Encodings of every catalog item, in catalog order."""
    return encode(params, cfg, catalog.features, catalog.category_ids, catalog.price_bins).value


def _conditioned(params, mlp, path, v, cats, n, tape, prefix):
    v = v if isinstance(v, Var) else constant(np.atleast_2d(v))
    cats = _check_cats(cats, n, "category")
    if cats.size == 1 and v.value.shape[0] > 1:
        cats = np.repeat(cats, v.value.shape[0])
    e = embedding_lookup(params, path, cats, tape)
    return mlp_forward(mlp, params, concat([v, e], tape), tape, prefix=prefix)


def translate(params: ParamStore, cfg: TranslatorConfig, v, target_categories, tape=None, n_categories=None) -> Var:
    n = n_categories if n_categories is not None else params["translator/category_embedding"].shape[0]
    return _conditioned(params, cfg.mlp, "translator/category_embedding", v, target_categories, n, tape, "translator/mlp")


def reconstruct(params: ParamStore, cfg: ReconstructorConfig, v_translated, origin_categories, tape=None) -> Var:
    n = params["reconstructor/category_embedding"].shape[0]
    return _conditioned(params, cfg.mlp, "reconstructor/category_embedding", v_translated, origin_categories, n, tape,
                        "reconstructor/mlp")


def class_distribution(params: ParamStore, cfg: ClassifierConfig, v, tape=None) -> Var:
    v = v if isinstance(v, Var) else constant(np.atleast_2d(v))
    return softmax(mlp_forward(cfg.mlp, params, v, tape, prefix="classifier/mlp"), tape)


def classify(params: ParamStore, cfg: ClassifierConfig, v, categories, tape=None) -> Var:
    """Probability that each row of ``v`` belongs to the given category."""
    probs = class_distribution(params, cfg, v, tape)
    cats = _check_cats(categories, cfg.mlp.out_width, "category")
    if cats.size == 1 and probs.value.shape[0] > 1:
        cats = np.repeat(cats, probs.value.shape[0])
    return pick(probs, cats, tape)


# --------------------------------------------------------------------------
# checkpoints: text manifest + one little-endian float64 blob

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ParamStore, cfg: ModelConfig, extra: dict[str, str] | None = None) -> Path:
    path = Path(path)
    blob = path.with_suffix(".bin")
    lines = [
        f"format_version = {CHECKPOINT_VERSION}",
        f"blob = {blob.name}",
        f"rng_seed = {params.rng_seed}",
    ]
    for k, v in cfg.to_dict().items():
        lines.append(f"config.{k} = {v}")
    for k, v in (extra or {}).items():
        lines.append(f"meta.{k} = {v}")
    with open(blob, "wb") as fh:
        for p in params:
            arr = params[p]
            lines.append(f"param {p} {'x'.join(str(d) for d in arr.shape)}")
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> tuple[ParamStore, ModelConfig, dict[str, str]]:
    path = Path(path)
    header: dict[str, str] = {}
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith("param "):
            _, p, shape = line.split()
            shapes.append((p, tuple(int(x) for x in shape.split("x"))))
        else:
            k, _, v = line.partition(" = ")
            header[k.strip()] = v.strip()
    if int(header.get("format_version", -1)) != CHECKPOINT_VERSION:
        raise IngestionError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    flat = np.frombuffer((path.parent / header["blob"]).read_bytes(), dtype="<f8")
    params = ParamStore(int(header["rng_seed"]))
    off = 0
    for p, shape in shapes:
        size = int(np.prod(shape))
        if off + size > flat.size:
            raise IngestionError(f"{path}: blob too short for parameter {p!r}")
        params[p] = flat[off:off + size].reshape(shape).astype(np.float64)
        off += size
    if off != flat.size:
        raise IngestionError(f"{path}: {flat.size - off} unread values in blob")
    cfg = ModelConfig.from_dict({k[len("config."):]: v for k, v in header.items() if k.startswith("config.")})
    meta = {k[len("meta."):]: v for k, v in header.items() if k.startswith("meta.")}
    return params, cfg, meta
