"""The model zoo and its empirical cost functions.

Every model is one encoder/decoder pair wired from two conditioning flags:

======================  ===========  ==============  ==============
zoo name                objective    decoder sees S  encoder sees S
======================  ===========  ==============  ==============
private                 reconstruct  yes             no
fair                    predict      yes             no
vae (beta-VAE)          reconstruct  no              no
vib                     predict      no              no
ppvae                   reconstruct  yes             yes
vfae                    reconstruct  yes             yes (+ MMD)
======================  ===========  ==============  ==============

``private`` and ``fair`` keep the structural constraint that the encoder sees
only X, so the representation cannot carry sensitive information beyond what X
carries.  ``ppvae``/``vfae`` deliberately break it (they feed S into the
encoder), which is exactly the leakage the audit tooling is meant to expose.

The training loss is
``kl_term + multiplier * nll_term + mmd_weight * mmd_term``
with the KL taken against a standard-normal representation marginal and the
NLL a reconstruction (of X) or prediction (of the task) negative
log-likelihood, both batch means in nats.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Batch, Dataset, Feature, Schema
from .distributions import (
    DecoderHead,
    GaussianHead,
    NoiseSource,
    gaussian_kl_to_standard,
    reparam_sample,
)
from .errors import ConfigError, EmptyGroupError, NumericError, ShapeError

ZOO = ("private", "fair", "vae", "vib", "ppvae", "vfae")

MMD_FEATURES = 500
MMD_BANDWIDTH = 1.0


@dataclass(frozen=True)
class ModelConfig:
    """Conditioning flags plus hyperparameters selecting one zoo member."""

    objective: str  # "reconstruction" | "prediction"
    decoder_sees_sensitive: bool
    encoder_sees_sensitive: bool
    multiplier: float
    mmd_weight: float = 0.0
    representation_dim: int = 2
    hidden_width: int = 100
    mc_samples: int = 1

    def __post_init__(self):
        if self.objective not in ("reconstruction", "prediction"):
            raise ConfigError(f"unknown objective '{self.objective}'")
        if self.multiplier <= 0:
            raise ConfigError(f"multiplier must be positive, got {self.multiplier}")
        if self.mmd_weight < 0:
            raise ConfigError(f"mmd_weight must be non-negative, got {self.mmd_weight}")
        if self.mc_samples < 1:
            raise ConfigError(f"mc_samples must be >= 1, got {self.mc_samples}")

    @property
    def zoo_name(self) -> str:
        key = (self.objective, self.decoder_sees_sensitive, self.encoder_sees_sensitive)
        if key == ("reconstruction", True, False):
            return "private"
        if key == ("prediction", True, False):
            return "fair"
        if key == ("reconstruction", False, False):
            return "vae"
        if key == ("prediction", False, False):
            return "vib"
        if key == ("reconstruction", True, True):
            return "vfae" if self.mmd_weight > 0 else "ppvae"
        return "custom"

    @classmethod
    def from_zoo(cls, name: str, multiplier: float, **kw) -> "ModelConfig":
        builders = {
            "private": cls.private,
            "fair": cls.fair,
            "vae": cls.vae,
            "vib": cls.vib,
            "ppvae": cls.ppvae,
            "vfae": cls.vfae,
        }
        if name not in builders:
            raise ConfigError(f"unknown zoo member '{name}', expected one of {ZOO}")
        return builders[name](multiplier, **kw)

    @classmethod
    def private(cls, multiplier: float, **kw) -> "ModelConfig":
        """Reconstruct X given (Y, S); the encoder sees only X."""
        return cls("reconstruction", True, False, multiplier, **kw)

    @classmethod
    def fair(cls, multiplier: float, **kw) -> "ModelConfig":
        """Predict the task given (Y, S); the encoder sees only X."""
        return cls("prediction", True, False, multiplier, **kw)

    @classmethod
    def vae(cls, multiplier: float = 1.0, **kw) -> "ModelConfig":
        """Plain autoencoder; the weighted variant is the classic beta-VAE."""
        return cls("reconstruction", False, False, multiplier, **kw)

    @classmethod
    def vib(cls, multiplier: float, **kw) -> "ModelConfig":
        """Plain bottleneck predictor (task decoder sees only Y)."""
        return cls("prediction", False, False, multiplier, **kw)

    @classmethod
    def ppvae(cls, multiplier: float, **kw) -> "ModelConfig":
        """Autoencoder whose *encoder* also sees S (breaks the Markov chain)."""
        return cls("reconstruction", True, True, multiplier, **kw)

    @classmethod
    def vfae(cls, mmd_weight: float, multiplier: float = 1.0, **kw) -> "ModelConfig":
        """ppvae at unit multiplier plus an MMD penalty between the S-groups."""
        if mmd_weight <= 0:
            raise ConfigError("vfae needs a positive mmd_weight")
        return cls("reconstruction", True, True, multiplier, mmd_weight=mmd_weight, **kw)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "decoder_sees_sensitive": self.decoder_sees_sensitive,
            "encoder_sees_sensitive": self.encoder_sees_sensitive,
            "multiplier": self.multiplier,
            "mmd_weight": self.mmd_weight,
            "representation_dim": self.representation_dim,
            "hidden_width": self.hidden_width,
            "mc_samples": self.mc_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class LossBreakdown:
    """One loss evaluation: term values in nats plus the differentiable total."""

    kl_term: float
    nll_term: float
    mmd_term: float
    multiplier: float
    mmd_weight: float
    total: Tensor

    @property
    def total_value(self) -> float:
        return self.total.item()


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class ModelGraph:
    """Encoder/decoder parameter collection realizing one ModelConfig.

    Encoder: one hidden ReLU layer to the representation mean, plus a global
    log-sigma.  Decoder: one hidden ReLU layer to the density parameters; its
    input is the representation, with the one-hot sensitive attribute
    concatenated when the config says so.
    """

    def __init__(self, config: ModelConfig, schema: Schema, seed: int):
        if config.objective == "prediction" and schema.task_name is None:
            raise ConfigError("prediction objective needs a schema with a task column")
        self.config = config
        self.schema = schema
        self.seed = int(seed)

        s_width = schema.sensitive_num_levels
        enc_in = schema.encoded_width + (s_width if config.encoder_sees_sensitive else 0)
        dec_in = config.representation_dim + (s_width if config.decoder_sees_sensitive else 0)
        if config.objective == "reconstruction":
            self._target_features = list(schema.features)
        else:
            self._target_features = [schema.task_feature()]
        dec_out = sum(
            f.num_levels if f.kind == "categorical" else 1 for f in self._target_features
        )
        self.decoder_output_width = dec_out

        rng = np.random.default_rng(self.seed)
        h = config.hidden_width
        d = config.representation_dim
        self.params: dict[str, Tensor] = {
            "enc_w1": Tensor(_glorot(rng, enc_in, h), requires_grad=True),
            "enc_b1": Tensor(np.zeros(h), requires_grad=True),
            "enc_w2": Tensor(_glorot(rng, h, d), requires_grad=True),
            "enc_b2": Tensor(np.zeros(d), requires_grad=True),
            "log_sigma": Tensor(np.full(1, -1.0), requires_grad=True),
            "dec_w1": Tensor(_glorot(rng, dec_in, h), requires_grad=True),
            "dec_b1": Tensor(np.zeros(h), requires_grad=True),
            "dec_w2": Tensor(_glorot(rng, h, dec_out), requires_grad=True),
            "dec_b2": Tensor(np.zeros(dec_out), requires_grad=True),
        }
        if config.objective == "reconstruction":
            for f in self._target_features:
                if f.kind == "continuous":
                    self.params[f"dec_logvar:{f.name}"] = Tensor(
                        np.zeros(1), requires_grad=True
                    )
        # fixed random-feature basis for the MMD term, drawn once per model
        self.mmd_seed = self.seed + 0x5EED

    @property
    def target_features(self) -> list[Feature]:
        return list(self._target_features)

    def encode(self, batch: Batch) -> GaussianHead:
        x = Tensor(batch.x)
        if self.config.encoder_sees_sensitive:
            x = ad.concat_last(x, Tensor(batch.s_onehot))
        h = ad.relu(ad.matmul(x, self.params["enc_w1"]) + self.params["enc_b1"])
        mu = ad.matmul(h, self.params["enc_w2"]) + self.params["enc_b2"]
        return GaussianHead(mu, self.params["log_sigma"])

    def decode(self, y: Tensor, batch: Batch) -> DecoderHead:
        inp = y
        if self.config.decoder_sees_sensitive:
            inp = ad.concat_last(inp, Tensor(batch.s_onehot))
        h = ad.relu(ad.matmul(inp, self.params["dec_w1"]) + self.params["dec_b1"])
        raw = ad.matmul(h, self.params["dec_w2"]) + self.params["dec_b2"]
        log_vars = {
            f.name: self.params[f"dec_logvar:{f.name}"]
            for f in self._target_features
            if f.kind == "continuous"
        }
        return DecoderHead(self._target_features, raw, log_vars)

    def decoder_targets(self, batch: Batch) -> dict[str, np.ndarray]:
        if self.config.objective == "reconstruction":
            return batch.targets
        if batch.t is None:
            raise ConfigError("prediction objective needs task labels in the batch")
        return {self.schema.task_name: batch.t}

    def representations(self, dataset: Dataset, noise=None, sampled: bool = False) -> np.ndarray:
        """Representation of every row: the encoder mean, or one sample."""
        head = self.encode(dataset.all_rows())
        if not sampled:
            return head.mu.values.copy()
        if noise is None:
            raise ConfigError("sampled representations need a noise source")
        return reparam_sample(head, noise).values.copy()


def build_model(config: ModelConfig, schema: Schema, seed: int) -> ModelGraph:
    """Instantiate the graph for a config; deterministic given the seed."""
    return ModelGraph(config, schema, seed)


def mmd_rks(
    y_group0: Tensor,
    y_group1: Tensor,
    n_features: int = MMD_FEATURES,
    bandwidth: float = MMD_BANDWIDTH,
    seed: int = 0,
) -> Tensor:
    """Squared MMD between two sample sets under random Fourier features.

    Approximates the RBF kernel exp(-bandwidth * ||a - b||^2) with
    ``n_features`` random kitchen sinks; the statistic is the squared distance
    between the two feature means, so it is symmetric and non-negative, and it
    is differentiable in both inputs.
    """
    y0 = y_group0 if isinstance(y_group0, Tensor) else Tensor(y_group0)
    y1 = y_group1 if isinstance(y_group1, Tensor) else Tensor(y_group1)
    if y0.values.ndim != 2 or y1.values.ndim != 2 or y0.shape[1] != y1.shape[1]:
        raise ShapeError(f"mmd_rks needs (n, d) inputs with equal d, got {y0.shape} and {y1.shape}")
    if y0.shape[0] == 0 or y1.shape[0] == 0:
        raise EmptyGroupError("mmd_rks: one group is empty")
    d = y0.shape[1]
    rng = np.random.default_rng(seed)
    # spectral measure of exp(-g r^2) is N(0, 2g I)
    w = Tensor(rng.normal(scale=np.sqrt(2.0 * bandwidth), size=(d, n_features)))
    b = Tensor(rng.uniform(0.0, 2.0 * np.pi, size=n_features))
    scale = np.sqrt(2.0 / n_features)

    z0 = (scale * ad.cos(ad.matmul(y0, w) + b)).mean(axis=0)
    z1 = (scale * ad.cos(ad.matmul(y1, w) + b)).mean(axis=0)
    return ad.square(z0 - z1).sum()


def variational_loss(
    model: ModelGraph,
    batch: Batch,
    config: ModelConfig | None = None,
    noise: NoiseSource | None = None,
) -> LossBreakdown:
    """Empirical cost of one batch: KL + multiplier * NLL (+ MMD when weighted).

    The expectation over the reparametrization noise uses ``config.mc_samples``
    Monte-Carlo draws (default one).  Batches missing one sensitive group
    contribute zero MMD.  Raises NumericError naming the term if anything
    comes out non-finite.
    """
    cfg = config or model.config
    if noise is None:
        raise ConfigError("variational_loss needs a noise source")
    head = model.encode(batch)
    kl = gaussian_kl_to_standard(head).mean()

    targets = model.decoder_targets(batch)
    nll_acc: Tensor | None = None
    mmd_acc: Tensor | None = None
    for _ in range(cfg.mc_samples):
        y = reparam_sample(head, noise)
        nll = model.decode(y, batch).nll(targets).mean()
        nll_acc = nll if nll_acc is None else nll_acc + nll
        if cfg.mmd_weight > 0:
            idx0 = np.flatnonzero(batch.s == 0)
            idx1 = np.flatnonzero(batch.s == 1)
            if len(idx0) and len(idx1):
                term = mmd_rks(
                    ad.take_rows(y, idx0), ad.take_rows(y, idx1), seed=model.mmd_seed
                )
                mmd_acc = term if mmd_acc is None else mmd_acc + term
    nll_mean = nll_acc * (1.0 / cfg.mc_samples)
    total = kl + cfg.multiplier * nll_mean
    mmd_value = 0.0
    if cfg.mmd_weight > 0 and mmd_acc is not None:
        mmd_mean = mmd_acc * (1.0 / cfg.mc_samples)
        total = total + cfg.mmd_weight * mmd_mean
        mmd_value = mmd_mean.item()

    for name, value in (
        ("kl_term", kl.item()),
        ("nll_term", nll_mean.item()),
        ("mmd_term", mmd_value),
        ("total", total.item()),
    ):
        if not np.isfinite(value):
            raise NumericError(f"variational_loss: non-finite {name} ({value})")

    return LossBreakdown(
        kl_term=kl.item(),
        nll_term=nll_mean.item(),
        mmd_term=mmd_value,
        multiplier=cfg.multiplier,
        mmd_weight=cfg.mmd_weight,
        total=total,
    )


# ---------------------------------------------------------------------------
# checkpoints: flat little-endian binary container + JSON sidecar
# ---------------------------------------------------------------------------

_MAGIC = b"PFCK"
_VERSION = 1


def save_checkpoint(model: ModelGraph, path: str | Path) -> Path:
    """Write parameters as a little-endian binary container plus sidecar.

    Layout: magic 'PFCK', u32 version, u32 count, then per parameter
    u32 name length, name bytes (utf-8), u32 ndim, u64 dims, float64 data.
    The sidecar ``<path>.meta.json`` records config, schema hash, and seed.
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(model.params)))
        for name in sorted(model.params):
            data = model.params[name].values
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
    meta = {
        "config": model.config.to_dict(),
        "schema_hash": model.schema.hash(),
        "seed": model.seed,
        "format_version": _VERSION,
    }
    with open(path.with_suffix(path.suffix + ".meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_checkpoint(path: str | Path, schema: Schema) -> ModelGraph:
    """Rebuild a model from a checkpoint; validates the schema hash."""
    path = Path(path)
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta["schema_hash"] != schema.hash():
        raise ConfigError(
            f"checkpoint was trained against schema {meta['schema_hash']}, "
            f"got {schema.hash()}"
        )
    model = ModelGraph(ModelConfig.from_dict(meta["config"]), schema, meta["seed"])
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ConfigError(f"{path} is not a parameter container")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ConfigError(f"unsupported container version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            n_bytes = 8 * int(np.prod(shape, dtype=int))
            data = np.frombuffer(fh.read(n_bytes), dtype="<f8").reshape(shape)
            if name not in model.params:
                raise ConfigError(f"checkpoint parameter '{name}' unknown to this config")
            if model.params[name].values.shape != data.shape:
                raise ConfigError(
                    f"checkpoint parameter '{name}' has shape {data.shape}, "
                    f"expected {model.params[name].values.shape}"
                )
            model.params[name].values = data.copy()
    return model
