"""Parametric densities used by the encoder and decoder networks.

The encoder is an isotropic Gaussian with an input-independent scale: the mean
comes from a network while log-sigma is a free parameter optimized directly.
The decoder factorizes over features as a product of categorical, Bernoulli,
and fixed-scale Gaussian densities.  All log quantities are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericError, SchemaError, ShapeError

LOG_2PI = float(np.log(2.0 * np.pi))

# Clamp bounds for log-sigma before exponentiation.  Wide enough that the
# attainable KL range at desk scale is unaffected, tight enough that exp()
# cannot overflow.
LOG_SIGMA_MIN = -7.0
LOG_SIGMA_MAX = 7.0


class NoiseSource:
    """Seeded standard-normal stream; identical seeds yield identical draws."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)

    def standard_normal(self, shape) -> np.ndarray:
        return self._rng.standard_normal(shape)


@dataclass
class GaussianHead:
    """Diagonal Gaussian over the representation.

    ``mu`` has shape (batch, d); ``log_sigma`` is a free parameter of shape
    (1,) (isotropic) or (d,), never a function of the input.
    """

    mu: Tensor
    log_sigma: Tensor

    def __post_init__(self):
        if self.mu.values.ndim != 2:
            raise ShapeError(f"GaussianHead.mu must be (batch, d), got {self.mu.shape}")
        if self.log_sigma.values.ndim != 1:
            raise ShapeError(f"GaussianHead.log_sigma must be 1-D, got {self.log_sigma.shape}")

    @property
    def dim(self) -> int:
        return self.mu.shape[1]


def gaussian_kl_to_standard(head: GaussianHead) -> Tensor:
    """Per-sample KL(N(mu, sigma^2 I) || N(0, I)) in nats.

    Closed form 0.5 * sum_j (sigma_j^2 + mu_j^2 - 1 - 2 log sigma_j); always
    non-negative, zero exactly when mu = 0 and sigma = 1.
    """
    if not (np.all(np.isfinite(head.mu.values)) and np.all(np.isfinite(head.log_sigma.values))):
        raise NumericError("gaussian_kl_to_standard: non-finite Gaussian parameters")
    ls = ad.clamp(head.log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    var = ad.exp(2.0 * ls)
    # var and ls broadcast over the batch axis; the -1 folds into the sum.
    per_dim = 0.5 * (var + ad.square(head.mu) - 1.0 - 2.0 * ls)
    return per_dim.sum(axis=-1)


def reparam_sample(head: GaussianHead, noise) -> Tensor:
    """Draw y = mu + sigma * eps with exogenous eps, differentiable in both."""
    eps = Tensor(noise.standard_normal(head.mu.shape))
    sigma = ad.exp(ad.clamp(head.log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX))
    return head.mu + sigma * eps


class DecoderHead:
    """Slices a raw decoder output into per-feature density parameters.

    ``features`` is the ordered feature list; the raw output provides K_j
    logits per categorical feature, one mean per continuous feature, and one
    logit per binary feature.  ``log_vars`` maps continuous feature names to
    their global log-variance parameters (input-independent).
    """

    def __init__(self, features: Sequence, raw: Tensor, log_vars: Mapping[str, Tensor] | None = None):
        self.features = list(features)
        self.raw = raw
        self.log_vars = dict(log_vars or {})
        width = sum(self._width(f) for f in self.features)
        if raw.values.ndim != 2 or raw.shape[1] != width:
            raise ShapeError(
                f"decoder output width {raw.shape} does not match schema width {width}"
            )

    @staticmethod
    def _width(feature) -> int:
        if feature.kind == "categorical":
            return feature.num_levels
        return 1

    def nll(self, targets: Mapping[str, np.ndarray]) -> Tensor:
        """Per-sample negative log density of the targets, summed over features."""
        batch = self.raw.shape[0]
        total = Tensor(np.zeros(batch))
        offset = 0
        i = 0
        feats = self.features
        while i < len(feats):
            f = feats[i]
            if f.name not in targets:
                raise SchemaError(f"missing target column for feature '{f.name}'")
            if f.kind == "categorical":
                k = f.num_levels
                idx = np.asarray(targets[f.name])
                if idx.min() < 0 or idx.max() >= k:
                    raise SchemaError(
                        f"categorical target for '{f.name}' outside [0, {k})"
                    )
                ls = ad.log_softmax(ad.slice_last(self.raw, offset, offset + k))
                onehot = np.zeros((batch, k))
                onehot[np.arange(batch), idx.astype(int)] = 1.0
                total = total - (ls * Tensor(onehot)).sum(axis=-1)
                offset += k
                i += 1
            elif f.kind == "binary":
                # fold the whole contiguous run of binary features into one op
                j = i
                while j < len(feats) and feats[j].kind == "binary":
                    j += 1
                w = j - i
                z = ad.slice_last(self.raw, offset, offset + w)
                x = Tensor(np.column_stack([np.asarray(targets[g.name], dtype=float) for g in feats[i:j]]))
                # -log Bernoulli(x | sigmoid(z)) == softplus(z) - x*z
                total = total + (ad.softplus(z) - x * z).sum(axis=-1)
                offset += w
                i = j
            elif f.kind == "continuous":
                mu = ad.slice_last(self.raw, offset, offset + 1)
                x = Tensor(np.asarray(targets[f.name], dtype=float).reshape(batch, 1))
                lv = self.log_vars.get(f.name)
                if lv is None:
                    lv = Tensor(np.zeros(1))
                sq = ad.square(x - mu)
                total = total + (0.5 * (sq * ad.exp(-lv) + lv + LOG_2PI)).sum(axis=-1)
                offset += 1
                i += 1
            else:
                raise SchemaError(f"unknown feature kind '{f.kind}' for '{f.name}'")
        return total
