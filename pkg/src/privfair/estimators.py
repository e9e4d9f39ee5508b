"""Leakage estimation with a neural mutual-information estimator.

The estimator maximizes the Donsker-Varadhan bound
``E_joint[T] - log E_marginal[exp T]`` over a small MLP critic, with marginal
pairs formed by permuting the representation rows against the attribute rows
inside each minibatch.  The log-partition gradient is rescaled by an
exponential moving average of the partition estimate (the standard moving
average bias corrector); the *reported* value is the uncorrected bound,
tail-averaged over the final iterations.

Also here: evaluation of the variational bound terms of a trained model on a
dataset (the quantities the trade-off curves are drawn from).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset
from .distributions import NoiseSource, gaussian_kl_to_standard, reparam_sample
from .errors import ConfigError, NumericError, ShapeError
from .objectives import ModelGraph, _glorot
from .trainer import AdamState, adam_step

LN2 = math.log(2.0)


@dataclass(frozen=True)
class MineConfig:
    """Critic layout and optimization settings for the leakage estimator."""

    hidden: tuple[int, int] = (100, 100)
    iterations: int = 50_000
    learning_rate: float = 1e-3
    batch_size: int = 2048
    ema_rate: float = 0.1
    window: int = 100

    def __post_init__(self):
        if not 0.0 < self.ema_rate <= 1.0:
            raise ConfigError(f"ema_rate must be in (0, 1], got {self.ema_rate}")
        if self.window > self.iterations:
            raise ConfigError(
                f"tail window {self.window} exceeds iteration count {self.iterations}"
            )
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")

    @classmethod
    def desk(cls, iterations: int = 20_000, batch_size: int = 256) -> "MineConfig":
        """Reduced preset sized for CI: same critic, fewer/cheaper iterations."""
        return cls(iterations=iterations, batch_size=batch_size)

    def to_dict(self) -> dict:
        return {
            "hidden": list(self.hidden),
            "iterations": self.iterations,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "ema_rate": self.ema_rate,
            "window": self.window,
        }


@dataclass
class MiEstimate:
    """Tail-averaged mutual-information estimate with its iteration trace."""

    nats: float
    trace: np.ndarray

    @property
    def bits(self) -> float:
        return self.nats / LN2


def _critic_params(rng: np.random.Generator, d_in: int, hidden: tuple[int, int]) -> dict[str, Tensor]:
    h1, h2 = hidden
    return {
        "w1": Tensor(_glorot(rng, d_in, h1), requires_grad=True),
        "b1": Tensor(np.zeros(h1), requires_grad=True),
        "w2": Tensor(_glorot(rng, h1, h2), requires_grad=True),
        "b2": Tensor(np.zeros(h2), requires_grad=True),
        "w3": Tensor(_glorot(rng, h2, 1), requires_grad=True),
        "b3": Tensor(np.zeros(1), requires_grad=True),
    }


def _critic_forward(params: dict[str, Tensor], xy: Tensor) -> Tensor:
    h = ad.relu6(ad.matmul(xy, params["w1"]) + params["b1"])
    h = ad.relu6(ad.matmul(h, params["w2"]) + params["b2"])
    return ad.matmul(h, params["w3"]) + params["b3"]


def _as_matrix(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeError(f"samples must be 1-D or 2-D, got shape {a.shape}")
    return a


def mine_estimate(
    samples_s: np.ndarray,
    samples_y: np.ndarray,
    cfg: MineConfig | None = None,
    seed: int = 2020,
) -> MiEstimate:
    """Estimate I(S; Y) in nats from paired samples.

    Minibatches are drawn with replacement from the sample pool; the marginal
    batch reuses the same rows with Y permuted in-batch.  Returns the
    uncorrected bound tail-averaged over the final ``cfg.window`` iterations.
    """
    cfg = cfg or MineConfig()
    s = _as_matrix(samples_s)
    y = _as_matrix(samples_y)
    if s.shape[0] != y.shape[0]:
        raise ShapeError(f"sample counts differ: {s.shape[0]} vs {y.shape[0]}")
    n = s.shape[0]
    if n < 2 * cfg.batch_size:
        raise ShapeError(
            f"need at least 2 * batch_size = {2 * cfg.batch_size} samples, got {n}"
        )

    rng = np.random.default_rng(seed)
    params = _critic_params(rng, s.shape[1] + y.shape[1], cfg.hidden)
    state = AdamState()
    trace = np.empty(cfg.iterations)
    ema: float | None = None

    for it in range(cfg.iterations):
        idx = rng.integers(0, n, cfg.batch_size)
        perm = rng.permutation(cfg.batch_size)
        s_b, y_b = s[idx], y[idx]
        joint = np.concatenate([s_b, y_b], axis=1)
        marginal = np.concatenate([s_b, y_b[perm]], axis=1)

        with ad.Tape() as tape:
            t_joint = _critic_forward(params, Tensor(joint)).mean()
            e_marg = ad.exp(_critic_forward(params, Tensor(marginal))).mean()
            mean_t = t_joint.item()
            mean_e = e_marg.item()
            if not (np.isfinite(mean_t) and np.isfinite(mean_e)) or mean_e <= 0.0:
                raise NumericError(f"mine_estimate: non-finite objective at iteration {it}")
            ema = mean_e if ema is None else (1.0 - cfg.ema_rate) * ema + cfg.ema_rate * mean_e
            # gradient of e_marg / ema approximates the gradient of
            # log E[exp T] with the moving-average denominator
            loss = (e_marg * (1.0 / ema)) - t_joint
        grads = tape.backward(loss)
        adam_step(params, {k: grads[p] for k, p in params.items()}, state, cfg.learning_rate)

        trace[it] = mean_t - math.log(mean_e)

    return MiEstimate(nats=float(trace[-cfg.window :].mean()), trace=trace)


# ---------------------------------------------------------------------------
# variational bound terms of a trained model
# ---------------------------------------------------------------------------


@dataclass
class BoundReport:
    """Dataset means of the variational bound terms, in nats.

    ``ixy_upper_nats`` is the KL term (an upper bound on the information the
    representation keeps about the data).  ``recon_loglik_nats`` is the mean
    log-likelihood the decoder assigns to the data given (S, Y); up to a
    constant that does not depend on the representation it lower-bounds the
    retained conditional information.  ``pred_loglik_nats`` is the analogue
    for the task decoder.  Exactly one of the last two is set.
    """

    ixy_upper_nats: float
    recon_loglik_nats: float | None
    pred_loglik_nats: float | None

    @property
    def ixy_upper_bits(self) -> float:
        return self.ixy_upper_nats / LN2


def bound_report(
    model: ModelGraph,
    dataset: Dataset,
    noise: NoiseSource,
    batch_size: int = 4096,
) -> BoundReport:
    """Evaluate the bound terms over a whole dataset, one noise draw per row."""
    n = len(dataset)
    kl_sum = 0.0
    ll_sum = 0.0
    for start in range(0, n, batch_size):
        batch = dataset.batch(np.arange(start, min(start + batch_size, n)))
        head = model.encode(batch)
        kl_sum += float(gaussian_kl_to_standard(head).values.sum())
        y = reparam_sample(head, noise)
        nll = model.decode(y, batch).nll(model.decoder_targets(batch))
        ll_sum -= float(nll.values.sum())
    kl_mean = kl_sum / n
    ll_mean = ll_sum / n
    if model.config.objective == "reconstruction":
        return BoundReport(kl_mean, ll_mean, None)
    return BoundReport(kl_mean, None, ll_mean)
