"""Exact information measures on finite joint distributions.

Everything here is computed by direct summation over enumerated probability
tables, with the standard continuity conventions 0*log(0) = 0 and
0*log(0/0) = 0.  The module exists to validate identities and bounds
numerically, so tables are capped at 10^6 entries to keep every call
sub-second.

The named variables are drawn from {s, x, t, y}: sensitive attribute, data,
task, and representation.  Joints over (s, x[, t]) are extended with a
representation via a row-stochastic channel p(y|x), which enforces the
Markov structure "the encoder sees only x" by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError

PROB_ATOL = 1e-12
MAX_TABLE_ENTRIES = 10**6

VALID_VARIABLES = ("s", "x", "t", "y")


@dataclass(frozen=True)
class DiscreteJoint:
    """Joint probability table over named finite variables."""

    variables: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", np.asarray(self.table, dtype=np.float64))
        if len(self.variables) != self.table.ndim:
            raise ShapeError(
                f"{len(self.variables)} variables for a {self.table.ndim}-D table"
            )
        if len(set(self.variables)) != len(self.variables):
            raise ShapeError(f"duplicate variables in {self.variables}")
        for v in self.variables:
            if v not in VALID_VARIABLES:
                raise ShapeError(f"unknown variable '{v}', expected one of {VALID_VARIABLES}")
        if self.table.size > MAX_TABLE_ENTRIES:
            raise ShapeError(f"table with {self.table.size} entries exceeds the 1e6 cap")
        if np.any(self.table < -PROB_ATOL):
            raise ShapeError("joint table has negative entries")
        total = float(self.table.sum())
        if abs(total - 1.0) > PROB_ATOL:
            raise ShapeError(f"joint table sums to {total}, not 1")

    def axis(self, var: str) -> int:
        try:
            return self.variables.index(var)
        except ValueError:
            raise ShapeError(f"variable '{var}' not in joint over {self.variables}") from None

    def alphabet_size(self, var: str) -> int:
        return self.table.shape[self.axis(var)]

    def marginal(self, keep: tuple[str, ...]) -> np.ndarray:
        """Marginal table over ``keep``, axes in the order given."""
        drop = tuple(self.axis(v) for v in self.variables if v not in keep)
        reduced = self.table.sum(axis=drop) if drop else self.table
        remaining = [v for v in self.variables if v in keep]
        order = [remaining.index(v) for v in keep]
        return np.transpose(reduced, order)


@dataclass(frozen=True)
class Channel:
    """Row-stochastic conditional table p(y | x); depends on x only."""

    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", np.asarray(self.table, dtype=np.float64))
        if self.table.ndim != 2:
            raise ShapeError(f"channel table must be 2-D, got shape {self.table.shape}")
        if np.any(self.table < -PROB_ATOL):
            raise ShapeError("channel table has negative entries")
        rows = self.table.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > PROB_ATOL):
            raise ShapeError("channel rows must each sum to 1")

    @property
    def input_size(self) -> int:
        return self.table.shape[0]

    @property
    def output_size(self) -> int:
        return self.table.shape[1]


def _plogq(p: np.ndarray, q: np.ndarray) -> float:
    """Sum of p*log(q) with 0*log(0) = 0; -inf if q vanishes where p does not."""
    mask = p > 0.0
    if np.any(q[mask] <= 0.0):
        return -math.inf
    return float(np.sum(p[mask] * np.log(q[mask])))


def _check_disjoint(*groups: tuple[str, ...]):
    seen: set[str] = set()
    for g in groups:
        for v in g:
            if v in seen:
                raise ShapeError(f"variable subsets overlap on '{v}'")
            seen.add(v)


def _as_group(vars_) -> tuple[str, ...]:
    if isinstance(vars_, str):
        return (vars_,)
    return tuple(vars_)


def mutual_info(joint: DiscreteJoint, a, b) -> float:
    """Exact I(A; B) in nats by direct summation over the (A, B) marginal."""
    a, b = _as_group(a), _as_group(b)
    _check_disjoint(a, b)
    pab = joint.marginal(a + b)
    na = int(np.prod(pab.shape[: len(a)], dtype=int))
    pab = pab.reshape(na, -1)
    pa = pab.sum(axis=1, keepdims=True)
    pb = pab.sum(axis=0, keepdims=True)
    return _plogq(pab, pab) - _plogq(pab, pa * pb)


def entropy(joint: DiscreteJoint, a) -> float:
    """Exact H(A) in nats."""
    pa = joint.marginal(_as_group(a))
    return -_plogq(pa, pa)


def cond_mutual_info(joint: DiscreteJoint, a, b, given) -> float:
    """Exact I(A; B | C) = sum_c p(c) I(A; B | C=c) in nats."""
    a, b, c = _as_group(a), _as_group(b), _as_group(given)
    _check_disjoint(a, b, c)
    pabc = joint.marginal(c + a + b)
    nc = int(np.prod(pabc.shape[: len(c)], dtype=int))
    na = int(np.prod(pabc.shape[len(c) : len(c) + len(a)], dtype=int))
    pabc = pabc.reshape(nc, na, -1)
    total = 0.0
    for k in range(nc):
        pc = float(pabc[k].sum())
        if pc <= 0.0:
            continue
        cond = pabc[k] / pc
        pa = cond.sum(axis=1, keepdims=True)
        pb = cond.sum(axis=0, keepdims=True)
        total += pc * (_plogq(cond, cond) - _plogq(cond, pa * pb))
    return total


def apply_channel(joint: DiscreteJoint, ch: Channel) -> DiscreteJoint:
    """Extend a joint over (..., x, ...) with y via p(y|x).

    The output joint is p(..., y) = p(...) * ch[x, y]; marginalizing y
    recovers the input joint exactly.
    """
    if "y" in joint.variables:
        raise ShapeError("joint already contains a representation variable y")
    ax = joint.axis("x")
    if joint.table.shape[ax] != ch.input_size:
        raise ShapeError(
            f"channel input alphabet {ch.input_size} does not match |x| = {joint.table.shape[ax]}"
        )
    moved = np.moveaxis(joint.table, ax, -1)  # (..., x)
    ext = moved[..., :, None] * ch.table  # (..., x, y)
    ext = np.moveaxis(ext, -2, ax)  # x back in place, y last
    return DiscreteJoint(joint.variables + ("y",), ext)


# ---------------------------------------------------------------------------
# objective values and identities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LagrangianRecord:
    """Exact objective values for one (joint, channel, multiplier) triple.

    ``private_*`` are the unsupervised objectives (keep data information that
    the sensitive attribute does not share); ``fair_*`` are the supervised
    analogues for a task variable.  ``funnel_lagrangian`` is the classic
    privacy-funnel objective I(S;Y) - alpha I(X;Y).
    """

    lam: float
    gamma: float
    alpha: float
    beta: float
    private_lagrangian: float  # I(S;Y) - lam * I(X;Y|S)
    private_compression_form: float  # I(X;Y) - gamma * I(X;Y|S)
    funnel_lagrangian: float  # I(S;Y) - alpha * I(X;Y)
    fair_lagrangian: float | None  # I(S;Y) + I(X;Y|S,T) - lam * I(T;Y|S)
    fair_compression_form: float | None  # I(X;Y) - beta * I(T;Y|S)


def lagrangian_values(joint: DiscreteJoint, ch: Channel, lam: float) -> LagrangianRecord:
    """Evaluate every Lagrangian exactly on the channel-extended joint.

    Under the Markov structure the compression forms equal the constrained
    forms pointwise: with gamma = lam + 1, beta = lam + 1 and
    alpha = lam / (lam + 1),

        private_compression_form == private_lagrangian
        (lam + 1) * funnel_lagrangian == private_lagrangian
        fair_compression_form == fair_lagrangian
    """
    if lam < 0:
        raise ShapeError(f"multiplier must be non-negative, got {lam}")
    ext = apply_channel(joint, ch)
    isy = mutual_info(ext, "s", "y")
    ixy = mutual_info(ext, "x", "y")
    ixy_s = cond_mutual_info(ext, "x", "y", "s")
    gamma = lam + 1.0
    alpha = lam / (lam + 1.0)
    has_t = "t" in joint.variables
    fair = fair_cf = None
    if has_t:
        ity_s = cond_mutual_info(ext, "t", "y", "s")
        ixy_st = cond_mutual_info(ext, "x", "y", ("s", "t"))
        fair = isy + ixy_st - lam * ity_s
        fair_cf = ixy - gamma * ity_s
    return LagrangianRecord(
        lam=lam,
        gamma=gamma,
        alpha=alpha,
        beta=gamma,
        private_lagrangian=isy - lam * ixy_s,
        private_compression_form=ixy - gamma * ixy_s,
        funnel_lagrangian=isy - alpha * ixy,
        fair_lagrangian=fair,
        fair_compression_form=fair_cf,
    )


@dataclass(frozen=True)
class BoundGaps:
    """Slack of the three variational bounds; all must be >= 0."""

    compression_gap: float  # E[KL(p(y|x) || q_y)] - I(X;Y)
    reconstruction_gap: float  # I(X;Y|S) - E[log(q(x|s,y)/p(x|s))]
    prediction_gap: float | None  # I(T;Y|S) - E[log(q(t|s,y)/p(t|s))]


def bound_gaps(
    joint: DiscreteJoint,
    ch: Channel,
    q_y: np.ndarray,
    q_x_given_sy: np.ndarray,
    q_t_given_sy: np.ndarray | None = None,
) -> BoundGaps:
    """Exact slack of the variational upper/lower bounds for given q tables.

    ``q_y`` has shape (|Y|,); ``q_x_given_sy`` shape (|S|, |Y|, |X|) with unit
    row sums over x; ``q_t_given_sy`` shape (|S|, |Y|, |T|) analogously.  Each
    gap vanishes when the q table equals the true marginal/posterior.
    """
    ext = apply_channel(joint, ch)
    q_y = np.asarray(q_y, dtype=np.float64)
    if q_y.shape != (ch.output_size,):
        raise ShapeError(f"q_y must have shape ({ch.output_size},), got {q_y.shape}")
    if abs(float(q_y.sum()) - 1.0) > 1e-9 or np.any(q_y < 0):
        raise ShapeError("q_y is not a probability distribution")

    p_x = joint.marginal(("x",))
    # E_x[ KL(p(y|x) || q_y) ]
    e_kl = 0.0
    for i in range(ch.input_size):
        row = ch.table[i]
        e_kl += float(p_x[i]) * (_plogq(row, row) - _plogq(row, q_y))
    compression_gap = e_kl - mutual_info(ext, "x", "y")

    reconstruction_gap = _conditional_gap(ext, "x", q_x_given_sy)

    prediction_gap = None
    if q_t_given_sy is not None:
        if "t" not in ext.variables:
            raise ShapeError("joint has no task variable t for the prediction bound")
        prediction_gap = _conditional_gap(ext, "t", q_t_given_sy)

    return BoundGaps(compression_gap, reconstruction_gap, prediction_gap)


def _conditional_gap(ext: DiscreteJoint, target: str, q_table: np.ndarray) -> float:
    """I(target; y | s) - E_p[log(q(target|s,y) / p(target|s))]."""
    n_s = ext.alphabet_size("s")
    n_y = ext.alphabet_size("y")
    n_v = ext.alphabet_size(target)
    q_table = np.asarray(q_table, dtype=np.float64)
    if q_table.shape != (n_s, n_y, n_v):
        raise ShapeError(
            f"q table for '{target}' must have shape {(n_s, n_y, n_v)}, got {q_table.shape}"
        )
    if np.any(q_table < 0) or np.any(np.abs(q_table.sum(axis=-1) - 1.0) > 1e-9):
        raise ShapeError(f"q table for '{target}' rows must be distributions over {target}")

    p_svy = ext.marginal(("s", target, "y"))  # (s, v, y)
    p_sv = p_svy.sum(axis=2)  # (s, v)
    p_s = p_sv.sum(axis=1)  # (s,)

    expectation = 0.0
    for i in range(n_s):
        if p_s[i] <= 0.0:
            continue
        p_v_given_s = p_sv[i] / p_s[i]
        for v in range(n_v):
            p_slice = p_svy[i, v]  # over y
            if p_v_given_s[v] <= 0.0:
                continue
            expectation += _plogq(p_slice, q_table[i, :, v]) - _plogq(
                p_slice, np.full(n_y, p_v_given_s[v])
            )
    return cond_mutual_info(ext, target, "y", "s") - expectation


def true_posteriors(joint: DiscreteJoint, ch: Channel, target: str) -> np.ndarray:
    """p(target | s, y) of the extended joint, shape (|S|, |Y|, |target|).

    Cells with p(s, y) = 0 get a uniform row so the table stays stochastic.
    """
    ext = apply_channel(joint, ch)
    p_svy = ext.marginal(("s", target, "y"))
    p_sy = p_svy.sum(axis=1)  # (s, y)
    n_v = p_svy.shape[1]
    out = np.empty((p_svy.shape[0], p_svy.shape[2], n_v))
    for i in range(p_svy.shape[0]):
        for y in range(p_svy.shape[2]):
            mass = p_sy[i, y]
            out[i, y] = p_svy[i, :, y] / mass if mass > 0 else np.full(n_v, 1.0 / n_v)
    return out


# ---------------------------------------------------------------------------
# randomized identity suite
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def random_joint(rng: np.random.Generator, variables: tuple[str, ...], sizes: tuple[int, ...]) -> DiscreteJoint:
    """Strictly positive random joint over the given alphabets."""
    table = rng.random(sizes) ** 2 + 1e-3
    return DiscreteJoint(variables, table / table.sum())


def random_channel(rng: np.random.Generator, n_in: int, n_out: int) -> Channel:
    table = rng.random((n_in, n_out)) ** 2 + 1e-3
    return Channel(table / table.sum(axis=1, keepdims=True))


def identity_suite(seed: int = 2020, cases: int = 50, tolerance: float = 1e-9) -> list[CheckResult]:
    """Run the randomized identity and bound checks on ``cases`` fixtures.

    Covers: the multiplier correspondences between the constrained and
    compression-form objectives, the privacy-funnel rescaling, the chain rule
    I(X;Y) = I(S;Y) + I(X;Y|S), the supervised decomposition
    I(S;Y) + I(X;Y|S,T) = I(X;Y) - I(T;Y|S), the data-processing inequality,
    the equalized-odds objective identity, and non-negativity of the three
    variational bound gaps (with exactness for the true marginal/posteriors).
    """
    rng = np.random.default_rng(seed)
    worst = {
        "private_compression_equivalence": 0.0,
        "funnel_rescaling_equivalence": 0.0,
        "fair_compression_equivalence": 0.0,
        "chain_rule": 0.0,
        "fair_decomposition": 0.0,
        "data_processing_inequality": 0.0,
        "equalized_odds_objective_identity": 0.0,
        "bound_gaps_nonnegative": 0.0,
        "bound_gaps_tight_at_truth": 0.0,
    }

    for case in range(cases):
        n_s = int(rng.integers(2, 4))
        n_x = int(rng.integers(2, 5))
        n_t = int(rng.integers(2, 4))
        n_y = int(rng.integers(2, 5))
        joint = random_joint(rng, ("s", "x", "t"), (n_s, n_x, n_t))
        ch = random_channel(rng, n_x, n_y)
        lam = 0.0 if case == 0 else float(rng.uniform(0.0, 5.0))

        rec = lagrangian_values(joint, ch, lam)
        worst["private_compression_equivalence"] = max(
            worst["private_compression_equivalence"],
            abs(rec.private_compression_form - rec.private_lagrangian),
        )
        worst["funnel_rescaling_equivalence"] = max(
            worst["funnel_rescaling_equivalence"],
            abs((lam + 1.0) * rec.funnel_lagrangian - rec.private_lagrangian),
        )
        worst["fair_compression_equivalence"] = max(
            worst["fair_compression_equivalence"],
            abs(rec.fair_compression_form - rec.fair_lagrangian),
        )

        ext = apply_channel(joint, ch)
        isy = mutual_info(ext, "s", "y")
        ixy = mutual_info(ext, "x", "y")
        worst["chain_rule"] = max(
            worst["chain_rule"],
            abs(ixy - isy - cond_mutual_info(ext, "x", "y", "s")),
        )
        worst["fair_decomposition"] = max(
            worst["fair_decomposition"],
            abs(
                isy
                + cond_mutual_info(ext, "x", "y", ("s", "t"))
                - (ixy - cond_mutual_info(ext, "t", "y", "s"))
            ),
        )
        worst["data_processing_inequality"] = max(
            worst["data_processing_inequality"],
            isy - mutual_info(ext, "s", "x"),
        )
        # I(S;Y|T) + I(X;Y|S,T) == I(X;Y) - I(T;Y|S) - (I(S;Y) - I(S;Y|T))
        isy_t = cond_mutual_info(ext, "s", "y", "t")
        lhs = isy_t + cond_mutual_info(ext, "x", "y", ("s", "t"))
        rhs = ixy - cond_mutual_info(ext, "t", "y", "s") - (isy - isy_t)
        worst["equalized_odds_objective_identity"] = max(
            worst["equalized_odds_objective_identity"], abs(lhs - rhs)
        )

        q_y = rng.random(n_y) + 1e-3
        q_y /= q_y.sum()
        q_x = rng.random((n_s, n_y, n_x)) + 1e-3
        q_x /= q_x.sum(axis=-1, keepdims=True)
        q_t = rng.random((n_s, n_y, n_t)) + 1e-3
        q_t /= q_t.sum(axis=-1, keepdims=True)
        gaps = bound_gaps(joint, ch, q_y, q_x, q_t)
        worst["bound_gaps_nonnegative"] = max(
            worst["bound_gaps_nonnegative"],
            -min(gaps.compression_gap, gaps.reconstruction_gap, gaps.prediction_gap),
        )

        tight = bound_gaps(
            joint,
            ch,
            ext.marginal(("y",)),
            true_posteriors(joint, ch, "x"),
            true_posteriors(joint, ch, "t"),
        )
        worst["bound_gaps_tight_at_truth"] = max(
            worst["bound_gaps_tight_at_truth"],
            max(abs(tight.compression_gap), abs(tight.reconstruction_gap), abs(tight.prediction_gap)),
        )

    results = []
    for name, w in worst.items():
        tol = 1e-10 if name == "bound_gaps_nonnegative" else tolerance
        results.append(CheckResult(name, w, tol))
    return results


# ---------------------------------------------------------------------------
# plain-text fixtures
# ---------------------------------------------------------------------------


def load_joint(path: str | Path) -> DiscreteJoint:
    """Read a joint from the plain-text format.

    First non-comment line: ``joint <var> <var> ...``; each following line is
    one index tuple and its probability, whitespace-separated.  ``#`` starts a
    comment.
    """
    kind, header, entries = _read_table(path)
    if kind != "joint":
        raise DataError(f"{path}: expected a joint table, found '{kind}'")
    variables = tuple(header)
    ndim = len(variables)
    sizes = [0] * ndim
    for idx, _ in entries:
        if len(idx) != ndim:
            raise DataError(f"{path}: index tuple {idx} does not match {ndim} variables")
        for k, i in enumerate(idx):
            sizes[k] = max(sizes[k], i + 1)
    table = np.zeros(sizes)
    for idx, p in entries:
        table[idx] = p
    return DiscreteJoint(variables, table)


def load_channel(path: str | Path) -> Channel:
    """Read a channel from the plain-text format: ``channel <n_in> <n_out>``."""
    kind, header, entries = _read_table(path)
    if kind != "channel":
        raise DataError(f"{path}: expected a channel table, found '{kind}'")
    n_in, n_out = int(header[0]), int(header[1])
    table = np.zeros((n_in, n_out))
    for idx, p in entries:
        if len(idx) != 2:
            raise DataError(f"{path}: channel entries need two indices, got {idx}")
        table[idx] = p
    return Channel(table)


def _read_table(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such table file: {path}")
    kind = None
    header: list[str] = []
    entries: list[tuple[tuple[int, ...], float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if kind is None:
                kind, header = parts[0], parts[1:]
                continue
            try:
                idx = tuple(int(v) for v in parts[:-1])
                p = float(parts[-1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed table line '{text}'") from None
            entries.append((idx, p))
    if kind is None:
        raise DataError(f"{path}: empty table file")
    return kind, header, entries
