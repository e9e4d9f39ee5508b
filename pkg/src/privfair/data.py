"""Dataset ingestion, preprocessing, splits, and the synthetic colored toy.

CSV data is split into train/test *before* preprocessing so normalization
statistics are functions of the training rows only.  Categorical features are
one-hot encoded, continuous features z-scored, binary features passed through.
The package ships schema fixtures for the two supported census/recidivism
datasets but never redistributes the data itself.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataError, SchemaError

logger = logging.getLogger(__name__)

MISSING_MARKERS = {"", "?", "NA", "N/A"}
UNKNOWN_LEVEL = "Unknown"


@dataclass(frozen=True)
class Feature:
    """One column of the feature block X."""

    name: str
    kind: str  # "categorical" | "continuous" | "binary"
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("categorical", "continuous", "binary"):
            raise SchemaError(f"unknown feature kind '{self.kind}' for '{self.name}'")
        if self.kind == "categorical":
            if self.levels is None or len(self.levels) < 2:
                raise SchemaError(f"categorical feature '{self.name}' needs >= 2 levels")
        elif self.levels is not None:
            raise SchemaError(f"feature '{self.name}' of kind {self.kind} takes no levels")

    @property
    def num_levels(self) -> int:
        return len(self.levels) if self.levels is not None else 1

    @property
    def encoded_width(self) -> int:
        return self.num_levels if self.kind == "categorical" else 1


@dataclass(frozen=True)
class Schema:
    """Feature layout plus the sensitive and task column declarations."""

    features: tuple[Feature, ...]
    sensitive_name: str
    sensitive_positive: tuple[str, ...] = ()
    sensitive_num_levels: int = 2
    task_name: str | None = None
    task_positive: tuple[str, ...] = ()
    task_num_levels: int = 2

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if self.sensitive_name in names:
            raise SchemaError("sensitive column must not appear among the features")

    @property
    def encoded_width(self) -> int:
        return sum(f.encoded_width for f in self.features)

    @property
    def reconstruction_width(self) -> int:
        # categorical K logits + one mean/logit per continuous/binary feature
        return self.encoded_width

    def task_feature(self) -> Feature:
        if self.task_name is None:
            raise SchemaError("schema declares no task column")
        if self.task_num_levels == 2:
            return Feature(self.task_name, "binary")
        return Feature(
            self.task_name,
            "categorical",
            tuple(str(i) for i in range(self.task_num_levels)),
        )

    def hash(self) -> str:
        import hashlib

        blob = json.dumps(
            {
                "features": [(f.name, f.kind, f.levels) for f in self.features],
                "sensitive": [self.sensitive_name, list(self.sensitive_positive), self.sensitive_num_levels],
                "task": [self.task_name, list(self.task_positive), self.task_num_levels],
            },
            sort_keys=True,
        ).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Batch:
    """A row slice ready for the model: encoded features plus label codes."""

    x: np.ndarray
    s: np.ndarray
    s_onehot: np.ndarray
    t: np.ndarray | None
    targets: dict[str, np.ndarray]


@dataclass
class Dataset:
    """Immutable-after-load encoded dataset with its preprocessing record."""

    schema: Schema
    x: np.ndarray
    s: np.ndarray
    t: np.ndarray | None
    targets: dict[str, np.ndarray]
    split: str = "all"
    norm_stats: dict[str, tuple[float, float]] = field(default_factory=dict)
    orig_rows: np.ndarray | None = None
    dropped_rows: int = 0
    unknown_level_count: int = 0

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def s_onehot(self) -> np.ndarray:
        width = self.schema.sensitive_num_levels
        out = np.zeros((len(self), width))
        out[np.arange(len(self)), self.s] = 1.0
        return out

    def batch(self, idx: np.ndarray) -> Batch:
        sv = self.s[idx]
        width = self.schema.sensitive_num_levels
        onehot = np.zeros((len(idx), width))
        onehot[np.arange(len(idx)), sv] = 1.0
        return Batch(
            x=self.x[idx],
            s=sv,
            s_onehot=onehot,
            t=None if self.t is None else self.t[idx],
            targets={k: v[idx] for k, v in self.targets.items()},
        )

    def all_rows(self) -> Batch:
        return self.batch(np.arange(len(self)))


def schema_from_dict(spec: dict) -> Schema:
    feats = []
    for f in spec["features"]:
        feats.append(
            Feature(
                f["name"],
                f["kind"],
                tuple(f["levels"]) if f.get("levels") is not None else None,
            )
        )
    sens = spec["sensitive"]
    task = spec.get("task")
    return Schema(
        features=tuple(feats),
        sensitive_name=sens["name"],
        sensitive_positive=tuple(sens.get("positive_levels", ())),
        sensitive_num_levels=int(sens.get("num_levels", 2)),
        task_name=task["name"] if task else None,
        task_positive=tuple(task.get("positive_levels", ())) if task else (),
        task_num_levels=int(task.get("num_levels", 2)) if task else 2,
    )


def schema_from_json(path: str | Path) -> Schema:
    with open(path, "r", encoding="utf-8") as fh:
        return schema_from_dict(json.load(fh))


def _fixture(name: str) -> dict:
    with resources.files("privfair.fixtures").joinpath(name).open("r") as fh:
        return json.load(fh)


def adult_schema() -> Schema:
    """Schema fixture for the 1994 census income dataset (width 121)."""
    return schema_from_dict(_fixture("adult_schema.json"))


def compas_schema() -> Schema:
    """Schema fixture for the recidivism-score dataset (width 19)."""
    return schema_from_dict(_fixture("compas_schema.json"))


def _binary_code(raw: str, positive: tuple[str, ...], column: str, row: int) -> int:
    value = raw.strip().rstrip(".")
    if value in positive:
        return 1
    return 0


def load_tabular(
    path: str | Path,
    schema: Schema,
    train_fraction: float = 0.7,
    seed: int = 2020,
) -> tuple[Dataset, Dataset]:
    """Load a CSV, split it, and encode both splits with train-only statistics.

    Rows with missing values ('?' or empty cells) in any used column are
    dropped and counted.  Categorical levels not present in the schema map to
    the explicit 'Unknown' bucket with a warning count.  The split is a
    seeded permutation with floor(train_fraction * n) training rows.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such data file: {path}")
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0, 1), got {train_fraction}")

    used_cols = [f.name for f in schema.features] + [schema.sensitive_name]
    if schema.task_name is not None:
        used_cols.append(schema.task_name)

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in used_cols if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        col_idx = {c: header.index(c) for c in used_cols}

        rows: list[list[str]] = []
        dropped = 0
        for r, row in enumerate(reader):
            if len(row) < len(header):
                raise DataError(f"{path}: row {r + 2} has {len(row)} cells, expected {len(header)}")
            cells = [row[col_idx[c]].strip() for c in used_cols]
            if any(c in MISSING_MARKERS for c in cells):
                dropped += 1
                continue
            rows.append(cells)

    if dropped:
        logger.warning("%s: dropped %d rows with missing values", path.name, dropped)
    n = len(rows)
    if n < 2:
        raise DataError(f"{path}: fewer than 2 usable rows")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(np.floor(train_fraction * n))
    train_rows = perm[:n_train]
    test_rows = perm[n_train:]

    columns = {c: [row[i] for row in rows] for i, c in enumerate(used_cols)}

    train = _encode_split(schema, columns, train_rows, None, "train", path)
    test = _encode_split(schema, columns, test_rows, train.norm_stats, "test", path)
    train.dropped_rows = dropped
    test.dropped_rows = dropped
    return train, test


def _encode_split(
    schema: Schema,
    columns: dict[str, list[str]],
    row_idx: np.ndarray,
    stats: dict[str, tuple[float, float]] | None,
    split: str,
    path: Path,
) -> Dataset:
    n = len(row_idx)
    blocks: list[np.ndarray] = []
    targets: dict[str, np.ndarray] = {}
    out_stats: dict[str, tuple[float, float]] = {}
    unknown_count = 0

    for f in schema.features:
        raw = [columns[f.name][i] for i in row_idx]
        if f.kind == "categorical":
            level_of = {lv: k for k, lv in enumerate(f.levels)}
            codes = np.empty(n, dtype=int)
            for j, cell in enumerate(raw):
                code = level_of.get(cell)
                if code is None:
                    if UNKNOWN_LEVEL in level_of:
                        code = level_of[UNKNOWN_LEVEL]
                        unknown_count += 1
                    else:
                        raise DataError(
                            f"{path}: unknown level '{cell}' for '{f.name}' and no Unknown bucket"
                        )
                codes[j] = code
            block = np.zeros((n, f.num_levels))
            block[np.arange(n), codes] = 1.0
            blocks.append(block)
            targets[f.name] = codes
        else:
            vals = np.empty(n)
            for j, cell in enumerate(raw):
                try:
                    vals[j] = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: unparseable cell '{cell}' for '{f.name}' (data row {row_idx[j]})"
                    ) from None
            if f.kind == "continuous":
                if stats is None:
                    mean = float(vals.mean())
                    std = float(vals.std())
                    if std < 1e-12:
                        std = 1.0
                else:
                    mean, std = stats[f.name]
                out_stats[f.name] = (mean, std)
                vals = (vals - mean) / std
            blocks.append(vals.reshape(n, 1))
            targets[f.name] = vals

    if unknown_count:
        logger.warning("%s/%s: %d cells mapped to the Unknown bucket", path.name, split, unknown_count)

    s = np.array(
        [
            _binary_code(columns[schema.sensitive_name][i], schema.sensitive_positive, schema.sensitive_name, i)
            for i in row_idx
        ],
        dtype=int,
    )
    t = None
    if schema.task_name is not None:
        t = np.array(
            [
                _binary_code(columns[schema.task_name][i], schema.task_positive, schema.task_name, i)
                for i in row_idx
            ],
            dtype=int,
        )

    return Dataset(
        schema=schema,
        x=np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0)),
        s=s,
        t=t,
        targets=targets,
        split=split,
        norm_stats=out_stats,
        orig_rows=np.asarray(row_idx, dtype=int),
        unknown_level_count=unknown_count,
    )


# ---------------------------------------------------------------------------
# synthetic colored-pattern toy
# ---------------------------------------------------------------------------

GLYPH_SIZE = 8
NUM_GLYPHS = 10
NUM_COLORS = 3


def _glyph_masks() -> np.ndarray:
    """Ten fixed 8x8 binary patterns, one per glyph class."""
    g = np.zeros((NUM_GLYPHS, GLYPH_SIZE, GLYPH_SIZE))
    # 0: border ring
    g[0, 0, :] = g[0, -1, :] = g[0, :, 0] = g[0, :, -1] = 1
    # 1: vertical bar
    g[1, :, 3:5] = 1
    # 2: horizontal bar
    g[2, 3:5, :] = 1
    # 3: main diagonal
    for i in range(GLYPH_SIZE):
        g[3, i, i] = 1
        g[3, i, max(i - 1, 0)] = 1
    # 4: anti-diagonal
    for i in range(GLYPH_SIZE):
        g[4, i, GLYPH_SIZE - 1 - i] = 1
        g[4, i, min(GLYPH_SIZE - i, GLYPH_SIZE - 1)] = 1
    # 5: plus sign
    g[5, 3:5, 1:7] = 1
    g[5, 1:7, 3:5] = 1
    # 6: X (both diagonals)
    for i in range(GLYPH_SIZE):
        g[6, i, i] = 1
        g[6, i, GLYPH_SIZE - 1 - i] = 1
    # 7: 2x2 checkerboard
    for r in range(GLYPH_SIZE):
        for c in range(GLYPH_SIZE):
            if ((r // 2) + (c // 2)) % 2 == 0:
                g[7, r, c] = 1
    # 8: filled center square
    g[8, 2:6, 2:6] = 1
    # 9: corner dots
    for r, c in [(0, 0), (0, 6), (6, 0), (6, 6)]:
        g[9, r : r + 2, c : c + 2] = 1
    return g


def toy_schema() -> Schema:
    """8x8x3 pattern images: 192 binary pixels, 3-color sensitive, 10-glyph task."""
    feats = tuple(
        Feature(f"px{i:03d}", "binary") for i in range(NUM_COLORS * GLYPH_SIZE * GLYPH_SIZE)
    )
    return Schema(
        features=feats,
        sensitive_name="color",
        sensitive_num_levels=NUM_COLORS,
        task_name="glyph",
        task_num_levels=NUM_GLYPHS,
    )


def synth_colored(n: int, seed: int = 2020, noise_scale: float = 0.08) -> Dataset:
    """Generate the colored-pattern toy: glyph class is the task, color the
    sensitive attribute, drawn independently of each other.

    The glyph shape is drawn into all three channels; the color only tints
    its own channel.  Shape is therefore the dominant signal and the color a
    subordinate one, so aggressive compression discards color first.
    """
    if n < 1:
        raise DataError(f"need n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    masks = _glyph_masks()
    glyph = rng.integers(0, NUM_GLYPHS, size=n)
    color = rng.integers(0, NUM_COLORS, size=n)

    images = np.full((n, NUM_COLORS, GLYPH_SIZE, GLYPH_SIZE), 0.05)
    images += 0.5 * masks[glyph][:, None, :, :]
    images[np.arange(n), color] += 0.3 * masks[glyph]
    images += noise_scale * rng.standard_normal(images.shape)
    np.clip(images, 0.0, 1.0, out=images)

    x = images.reshape(n, -1)
    schema = toy_schema()
    targets = {f.name: x[:, i] for i, f in enumerate(schema.features)}
    return Dataset(
        schema=schema,
        x=x,
        s=color.astype(int),
        t=glyph.astype(int),
        targets=targets,
        split="all",
        orig_rows=np.arange(n),
    )


def split_dataset(ds: Dataset, train_fraction: float = 0.7, seed: int = 2020) -> tuple[Dataset, Dataset]:
    """Partition an already-encoded dataset into train/test row subsets.

    Intended for generated data without continuous features; CSV data should
    be split by :func:`load_tabular` so z-scoring uses train rows only.
    """
    n = len(ds)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(np.floor(train_fraction * n))

    def take(idx: np.ndarray, tag: str) -> Dataset:
        return Dataset(
            schema=ds.schema,
            x=ds.x[idx],
            s=ds.s[idx],
            t=None if ds.t is None else ds.t[idx],
            targets={k: v[idx] for k, v in ds.targets.items()},
            split=tag,
            norm_stats=dict(ds.norm_stats),
            orig_rows=idx.copy(),
        )

    return take(perm[:n_train], "train"), take(perm[n_train:], "test")


def write_split_manifest(train: Dataset, test: Dataset, path: str | Path) -> None:
    """Record the row indices of each split as JSON."""
    payload = {
        "train": train.orig_rows.tolist() if train.orig_rows is not None else [],
        "test": test.orig_rows.tolist() if test.orig_rows is not None else [],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def export_representations(model, dataset: Dataset, noise, path: str | Path, sampled: bool = False) -> Path:
    """Write one representation row per sample as CSV: y columns, then s, t.

    Mean encodings by default (deterministic); ``sampled=True`` draws one
    reparametrized sample per row from ``noise`` instead.
    """
    reps = model.representations(dataset, noise=noise, sampled=sampled)
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            d = reps.shape[1]
            cols = [f"y{i}" for i in range(d)] + ["s"] + (["t"] if dataset.t is not None else [])
            fh.write(",".join(cols) + "\n")
            for i in range(reps.shape[0]):
                cells = [repr(float(v)) for v in reps[i]]
                cells.append(str(int(dataset.s[i])))
                if dataset.t is not None:
                    cells.append(str(int(dataset.t[i])))
                fh.write(",".join(cells) + "\n")
    except OSError as e:
        raise DataError(f"cannot write representations to {path}: {e}") from e
    return path


def load_representations(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Read a representation CSV back as (reps, s, t-or-None)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such representations file: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_t = header[-1] == "t"
        y_cols = len(header) - 1 - (1 if has_t else 0)
        ys, ss, ts = [], [], []
        for row in reader:
            ys.append([float(v) for v in row[:y_cols]])
            ss.append(int(row[y_cols]))
            if has_t:
                ts.append(int(row[y_cols + 1]))
    return np.asarray(ys), np.asarray(ss, dtype=int), (np.asarray(ts, dtype=int) if has_t else None)
