"""Ingestion, preprocessing, split, synthetic-toy, and export tests."""

import csv

import numpy as np
import pytest

from privfair.data import (
    Dataset,
    Feature,
    Schema,
    adult_schema,
    compas_schema,
    export_representations,
    load_representations,
    load_tabular,
    schema_from_dict,
    split_dataset,
    synth_colored,
    toy_schema,
    write_split_manifest,
)
from privfair.distributions import NoiseSource
from privfair.errors import DataError, SchemaError
from privfair.objectives import ModelConfig, build_model

from oracles import plugin_mutual_info


def small_schema() -> Schema:
    return schema_from_dict(
        {
            "features": [
                {"name": "kind", "kind": "categorical", "levels": ["a", "b", "c", "Unknown"]},
                {"name": "amount", "kind": "continuous"},
            ],
            "sensitive": {"name": "grp", "positive_levels": ["B"]},
            "task": {"name": "label", "positive_levels": ["1"]},
        }
    )


def write_csv(path, rows, header=("kind", "amount", "grp", "label", "extra")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def make_rows(n, seed=0, missing=0):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        kind = ("a", "b", "c")[rng.integers(0, 3)]
        rows.append([kind, f"{rng.normal(10, 3):.4f}", ("A", "B")[rng.integers(0, 2)],
                     str(rng.integers(0, 2)), "x"])
    for i in range(missing):
        rows[i][1] = "?"
    return rows


class TestSchemas:
    def test_fixture_widths(self):
        assert adult_schema().encoded_width == 121
        assert compas_schema().encoded_width == 19
        assert toy_schema().encoded_width == 192

    def test_three_class_plus_continuous_encodes_to_four(self):
        schema = Schema(
            features=(Feature("c", "categorical", ("x", "y", "z")), Feature("v", "continuous")),
            sensitive_name="s",
        )
        assert schema.encoded_width == 4

    def test_duplicate_names_rejected(self):
        with pytest.raises(SchemaError):
            Schema(features=(Feature("a", "binary"), Feature("a", "continuous")),
                   sensitive_name="s")

    def test_single_level_categorical_rejected(self):
        with pytest.raises(SchemaError):
            Feature("c", "categorical", ("only",))


class TestLoadTabular:
    def test_seventy_thirty_split_counts(self, tmp_path):
        # the 6172-row case splits exactly into 4320 / 1852
        path = tmp_path / "recid.csv"
        write_csv(path, make_rows(6172, seed=1))
        train, test = load_tabular(path, small_schema(), train_fraction=0.7, seed=2020)
        assert len(train) == 4320
        assert len(test) == 1852

    def test_train_continuous_columns_are_standardized(self, tmp_path):
        path = tmp_path / "d.csv"
        write_csv(path, make_rows(500, seed=2))
        train, _ = load_tabular(path, small_schema(), seed=0)
        col = train.x[:, 4]  # categorical block is 4 wide
        assert abs(col.mean()) < 1e-8
        assert abs(col.var() - 1.0) < 1e-8

    def test_no_test_set_leakage_into_statistics(self, tmp_path):
        path = tmp_path / "d.csv"
        write_csv(path, make_rows(400, seed=3))
        train, test = load_tabular(path, small_schema(), seed=0)
        mean, std = train.norm_stats["amount"]
        raw_train = train.targets["amount"] * std + mean
        np.testing.assert_allclose(raw_train.mean(), mean, atol=1e-8)
        # test column de-normalizes with the *train* stats, and is itself
        # not zero-mean under them
        assert abs(test.targets["amount"].mean()) > 1e-8 or len(test) == 0

    def test_one_hot_round_trip(self, tmp_path):
        path = tmp_path / "d.csv"
        write_csv(path, make_rows(300, seed=4))
        train, _ = load_tabular(path, small_schema(), seed=0)
        block = train.x[:, :4]
        np.testing.assert_allclose(block.sum(axis=1), 1.0)
        np.testing.assert_array_equal(block.argmax(axis=1), train.targets["kind"])

    def test_split_deterministic(self, tmp_path):
        path = tmp_path / "d.csv"
        write_csv(path, make_rows(200, seed=5))
        a_train, a_test = load_tabular(path, small_schema(), seed=11)
        b_train, b_test = load_tabular(path, small_schema(), seed=11)
        np.testing.assert_array_equal(a_train.orig_rows, b_train.orig_rows)
        np.testing.assert_array_equal(a_test.orig_rows, b_test.orig_rows)

    def test_missing_rows_dropped_with_count(self, tmp_path):
        path = tmp_path / "d.csv"
        write_csv(path, make_rows(100, seed=6, missing=7))
        train, test = load_tabular(path, small_schema(), seed=0)
        assert len(train) + len(test) == 93
        assert train.dropped_rows == 7

    def test_unknown_level_maps_to_bucket(self, tmp_path):
        path = tmp_path / "d.csv"
        rows = make_rows(50, seed=7)
        rows[3][0] = "never-seen"
        write_csv(path, rows)
        train, test = load_tabular(path, small_schema(), seed=0)
        assert train.unknown_level_count + test.unknown_level_count == 1

    def test_missing_column_reported(self, tmp_path):
        path = tmp_path / "d.csv"
        write_csv(path, [["a", "1.0", "A"]], header=("kind", "amount", "grp"))
        with pytest.raises(DataError, match="label"):
            load_tabular(path, small_schema(), seed=0)

    def test_unparseable_cell_reports_row(self, tmp_path):
        path = tmp_path / "d.csv"
        rows = make_rows(20, seed=8)
        rows[4][1] = "twelve"
        write_csv(path, rows)
        with pytest.raises(DataError, match="twelve"):
            load_tabular(path, small_schema(), seed=0)

    def test_nonexistent_file(self):
        with pytest.raises(DataError, match="no such"):
            load_tabular("/nope/missing.csv", small_schema())


class TestSynthColored:
    def test_color_marginal_is_uniform(self):
        ds = synth_colored(100_000, seed=2020)
        fractions = np.bincount(ds.s, minlength=3) / len(ds)
        np.testing.assert_allclose(fractions, 1.0 / 3.0, atol=0.01)

    def test_color_independent_of_glyph(self):
        ds = synth_colored(100_000, seed=2020)
        assert plugin_mutual_info(ds.s, ds.t) < 0.01  # nats

    def test_class_conditional_means_differ(self):
        ds = synth_colored(5000, seed=0)
        means = np.stack([ds.x[ds.t == c].mean(axis=0) for c in range(10)])
        for a in range(10):
            for b in range(a + 1, 10):
                assert np.linalg.norm(means[a] - means[b]) > 0.1

    def test_pixels_in_unit_interval(self):
        ds = synth_colored(2000, seed=1)
        assert ds.x.min() >= 0.0
        assert ds.x.max() <= 1.0

    def test_deterministic(self):
        a = synth_colored(500, seed=3)
        b = synth_colored(500, seed=3)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.t, b.t)

    def test_rejects_empty(self):
        with pytest.raises(DataError):
            synth_colored(0)


class TestSplitAndManifest:
    def test_split_partitions_rows(self):
        ds = synth_colored(1000, seed=4)
        train, test = split_dataset(ds, 0.7, seed=5)
        assert len(train) == 700
        assert len(test) == 300
        together = np.sort(np.concatenate([train.orig_rows, test.orig_rows]))
        np.testing.assert_array_equal(together, np.arange(1000))

    def test_manifest_round_trip(self, tmp_path):
        import json

        ds = synth_colored(100, seed=6)
        train, test = split_dataset(ds, 0.8, seed=7)
        path = tmp_path / "split.json"
        write_split_manifest(train, test, path)
        payload = json.loads(path.read_text())
        assert sorted(payload["train"] + payload["test"]) == list(range(100))


class TestExportRepresentations:
    def _model_and_data(self):
        ds = synth_colored(200, seed=8)
        model = build_model(
            ModelConfig.fair(2.0, representation_dim=2, hidden_width=16), ds.schema, seed=9
        )
        return model, ds

    def test_column_layout_and_row_count(self, tmp_path):
        model, ds = self._model_and_data()
        path = export_representations(model, ds, NoiseSource(0), tmp_path / "reps.csv")
        reps, s, t = load_representations(path)
        assert reps.shape == (200, 2)
        assert s.shape == (200,)
        assert t.shape == (200,)
        np.testing.assert_array_equal(s, ds.s)
        np.testing.assert_array_equal(t, ds.t)

    def test_re_export_is_byte_identical(self, tmp_path):
        model, ds = self._model_and_data()
        p1 = export_representations(model, ds, NoiseSource(0), tmp_path / "a.csv")
        p2 = export_representations(model, ds, NoiseSource(0), tmp_path / "b.csv")
        assert p1.read_bytes() == p2.read_bytes()

    def test_sampled_export_differs_from_mean(self, tmp_path):
        model, ds = self._model_and_data()
        mean_path = export_representations(model, ds, NoiseSource(0), tmp_path / "m.csv")
        samp_path = export_representations(
            model, ds, NoiseSource(0), tmp_path / "s.csv", sampled=True
        )
        assert mean_path.read_bytes() != samp_path.read_bytes()
