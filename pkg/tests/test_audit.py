"""Fairness metric fixtures, invariances, and auditor classifier tests."""

import numpy as np
import pytest

from privfair.audit import (
    AuditSet,
    accuracy,
    audit_row,
    discrimination,
    equalized_odds_gap,
    error_gap,
    fit,
)
from privfair.errors import ConfigError, ShapeError, UndefinedMetricError
from privfair.exactinfo import DiscreteJoint, mutual_info


class TestAccuracy:
    def test_perfect(self):
        assert accuracy([1, 0, 1], [1, 0, 1]) == 1.0

    def test_inverted(self):
        assert accuracy([0, 1, 0], [1, 0, 1]) == 0.0

    def test_two_thirds(self):
        assert accuracy([1, 0, 1], [1, 1, 1]) == pytest.approx(2.0 / 3.0)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            accuracy([1, 0], [1, 0, 1])


class TestDiscrimination:
    def test_constant_predictions(self):
        assert discrimination([1, 1, 1, 1], [0, 0, 1, 1]) == 0.0

    def test_hand_case(self):
        assert discrimination([1, 0, 1, 1], [0, 0, 1, 1]) == pytest.approx(0.5)

    def test_predicting_s_is_maximal(self):
        s = np.array([0, 0, 1, 1, 1])
        assert discrimination(s, s) == 1.0

    def test_empty_group(self):
        with pytest.raises(UndefinedMetricError, match="S=1"):
            discrimination([1, 0], [0, 0])


class TestErrorGap:
    def test_perfect_predictor(self):
        assert error_gap([1, 0, 1], [0, 1, 0], [1, 0, 1]) == 0.0

    def test_hand_case(self):
        assert error_gap([1, 1], [0, 1], [0, 1]) == 1.0

    def test_group_symmetric_errors(self):
        pred = [1, 0, 1, 0]
        truth = [0, 0, 1, 1]  # one error in each group
        s = [0, 0, 1, 1]
        assert error_gap(pred, s, truth) == 0.0


class TestEqualizedOddsGap:
    def test_perfect_predictor(self):
        t = [0, 1, 0, 1, 0, 1, 0, 1]
        s = [0, 0, 1, 1, 0, 0, 1, 1]
        assert equalized_odds_gap(t, s, t) == 0.0

    def test_constant_predictor(self):
        t = [0, 1, 0, 1, 0, 1, 0, 1]
        s = [0, 0, 1, 1, 0, 0, 1, 1]
        assert equalized_odds_gap([1] * 8, s, t) == 0.0

    def test_hand_eight_row_case(self):
        # cell rates: (S=0,T=1)=1, (S=1,T=1)=0.5, both T=0 cells 0 -> gap 0.5
        s =    [0, 0, 1, 1, 0, 0, 1, 1]
        t =    [1, 1, 1, 1, 0, 0, 0, 0]
        pred = [1, 1, 1, 0, 0, 0, 0, 0]
        assert equalized_odds_gap(pred, s, t) == pytest.approx(0.5)

    def test_empty_cell_named(self):
        with pytest.raises(UndefinedMetricError, match=r"S=1, T=0"):
            equalized_odds_gap([1, 1, 1], [0, 0, 1], [0, 1, 1])


class TestMetricInvariances:
    def test_gaps_bounded_and_swap_invariant(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(8, 40))
            pred = rng.integers(0, 2, n)
            s = rng.integers(0, 2, n)
            t = rng.integers(0, 2, n)
            if len(np.unique(s)) < 2:
                continue
            d = discrimination(pred, s)
            e = error_gap(pred, s, t)
            assert 0.0 <= d <= 1.0
            assert 0.0 <= e <= 1.0
            assert discrimination(pred, 1 - s) == pytest.approx(d, abs=1e-12)
            assert error_gap(pred, 1 - s, t) == pytest.approx(e, abs=1e-12)
            cells_ok = all(((s == g) & (t == tau)).any() for g in (0, 1) for tau in (0, 1))
            if cells_ok:
                eo = equalized_odds_gap(pred, s, t)
                assert 0.0 <= eo <= 1.0
                assert equalized_odds_gap(pred, 1 - s, t) == pytest.approx(eo, abs=1e-12)

    def test_order_invariance(self):
        rng = np.random.default_rng(1)
        n = 60
        pred = rng.integers(0, 2, n)
        s = rng.integers(0, 2, n)
        t = rng.integers(0, 2, n)
        perm = rng.permutation(n)
        assert discrimination(pred, s) == discrimination(pred[perm], s[perm])
        assert error_gap(pred, s, t) == error_gap(pred[perm], s[perm], t[perm])
        assert equalized_odds_gap(pred, s, t) == equalized_odds_gap(pred[perm], s[perm], t[perm])

    def test_within_cell_independence_gives_zero_eo_gap(self):
        # prediction depends only on t, never on s -> per-cell rates equal
        rng = np.random.default_rng(2)
        t = rng.integers(0, 2, 200)
        s = rng.integers(0, 2, 200)
        pred = t.copy()
        assert equalized_odds_gap(pred, s, t) == 0.0

    def test_zero_leakage_implies_zero_discrimination(self):
        # draw (s, y) from a joint with I(S;Y) = 0 certified by the oracle,
        # apply a deterministic predictor of y alone: discrimination is
        # sampling noise, bounded by 2/sqrt(n)
        p_s = np.array([0.4, 0.6])
        p_y = np.array([0.25, 0.25, 0.5])
        joint = DiscreteJoint(("s", "y"), np.outer(p_s, p_y))
        assert mutual_info(joint, "s", "y") == pytest.approx(0.0, abs=1e-15)
        rng = np.random.default_rng(3)
        n = 40_000
        flat = rng.choice(6, size=n, p=joint.table.ravel())
        s, y = flat // 3, flat % 3
        pred = (y >= 1).astype(int)  # deterministic function of y
        assert discrimination(pred, s) <= 2.0 / np.sqrt(n)


class TestPredictors:
    def test_logistic_regression_separates_blobs(self):
        rng = np.random.default_rng(4)
        n = 200
        x = np.vstack([rng.normal(-2, 0.4, (n, 2)), rng.normal(2, 0.4, (n, 2))])
        y = np.repeat([0, 1], n)
        clf = fit("logistic-regression", x, y, seed=0)
        assert accuracy(clf.predict(x), y) >= 0.99

    def test_forest_solves_xor_where_linear_fails(self):
        rng = np.random.default_rng(5)
        n = 200
        x = rng.uniform(-1, 1, (n, 2))
        y = ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(int)
        rf = fit("random-forest", x, y, seed=0)
        lr = fit("logistic-regression", x, y, seed=0)
        assert accuracy(rf.predict(x), y) >= 0.9
        assert abs(accuracy(lr.predict(x), y) - 0.5) <= 0.1

    def test_majority_prior_matches_class_fraction(self):
        rng = np.random.default_rng(6)
        n = 3000
        y = (rng.random(n) < 0.67).astype(int)
        clf = fit("majority-prior", rng.normal(size=(n, 3)), y, seed=0)
        assert accuracy(clf.predict(np.zeros((n, 3))), y) == pytest.approx(
            np.mean(y == 1), abs=1e-12
        )

    def test_single_class_rejected_for_trainable_kinds(self):
        x = np.zeros((10, 2))
        y = np.zeros(10, dtype=int)
        for kind in ("logistic-regression", "random-forest"):
            with pytest.raises(ConfigError):
                fit(kind, x, y, seed=0)
        fit("majority-prior", x, y, seed=0)  # prior is fine with one class

    def test_forest_deterministic_given_seed(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(120, 3))
        y = (x[:, 0] + x[:, 1] > 0).astype(int)
        a = fit("random-forest", x, y, seed=11).predict(x)
        b = fit("random-forest", x, y, seed=11).predict(x)
        np.testing.assert_array_equal(a, b)


class TestAuditRow:
    def _splits(self, informative=True, seed=8, n=400):
        rng = np.random.default_rng(seed)
        s = rng.integers(0, 2, n)
        t = (rng.random(n) < 0.6).astype(int)
        if informative:
            x = np.column_stack([t + 0.3 * rng.normal(size=n), rng.normal(size=n)])
        else:
            x = rng.normal(size=(n, 2))
        half = n // 2
        return (
            AuditSet(x[:half], s[:half], t[:half]),
            AuditSet(x[half:], s[half:], t[half:]),
        )

    def test_row_contains_all_kinds_and_metrics(self):
        train, test = self._splits()
        row = audit_row(train, test, seed=0)
        assert set(row) == {"logistic-regression", "random-forest", "majority-prior"}
        for metrics in row.values():
            assert 0.0 <= metrics.accuracy_t <= 1.0
            assert 0.0 <= metrics.accuracy_s <= 1.0
            assert 0.0 <= metrics.discrimination <= 1.0

    def test_uninformative_features_sit_at_the_prior(self):
        train, test = self._splits(informative=False, seed=9, n=4000)
        row = audit_row(train, test, seed=0)
        prior = row["majority-prior"].accuracy_t
        assert abs(row["logistic-regression"].accuracy_t - prior) <= 0.03

    def test_privacy_only_audit(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(200, 2))
        s = (x[:, 0] > 0).astype(int)
        row = audit_row(AuditSet(x[:100], s[:100]), AuditSet(x[100:], s[100:]), seed=0)
        assert row["logistic-regression"].accuracy_t is None
        assert row["logistic-regression"].accuracy_s >= 0.9

    def test_non_binary_labels_rejected(self):
        with pytest.raises(ShapeError):
            AuditSet(np.zeros((4, 2)), np.array([0, 1, 2, 1]))
