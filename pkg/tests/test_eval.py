import itertools

import numpy as np
import pytest

from conceptseg import evaluate as ev
from conceptseg.core import IGNORE_LABEL


def brute_force_hungarian(cm):
    """Best one-to-one objective by exhaustive permutation (oracle)."""
    cm = np.asarray(cm)
    n_pred, n_gt = cm.shape
    best = -1
    for perm in itertools.permutations(range(n_gt), min(n_pred, n_gt)):
        if n_pred <= n_gt:
            score = sum(cm[p, g] for p, g in enumerate(perm))
        else:
            score = 0
        best = max(best, score)
    if n_pred > n_gt:
        for rows in itertools.permutations(range(n_pred), n_gt):
            for perm in itertools.permutations(range(n_gt)):
                score = sum(cm[r, g] for r, g in zip(rows, perm))
                best = max(best, score)
    return best


class TestConfusion:
    def test_counts(self):
        pred = np.array([[0, 0, 1], [1, 1, 0]])
        gt = np.array([[0, 1, 1], [1, 1, 0]])
        cm = ev.confusion(pred, gt, 2, 2)
        # pairs: (0,0) (0,1) (1,1) / (1,1) (1,1) (0,0)
        assert cm.tolist() == [[2, 1], [0, 3]]

    def test_ignore_pixels_excluded(self):
        pred = np.array([[0, 1]])
        gt = np.array([[0, IGNORE_LABEL]])
        cm = ev.confusion(pred, gt, 2, 1)
        assert cm.tolist() == [[1], [0]]
        assert cm.sum() == 1

    def test_all_ignore_gives_zero_matrix(self):
        gt = np.full((2, 2), IGNORE_LABEL)
        cm = ev.confusion(np.zeros((2, 2), int), gt, 1, 1)
        assert cm.sum() == 0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match=">="):
            ev.confusion(np.array([[3]]), np.array([[0]]), 2, 1)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="differ"):
            ev.confusion(np.zeros((2, 2), int), np.zeros((2, 3), int), 1, 1)


class TestMajorityMatch:
    def test_plurality(self):
        cm = np.array([[5, 1], [2, 9]])
        m = ev.majority_match(cm)
        assert m.mapping.tolist() == [0, 1]
        assert m.empty_groups == []

    def test_tie_breaks_low(self):
        cm = np.array([[3, 3, 1]])
        assert ev.majority_match(cm).mapping.tolist() == [0]

    def test_empty_group_flagged(self):
        cm = np.array([[0, 0], [1, 4]])
        m = ev.majority_match(cm)
        assert m.mapping.tolist() == [0, 1]
        assert m.empty_groups == [0]

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            ev.majority_match(np.zeros((2, 2), int))


class TestHungarianMatch:
    def test_known_3x3(self):
        cm = np.array([[4, 1, 0], [2, 0, 3], [0, 3, 1]])
        m = ev.hungarian_match(cm)
        assert m.mapping.tolist() == [0, 2, 1]
        assert sum(cm[p, g] for p, g in enumerate(m.mapping)) == 10

    def test_more_groups_than_classes(self):
        cm = np.array([[5, 0], [4, 0], [0, 3]])
        m = ev.hungarian_match(cm)
        assert m.mapping.tolist() == [0, -1, 1]

    def test_more_classes_than_groups(self):
        cm = np.array([[0, 9, 1]])
        m = ev.hungarian_match(cm)
        assert m.mapping.tolist() == [1]

    def test_injective(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            cm = rng.integers(0, 20, size=(5, 4))
            m = ev.hungarian_match(cm)
            real = m.mapping[m.mapping >= 0]
            assert len(np.unique(real)) == len(real)

    def test_matches_brute_force_objective(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            shape = rng.integers(1, 6, size=2)
            cm = rng.integers(0, 30, size=tuple(shape))
            m = ev.hungarian_match(cm)
            got = sum(int(cm[p, g]) for p, g in enumerate(m.mapping)
                      if g >= 0)
            assert got == brute_force_hungarian(cm)

    def test_lexicographic_among_optima(self):
        # both diagonals score 2; the smaller mapping vector wins
        cm = np.array([[1, 1], [1, 1]])
        assert ev.hungarian_match(cm).mapping.tolist() == [0, 1]


class TestMetrics:
    def test_golden_case(self):
        cm = np.array([[50, 10], [20, 20]])
        report = ev.metrics(cm, ev.hungarian_match(cm))
        assert report.miou == pytest.approx(0.5125, abs=1e-9)
        assert report.wiou == pytest.approx(0.535, abs=1e-9)
        assert report.pacc == pytest.approx(0.7, abs=1e-9)

    def test_perfect_prediction(self):
        cm = np.diag([10, 20, 30])
        for match in (ev.majority_match(cm), ev.hungarian_match(cm)):
            report = ev.metrics(cm, match)
            assert report.miou == 1.0
            assert report.wiou == 1.0
            assert report.pacc == 1.0

    def test_group_permutation_invariance(self):
        rng = np.random.default_rng(2)
        cm = rng.integers(0, 50, size=(4, 3))
        base = ev.metrics(cm, ev.hungarian_match(cm))
        for perm in itertools.permutations(range(4)):
            pm = cm[list(perm)]
            report = ev.metrics(pm, ev.hungarian_match(pm))
            assert report.miou == pytest.approx(base.miou, abs=1e-12)
            assert report.wiou == pytest.approx(base.wiou, abs=1e-12)
            assert report.pacc == pytest.approx(base.pacc, abs=1e-12)

    def test_absent_class_excluded_from_miou(self):
        # class 2 never appears in gt or matched prediction
        cm = np.array([[10, 0, 0], [0, 10, 0]])
        report = ev.metrics(cm, ev.hungarian_match(cm))
        assert np.isnan(report.per_class_iou[2])
        assert report.miou == 1.0

    def test_majority_pacc_at_least_hungarian(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            cm = rng.integers(0, 30, size=(5, 3))
            if cm.sum() == 0:
                continue
            pa_major = ev.metrics(cm, ev.majority_match(cm)).pacc
            pa_hung = ev.metrics(cm, ev.hungarian_match(cm)).pacc
            assert pa_major >= pa_hung - 1e-12

    def test_zero_pixels_rejected(self):
        match = ev.Matching("majority", np.zeros(2, dtype=np.int64))
        with pytest.raises(ValueError, match="zero"):
            ev.metrics(np.zeros((2, 2), int), match)

    def test_report_serialization(self):
        cm = np.array([[50, 10], [20, 20]])
        report = ev.metrics(cm, ev.hungarian_match(cm))
        csv = report.to_csv()
        assert "mIoU,0.512500" in csv
        assert "pAcc,0.700000" in csv
        text = report.to_text()
        assert "pAcc 0.7000" in text


class TestMajorityDiagnostic:
    def test_flags_violation(self):
        # the optimal one-to-one match sends group 0 to class 1 even
        # though class 0 holds its plurality
        cm = np.array([[6, 6], [10, 0]])
        match = ev.hungarian_match(cm)
        report = ev.majority_diagnostic(cm, match)
        assert len(report) == 1
        v = report[0]
        assert (v.group, v.assigned_class, v.majority_class) == (0, 1, 0)
        assert v.assigned_fraction == pytest.approx(0.5)

    def test_no_violation_when_plurality_holds(self):
        cm = np.array([[9, 1], [2, 8]])
        assert ev.majority_diagnostic(cm, ev.hungarian_match(cm)) == []

    def test_unmatched_groups_skipped(self):
        cm = np.array([[5, 0], [4, 0], [0, 3]])
        match = ev.hungarian_match(cm)
        groups = {v.group for v in ev.majority_diagnostic(cm, match)}
        assert 1 not in groups
