from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectramill.datasets import build_dataset
from spectramill.evaluation import (
    PLANS,
    AnnotatedPeak,
    Study,
    compare_to_annotation,
    match_count,
    normalized_error,
    peak_accuracy,
    read_annotation_csv,
    study_data,
    sweep,
    toy_gen_config,
    AblationConfig,
)
from spectramill.nn.model import build_model
from spectramill.nn.spec import preset
from spectramill.synth import Task
from spectramill.train import exam_mse


class TestAccuracy:
    def test_examples(self):
        assert peak_accuracy([5, 9], [5, 9]) == 1.0
        assert peak_accuracy([], [5, 9]) == 0.0
        assert peak_accuracy([11, 35], [10, 20]) == 0.5

    def test_one_to_one(self):
        # one prediction cannot satisfy two truths
        assert match_count([10], [9, 11]) == 1
        # greedy: the exact pair 10-10 is taken first, leaving 9 and 11 unmatched
        assert match_count([9, 10], [10, 11]) == 1
        assert match_count([9, 11], [10, 12]) == 2

    def test_empty_truth(self):
        with pytest.raises(ValueError):
            peak_accuracy([1], [])

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.integers(0, 60), max_size=10, unique=True),
        st.lists(st.integers(0, 60), min_size=1, max_size=10, unique=True),
        st.randoms(use_true_random=False),
    )
    def test_permutation_invariant_and_monotone(self, pred, truth, rnd):
        a = peak_accuracy(pred, truth)
        p2, t2 = list(pred), list(truth)
        rnd.shuffle(p2)
        rnd.shuffle(t2)
        assert peak_accuracy(p2, t2) == a
        assert 0.0 <= a <= 1.0
        accs = [peak_accuracy(pred, truth, tol) for tol in range(5)]
        assert accs == sorted(accs)


def tiny_locator_data(n=20, length=64):
    return build_dataset(toy_gen_config(Task.PEAK_LOCATOR, length, 3), n)


class TestExamMse:
    def test_loop_oracle(self):
        ds = tiny_locator_data()
        model = build_model(preset(Task.PEAK_LOCATOR).capped(4), seed=9)
        pred = model.predict(ds.inputs)
        per_sample = []
        for i in range(len(ds)):
            acc = 0.0
            for c in range(pred.shape[1]):
                for j in range(pred.shape[2]):
                    acc += (pred[i, c, j] - ds.targets[i, c, j]) ** 2
            per_sample.append(acc / (pred.shape[1] * pred.shape[2]))
        assert abs(exam_mse(model, ds) - sum(per_sample) / len(per_sample)) < 1e-10


class TestSweep:
    def test_oracle_scores(self):
        ds = tiny_locator_data(60)
        assert np.all(sweep(ds.targets[:, 0], ds, windows=(1,)).cells == 1.0)
        # wider windows only lose peaks that sit closer than the radius
        spaced = [i for i in range(len(ds)) if np.all(np.diff(ds.peak_indices(i)) > 17)]
        sub = ds.subset(spaced)
        assert len(sub) > 5
        assert np.all(sweep(sub.targets[:, 0], sub).cells == 1.0)

    def test_monotone_in_threshold(self):
        ds = tiny_locator_data()
        scores = np.random.default_rng(0).random(ds.targets[:, 0].shape)
        grid = sweep(scores, ds)
        for j in range(len(grid.windows)):
            col = grid.cells[:, j]
            assert col[0] >= col[1] >= col[2]
        assert np.all((grid.cells >= 0) & (grid.cells <= 1))

    def test_csv(self, tmp_path):
        ds = tiny_locator_data()
        grid = sweep(ds.targets[:, 0], ds, (0.5,), (1,))
        grid.write_csv(tmp_path / "g.csv")
        assert (tmp_path / "g.csv").read_text().splitlines()[1] == "0.5,1,1.0"

    def test_needs_locator(self):
        with pytest.raises(ValueError):
            sweep(build_model(preset(Task.DENOISER).capped(2)), tiny_locator_data())


class TestAblationPairing:
    @pytest.mark.parametrize("study", list(Study))
    def test_data_is_seeded_and_disjoint(self, study):
        cfg = AblationConfig(n_train=6, n_exam=4)
        a_train, a_exam = study_data(study, cfg, 1)
        b_train, b_exam = study_data(study, cfg, 1)
        assert a_train.digest() == b_train.digest() and a_exam.digest() == b_exam.digest()
        assert a_train.digest() != a_exam.digest()
        assert a_train.task is PLANS[study].task

    def test_channel_study_is_clean(self):
        train, _ = study_data(Study.INPUT_CHANNELS, AblationConfig(n_train=8, n_exam=2), 0)
        assert np.all(train.noise_std == 0)


class TestAnnotation:
    def test_reference_pair(self):
        cmp = compare_to_annotation([(1000.0, 137.6, 10.0)], [AnnotatedPeak(1000.5, 156.0, 10.0)])
        assert round(cmp.matched[0].intensity_error, 3) == 0.118
        assert cmp.matched[0].fwhm_error == 0.0

    def test_identity(self):
        ann = [AnnotatedPeak(500.0, 3.0, 8.0), AnnotatedPeak(900.0, 1.0, 4.0)]
        cmp = compare_to_annotation([(a.position, a.intensity, a.fwhm) for a in ann], ann)
        assert all(m.intensity_error == 0 and m.fwhm_error == 0 for m in cmp.matched)

    def test_zero_expert_is_undefined(self):
        assert normalized_error(3.0, 0.0) is None
        cmp = compare_to_annotation([(10.0, 1.0, 2.0)], [AnnotatedPeak(10.0, 0.0, 2.0)])
        assert cmp.matched[0].intensity_error is None
        assert "intensity_undefined" in cmp.matched[0].flags

    def test_unmatched_lists(self):
        cmp = compare_to_annotation([(10.0, 1.0, 2.0), (50.0, 1.0, 2.0)], [AnnotatedPeak(11.0, 1.0, 2.0)])
        assert cmp.unmatched_model == [50.0] and cmp.unmatched_expert == []
        cmp = compare_to_annotation([], [AnnotatedPeak(11.0, 1.0, 2.0)])
        assert len(cmp.unmatched_expert) == 1

    def test_empty_annotation(self):
        with pytest.raises(ValueError):
            compare_to_annotation([(1.0, 1.0, 1.0)], [])

    def test_csv_round_trip(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("position,intensity,fwhm\n1000.5,156.0,10\n")
        assert read_annotation_csv(p) == [AnnotatedPeak(1000.5, 156.0, 10.0)]
        cmp = compare_to_annotation([(1000.0, 137.6, 10.0)], p)
        cmp.write_csv(tmp_path / "c.csv")
        assert "0.1179" in (tmp_path / "c.csv").read_text()
