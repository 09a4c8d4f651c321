from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectramill.core import VoigtPeak, minmax, peak_labels, sum_peaks
from spectramill.synth import (
    BEND_INTERVALS,
    DENOISER_SLOPES,
    DENOISER_STDS,
    OTHER_STDS,
    PEAK_SLOPES,
    GenConfig,
    Task,
    apply_baseline_shift,
    draw_noise,
    gen_baseline,
    gen_peaks,
    gen_sample,
    is_raman_like,
    peak_count_for_index,
    peak_shadow,
    sample_rng,
    spectral_tweak,
)


class TestConfig:
    @pytest.mark.parametrize("task", list(Task))
    def test_task_defaults(self, task):
        cfg = GenConfig.for_task(task)
        big = task in (Task.DENOISER, Task.BASELINE_REMOVER)
        assert (cfg.beta2 is not None) == big
        assert cfg.beta1.mag_range == (0.001, 0.004)
        if big:
            assert cfg.beta2.mag_range == (0.005, 0.025)
        assert cfg.slope_coeffs == (DENOISER_SLOPES if big else PEAK_SLOPES)
        assert cfg.gauss_stds == (DENOISER_STDS if task is Task.DENOISER else OTHER_STDS)
        assert cfg.shadow_enabled == (task is Task.PEAK_FITTER)
        assert cfg.length == 555 and cfg.n_peaks_range == (1, 11)

    def test_slope_and_std_lists(self):
        assert DENOISER_SLOPES == (0.1, 1, 3, 6, 9, 14, 20, 27, 35)
        assert PEAK_SLOPES == (0.2, 1, 3, 5, 7, 9)
        assert DENOISER_STDS == (0, 0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.15)
        assert OTHER_STDS == (0, 0.0001, 0.0005, 0.001)

    @pytest.mark.parametrize("task", list(Task))
    def test_dict_round_trip(self, task):
        cfg = GenConfig.for_task(task, seed=9)
        assert GenConfig.from_dict(cfg.to_dict()) == cfg

    def test_task_aliases(self):
        assert Task.parse("PeakLocator") is Task.PEAK_LOCATOR
        assert Task.parse("baseline_remover") is Task.BASELINE_REMOVER


class TestPeaks:
    cfg = GenConfig.for_task(Task.PEAK_LOCATOR)

    def test_single_peak(self):
        peaks = gen_peaks(np.random.default_rng(0), 1, 555, self.cfg)
        assert len(peaks) == 1

    def test_tight_cluster_gaps(self):
        cfg = replace(self.cfg, tight_prob=1.0)
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(10_000):
            c = sorted(p.center for p in gen_peaks(rng, 3, 555, cfg))
            worst = max(worst, float(np.diff(c).max()))
        assert worst <= 2.0

    def test_loose_cluster_gaps_and_bounds(self):
        cfg = replace(self.cfg, tight_prob=0.0)
        rng = np.random.default_rng(2)
        for _ in range(2000):
            peaks = gen_peaks(rng, 11, 555, cfg)
            c = np.sort([p.center for p in peaks])
            assert np.diff(c).max() <= 12.0
            assert c.min() >= 5 and c.max() <= 549
            assert len({p.index for p in peaks}) == 11
            for p in peaks:
                assert 0.05 <= p.amplitude <= 1.0 and 3 <= p.fwhm <= 60 and 0 <= p.eta <= 1

    def test_equal_representation(self):
        counts = np.bincount([peak_count_for_index(self.cfg, i) for i in range(11_000)], minlength=12)
        np.testing.assert_array_equal(counts[1:], np.full(11, 1000))

    def test_bad_count(self):
        with pytest.raises(ValueError):
            gen_peaks(np.random.default_rng(0), 12, 555, self.cfg)


class TestBaseline:
    def test_zero_slope_is_zero(self):
        b, _ = gen_baseline(np.random.default_rng(3), 555, 0.0)
        assert np.all(b == 0)

    def test_deterministic(self):
        a, _ = gen_baseline(np.random.default_rng(4), 555, 9.0)
        b, _ = gen_baseline(np.random.default_rng(4), 555, 9.0)
        assert a.tobytes() == b.tobytes()

    def test_plan_structure(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            b, plan = gen_baseline(rng, 555, 6.0)
            assert 1 <= len(plan.regions) <= 10
            assert sum(c.length for r in plan.regions for c in r.chunks) == 555
            assert sum(r.length for r in plan.regions) == 555
            for r in plan.regions:
                assert 0.01 <= r.slope_mult <= 1.99 and r.slope_sign in (-1, 1)
                for c in r.chunks[:-1]:
                    assert 3 <= c.length <= 18
                for c in r.chunks:
                    assert 0.01 <= c.slope_mult <= 1.99
                    if c.bend is not None:
                        assert any(lo < c.bend < hi for lo, hi in BEND_INTERVALS)

    def test_continuity_bound(self):
        """Steps never exceed the steepest possible chunk slope (with quadratic overshoot)."""
        rng = np.random.default_rng(6)
        from spectramill.synth import DRIFT_PER_SLOPE_UNIT

        for slope in (1.0, 35.0):
            per_index = slope * DRIFT_PER_SLOPE_UNIT / 554
            bound = per_index * 1.99 * 1.99 * 1.5
            for _ in range(200):
                b, _ = gen_baseline(rng, 555, slope)
                assert np.abs(np.diff(b)).max() <= bound + 1e-15
                assert abs(b[0]) <= bound + 1e-15

    def test_flat_rates(self):
        rng = np.random.default_rng(7)
        regions = chunks = flat_r = flat_c = inv = 0
        for _ in range(4000):
            _, plan = gen_baseline(rng, 555, 3.0)
            for r in plan.regions:
                regions += 1
                flat_r += r.flat
                for c in r.chunks:
                    chunks += 1
                    flat_c += c.flat
                    inv += c.inverted
        assert abs(flat_r / regions - 0.15) < 0.015
        assert abs(flat_c / chunks - 0.10) < 0.015
        assert abs(inv / chunks - 0.10) < 0.015


class TestShift:
    cfg = GenConfig.for_task(Task.BASELINE_REMOVER)

    def test_no_shift_is_identity(self):
        cfg = replace(self.cfg, shift_probs=(0.0, 0.0))
        b = np.random.default_rng(0).normal(size=555)
        out, windows = apply_baseline_shift(np.random.default_rng(1), b, cfg)
        assert windows == [] and out.tobytes() == b.tobytes()

    def test_single_shift_against_flat_twin(self):
        cfg = replace(self.cfg, shift_probs=(1.0, 0.0))
        rng = np.random.default_rng(8)
        for _ in range(500):
            flat = np.zeros(555)
            out, windows = apply_baseline_shift(rng, flat, cfg)
            (start, stop), = windows
            assert 2 <= stop - start <= 5
            diff = out - flat
            steps = np.diff(np.concatenate([[0.0], diff[start:stop]]))
            m = steps.sum()
            assert 0.05 - 1e-12 <= abs(m) <= 1.0 + 1e-12
            # constant offset after the window, past the possible bounce point
            np.testing.assert_allclose(diff[stop + 1 :], m, rtol=0, atol=1e-12)
            assert 0.65 - 1e-12 <= np.abs(steps).max() / abs(m) <= 0.90 + 1e-12
            assert np.all(diff[: start - 1] == 0)

    def test_bounce_is_relative(self):
        cfg = replace(self.cfg, shift_probs=(1.0, 0.0))
        rng = np.random.default_rng(9)
        base = np.full(555, 2.0)
        for _ in range(200):
            out, ((start, stop),) = apply_baseline_shift(rng, base, cfg)
            assert abs(out[start - 1] / 2.0 - 1.0) <= 0.1 + 1e-12

    def test_two_shift_windows(self):
        cfg = replace(self.cfg, shift_probs=(0.0, 1.0))
        _, windows = apply_baseline_shift(np.random.default_rng(10), np.zeros(555), cfg)
        assert len(windows) == 2


class TestNoise:
    def test_silent_draws(self):
        cfg = replace(GenConfig.for_task(Task.DENOISER), gauss_stds=(0.0,), beta1=None, beta2=None)
        noise, std = draw_noise(np.random.default_rng(0), 555, cfg)
        assert std == 0.0 and np.all(noise == 0)

    def test_gaussian_std(self):
        cfg = replace(GenConfig.for_task(Task.DENOISER), gauss_stds=(0.05,), beta1=None, beta2=None)
        rng = np.random.default_rng(11)
        noise = np.concatenate([draw_noise(rng, 555, cfg)[0] for _ in range(20)])
        assert abs(noise.std() / 0.05 - 1) < 0.03

    def test_std_relative_to_peak_max(self):
        cfg = replace(GenConfig.for_task(Task.DENOISER), gauss_stds=(0.05,), beta1=None, beta2=None)
        rng = np.random.default_rng(12)
        noise = np.concatenate([draw_noise(rng, 555, cfg, peak_max=0.5)[0] for _ in range(20)])
        assert abs(noise.std() / 0.025 - 1) < 0.03

    def test_beta1_support(self):
        cfg = replace(GenConfig.for_task(Task.PEAK_LOCATOR), gauss_stds=(0.0,))
        rng = np.random.default_rng(13)
        mags = np.abs(np.concatenate([draw_noise(rng, 555, cfg)[0] for _ in range(200)]))
        nz = mags[mags > 0]
        assert nz.size > 0
        assert nz.min() >= 0.001 and nz.max() <= 0.004

    def test_beta_dents_take_both_signs(self):
        cfg = replace(GenConfig.for_task(Task.PEAK_LOCATOR), gauss_stds=(0.0,))
        rng = np.random.default_rng(14)
        signs = set()
        for _ in range(50):
            n = draw_noise(rng, 555, cfg)[0]
            signs.update(np.sign(n[n != 0]).tolist())
        assert signs == {-1.0, 1.0}


class TestTweakAndShadow:
    def test_tweak_support_and_mask(self):
        rng = np.random.default_rng(15)
        peak = VoigtPeak(50.2, 1.0, 5.0)
        centers = []
        for _ in range(20_000):
            out = spectral_tweak(rng, np.ones(101), [peak])
            changed = np.flatnonzero(out != 1.0)
            if changed.size:
                assert np.abs(changed - 50).max() <= 3
            if out[50] != 1.0:
                centers.append(out[50])
        c = np.array(centers)
        assert c.size > 3000
        assert np.all((c >= 0.96) & (c <= 1.04))
        assert not np.any((c >= 0.999) & (c <= 1.001))

    def test_tweak_gate_rates(self):
        rng = np.random.default_rng(16)
        peaks = [VoigtPeak(20.0, 1, 4), VoigtPeak(60.0, 1, 4)]
        hits = [spectral_tweak(rng, np.ones(101), peaks)[[20, 60]] != 1.0 for _ in range(20_000)]
        h = np.array(hits)
        spectrum_rate = h.any(axis=1).mean()
        assert abs(spectrum_rate - 0.5 * (1 - 0.25)) < 0.015  # gate open and not both peaks skipped

    def test_shadow_offsets(self):
        rng = np.random.default_rng(17)
        lab = peak_labels([VoigtPeak(1.0, 1, 3), VoigtPeak(30.0, 1, 3), VoigtPeak(62.0, 1, 3)], 64)
        moved = 0
        for _ in range(100_000 // 10):
            out = peak_shadow(rng, lab)
            d = np.abs(out.shadowed_location - lab.shadowed_location)
            assert set(d.tolist()) <= {0, 1, 2, 3}
            assert out.shadowed_location.min() >= 0 and out.shadowed_location.max() <= 63
            moved += int((d > 0).sum())
            assert out.intensity.tobytes() == lab.intensity.tobytes()
            assert out.fwhm.tobytes() == lab.fwhm.tobytes()
        assert moved > 0


class TestSample:
    def test_bit_identical(self):
        cfg = GenConfig.for_task(Task.PEAK_FITTER, seed=1)
        a, b = gen_sample(cfg, 7), gen_sample(cfg, 7)
        for x, y in ((a.input.raw, b.input.raw), (a.baseline, b.baseline), (a.noise, b.noise),
                     (a.labels.shadowed_location, b.labels.shadowed_location)):
            assert x.tobytes() == y.tobytes()
        assert a.shift_positions == b.shift_positions and a.peaks == b.peaks

    def test_streams_independent_of_order(self):
        cfg = GenConfig.for_task(Task.DENOISER, seed=3)
        first = gen_sample(cfg, 5).input.raw
        gen_sample(cfg, 4)
        assert gen_sample(cfg, 5).input.raw.tobytes() == first.tobytes()
        assert gen_sample(cfg, 6).input.raw.tobytes() != first.tobytes()

    @pytest.mark.parametrize("index", range(10))
    def test_denoiser_reconstruction(self, index):
        rec = gen_sample(GenConfig.for_task(Task.DENOISER, seed=2), index)
        np.testing.assert_allclose(rec.targets()[0] + rec.noise, rec.input.raw, atol=1e-12)
        assert rec.input.raw.min() == 0 and abs(rec.input.raw.max() - 1) < 1e-12

    @pytest.mark.parametrize("task", list(Task))
    def test_targets_per_task(self, task):
        rec = gen_sample(GenConfig.for_task(task, seed=4), 3)
        t = rec.targets(60.0)
        if task is Task.PEAK_FITTER:
            assert t.shape == (2, 555) and rec.inputs().shape == (4, 555)
            np.testing.assert_array_equal(t[0] > 0, rec.labels.location > 0)
            np.testing.assert_array_equal(t[1] > 0, rec.labels.location > 0)
        else:
            assert t.shape == (1, 555) and rec.inputs().shape == (3, 555)
        if task is Task.BASELINE_REMOVER:
            np.testing.assert_array_equal(t[0], rec.baseline)

    def test_locator_label_count(self):
        cfg = GenConfig.for_task(Task.PEAK_LOCATOR, seed=5)
        for i in range(22):
            rec = gen_sample(cfg, i)
            assert rec.labels.location.sum() == len(rec.peaks) == peak_count_for_index(cfg, i)

    def test_raman_flag_rule(self):
        sharp = [VoigtPeak(100.0, 1, 5), VoigtPeak(300.0, 1, 8)]
        broad = [VoigtPeak(100.0, 1, 40), VoigtPeak(300.0, 1, 50)]
        crowded = [VoigtPeak(float(c), 1, 12) for c in range(20, 540, 25)]
        assert is_raman_like(sharp, 555)
        assert not is_raman_like(broad, 555)
        assert not is_raman_like(crowded, 555)

    def test_intensity_labels_in_input_frame(self):
        """Without tweak, noise or drift the apex of an isolated peak equals its label."""
        cfg = replace(GenConfig.for_task(Task.PEAK_FITTER, seed=6), n_peaks_range=(1, 1), slope_coeffs=(0.0,),
                      gauss_stds=(0.0,), beta1=None, shift_probs=(0.0, 0.0), tweak_enabled=False,
                      fwhm_range=(3.0, 4.0))
        rec = gen_sample(cfg, 0)
        (i,) = np.flatnonzero(rec.labels.location)
        clean = sum_peaks(rec.peaks, 555)
        norm, s, o = minmax(clean)
        np.testing.assert_allclose(rec.labels.intensity[i], rec.peaks[0].amplitude / s, rtol=1e-12)
        np.testing.assert_allclose(rec.input.raw[i], norm[i], atol=1e-12)
