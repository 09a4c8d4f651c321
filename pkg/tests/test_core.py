from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectramill.core import (
    ChannelStack,
    NormRecord,
    Spectrum,
    SpectrumError,
    VoigtPeak,
    denormalize,
    derivatives,
    eval_voigt,
    normalize,
    peak_labels,
    read_spectrum_csv,
    write_spectrum_csv,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def measured_fwhm(peak: VoigtPeak, oversample: int = 100) -> float:
    """Half-maximum crossing distance from a dense grid scan with linear interpolation."""
    x = np.arange(0, 200 * oversample + 1) / oversample
    from spectramill.core import pseudo_voigt

    y = pseudo_voigt(x, peak)
    half = peak.amplitude / 2
    above = np.flatnonzero(y >= half)
    lo, hi = above[0], above[-1]

    def cross(i, j):
        return x[i] + (half - y[i]) * (x[j] - x[i]) / (y[j] - y[i])

    return cross(hi, hi + 1) - cross(lo - 1, lo)


class TestVoigt:
    def test_gaussian_apex_equals_amplitude(self):
        v = eval_voigt(VoigtPeak(100, 1.0, 10, 0.0), 555)
        assert v[100] == 1.0

    def test_gaussian_half_maximum(self):
        v = eval_voigt(VoigtPeak(100, 1.0, 10, 0.0), 555)
        assert abs(v[105] - 0.5) < 1e-9

    @pytest.mark.parametrize("eta", [0.0, 0.25, 0.5, 0.75, 1.0])
    def test_measured_fwhm_matches_parameter(self, eta):
        assert abs(measured_fwhm(VoigtPeak(100, 1.0, 10, eta)) - 10) < 0.05

    def test_invalid_parameters(self):
        with pytest.raises(SpectrumError):
            eval_voigt(VoigtPeak(10, 1.0, 0.0), 64)
        with pytest.raises(SpectrumError):
            eval_voigt(VoigtPeak(10, 1.0, 5.0, 1.5), 64)
        with pytest.raises(SpectrumError):
            eval_voigt(VoigtPeak(10, 1.0, 5.0), 4)

    @given(
        eta=st.floats(0, 1),
        fwhm=st.floats(1, 60),
        delta=st.integers(0, 40),
        center=st.integers(50, 100),
    )
    def test_symmetric_about_center(self, eta, fwhm, delta, center):
        v = eval_voigt(VoigtPeak(center, 0.7, fwhm, eta), 160)
        assert abs(v[center + delta] - v[center - delta]) < 1e-9

    @given(k=st.floats(0.01, 100), eta=st.floats(0, 1), fwhm=st.floats(1, 60))
    def test_amplitude_linearity(self, k, eta, fwhm):
        a = eval_voigt(VoigtPeak(60.3, 1.0, fwhm, eta), 128)
        b = eval_voigt(VoigtPeak(60.3, k, fwhm, eta), 128)
        np.testing.assert_allclose(b, k * a, rtol=1e-14, atol=0)


class TestDerivatives:
    def test_linear_ramp(self):
        d1, d2 = derivatives(np.arange(5.0))
        np.testing.assert_array_equal(d1, np.ones(5))
        np.testing.assert_array_equal(d2, np.zeros(5))

    def test_quadratic_interior(self):
        _, d2 = derivatives(np.arange(5.0) ** 2)
        np.testing.assert_array_equal(d2[1:-1], [2.0, 2.0, 2.0])

    def test_matches_direct_stencil(self, rng):
        x = rng.normal(size=64)
        d1, d2 = derivatives(x)
        n = len(x)
        e1 = np.empty(n)
        e2 = np.empty(n)
        for i in range(n):
            if i == 0:
                e1[i] = x[1] - x[0]
            elif i == n - 1:
                e1[i] = x[n - 1] - x[n - 2]
            else:
                e1[i] = (x[i + 1] - x[i - 1]) / 2
        for i in range(1, n - 1):
            e2[i] = x[i + 1] - 2 * x[i] + x[i - 1]
        e2[0], e2[-1] = e2[1], e2[-2]
        np.testing.assert_array_equal(d1, e1)
        np.testing.assert_array_equal(d2, e2)

    def test_too_short(self):
        with pytest.raises(SpectrumError):
            derivatives(np.array([1.0, 2.0]))

    @given(
        x=arrays(np.float64, 32, elements=finite),
        y=arrays(np.float64, 32, elements=finite),
        a=finite,
        b=finite,
    )
    def test_linearity(self, x, y, a, b):
        lhs = derivatives(a * x + b * y)
        rhs = [a * u + b * v for u, v in zip(derivatives(x), derivatives(y))]
        for p, q in zip(lhs, rhs):
            np.testing.assert_allclose(p, q, atol=1e-9 * (1 + np.abs(q).max()))

    def test_channel_stack_recomputable(self, rng):
        x = rng.normal(size=40)
        stack = ChannelStack.from_raw(x)
        d1, d2 = derivatives(stack.raw)
        np.testing.assert_array_equal(stack.d1, d1)
        np.testing.assert_array_equal(stack.d2, d2)


class TestNormalize:
    def test_worked_example(self):
        s = normalize(Spectrum(np.array([2.0, 4.0, 6.0])))
        np.testing.assert_array_equal(s.values, [0.0, 0.5, 1.0])
        assert s.norm == NormRecord(4.0, 2.0)

    def test_already_normalized(self):
        s = normalize(Spectrum(np.array([0.0, 0.25, 1.0])))
        np.testing.assert_array_equal(s.values, [0.0, 0.25, 1.0])
        assert s.norm == NormRecord(1.0, 0.0)

    def test_round_trip(self, rng):
        x = rng.normal(size=555) * 37 + 5
        back = denormalize(normalize(Spectrum(x)))
        np.testing.assert_allclose(back.values, x, atol=1e-9)

    def test_degenerate(self):
        with pytest.raises(SpectrumError):
            normalize(Spectrum(np.ones(10)))

    def test_composes_with_existing_record(self, rng):
        x = rng.normal(size=50) * 3
        once = normalize(Spectrum(x))
        twice = normalize(Spectrum(once.values * 0.5 + 0.2, norm=NormRecord(once.norm.scale / 0.5,
                                                                             once.norm.offset - 0.2 * once.norm.scale / 0.5)))
        np.testing.assert_allclose(denormalize(twice).values, x, atol=1e-9)

    @given(arrays(np.float64, st.integers(2, 80), elements=finite).filter(lambda a: np.ptp(a) > 1e-6))
    def test_range_and_extrema(self, x):
        s = normalize(Spectrum(x))
        assert s.values.min() == 0.0
        assert abs(s.values.max() - 1.0) < 1e-12
        # extremes land on 0 and 1 (near-equal points may round onto them too)
        assert s.values[np.argmin(x)] == 0.0
        assert abs(s.values[np.argmax(x)] - 1.0) < 1e-12


class TestSpectrum:
    def test_rejects_non_finite(self):
        with pytest.raises(SpectrumError):
            Spectrum(np.array([0.0, np.nan]))

    def test_values_read_only(self):
        s = Spectrum(np.arange(4.0))
        with pytest.raises(ValueError):
            s.values[0] = 3

    def test_axis_mapping_round_trip(self):
        s = Spectrum(np.zeros(555), axis_start=200.0, axis_step=2.5)
        for i in (0, 17, 554):
            assert round(s.axis_to_index(s.index_to_axis(i))) == i


class TestLabels:
    def test_location_and_intensity(self):
        peaks = [VoigtPeak(10.4, 0.5, 4.0), VoigtPeak(20.5, 0.8, 6.0)]
        lab = peak_labels(peaks, 32)
        assert lab.location.sum() == 2
        np.testing.assert_array_equal(np.flatnonzero(lab.location), [10, 21])
        np.testing.assert_array_equal(np.flatnonzero(lab.intensity), [10, 21])
        np.testing.assert_array_equal(np.flatnonzero(lab.fwhm), [10, 21])
        np.testing.assert_array_equal(lab.shadowed_location, [10, 21])

    def test_duplicate_apex_rejected(self):
        with pytest.raises(SpectrumError):
            peak_labels([VoigtPeak(10.2, 1, 3), VoigtPeak(9.8, 1, 3)], 32)


class TestCsv:
    def test_resamples_and_keeps_axis(self, tmp_path):
        path = tmp_path / "s.csv"
        axis = np.linspace(100, 300, 801)
        path.write_text("shift,counts\n" + "\n".join(f"{a},{np.sin(a / 20)}" for a in axis))
        spec, original = read_spectrum_csv(path)
        assert len(spec) == 555
        np.testing.assert_array_equal(original, axis)
        assert spec.axis_start == 100.0
        assert abs(spec.index_to_axis(554) - 300.0) < 1e-9
        np.testing.assert_allclose(spec.values, np.sin(spec.axis / 20), atol=1e-3)

    def test_write_read_identity(self, tmp_path, rng):
        s = Spectrum(rng.normal(size=555), 10.0, 0.5)
        write_spectrum_csv(tmp_path / "a.csv", s)
        back, _ = read_spectrum_csv(tmp_path / "a.csv")
        np.testing.assert_allclose(back.values, s.values, atol=1e-12)
