import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steadywd.schedule import (
    ScheduleSet,
    alpha_at,
    alpha_for_effective_lr,
    c_sq_at,
    effective_lr,
    erroneous_effective_lr,
    gamma_at,
    gamma_eff_at,
)

alphas = st.floats(1e-6, 1.0, exclude_min=False)


class TestGamma:
    def test_end_of_warmup_is_peak(self):
        s = ScheduleSet(total_steps=100, warmup_steps=10, gamma_peak=0.3)
        assert gamma_at(s, 10) == 0.3

    def test_warmup_is_linear_from_zero(self):
        s = ScheduleSet(total_steps=100, warmup_steps=10, gamma_peak=1.0)
        assert gamma_at(s, 1) == pytest.approx(0.1)
        assert gamma_at(s, 5) == pytest.approx(0.5)

    def test_cosine_end_is_zero(self):
        s = ScheduleSet(total_steps=100, warmup_steps=10, gamma_peak=0.3)
        assert gamma_at(s, 100) == pytest.approx(0.0, abs=1e-17)

    def test_cosine_midpoint_is_half(self):
        s = ScheduleSet(total_steps=110, warmup_steps=10, gamma_peak=0.4)
        assert gamma_at(s, 60) == pytest.approx(0.2, rel=1e-14)

    def test_constant(self):
        s = ScheduleSet(total_steps=50, warmup_steps=5, gamma_shape="constant", gamma_peak=2.0)
        assert [gamma_at(s, t) for t in (6, 30, 50)] == [2.0, 2.0, 2.0]

    @pytest.mark.parametrize("t", [0, 101])
    def test_out_of_range(self, t):
        with pytest.raises(ValueError):
            gamma_at(ScheduleSet(total_steps=100), t)

    def test_invalid_shape(self):
        with pytest.raises(ValueError):
            ScheduleSet(total_steps=10, gamma_shape="linear")


class TestEffectiveLr:
    def test_alpha_one(self):
        assert effective_lr(0.37, 1.0) == 0.37

    def test_reference_value(self):
        assert effective_lr(0.01, 0.1) == pytest.approx(0.01 * math.sqrt(19), rel=1e-15)
        assert round(effective_lr(0.01, 0.1), 6) == 0.043589

    def test_zero_gamma(self):
        assert effective_lr(0.0, 0.3) == 0.0

    def test_inversion_alpha_one(self):
        assert alpha_for_effective_lr(0.2, 0.2) == 1.0
        assert alpha_for_effective_lr(0.2, 0.2, alpha_max=0.5) == 0.5

    def test_inversion_reference(self):
        assert alpha_for_effective_lr(0.01, 0.01 * math.sqrt(19)) == pytest.approx(0.1, abs=1e-12)

    def test_inversion_sqrt3(self):
        assert alpha_for_effective_lr(0.02, 0.02 * math.sqrt(3)) == pytest.approx(0.5, abs=1e-15)

    def test_zero_gamma_positive_target(self):
        with pytest.raises(ValueError):
            alpha_for_effective_lr(0.0, 0.1)

    def test_erroneous(self):
        assert erroneous_effective_lr(0.3, 1.0) == 0.3
        assert erroneous_effective_lr(0.01, 0.1) == pytest.approx(0.19, rel=1e-14)
        assert erroneous_effective_lr(0.05, 2.0 / 3.0) == pytest.approx(0.1, rel=1e-14)

    @settings(max_examples=200)
    @given(st.floats(1e-6, 10.0), alphas)
    def test_round_trip(self, gamma, alpha):
        assert alpha_for_effective_lr(gamma, effective_lr(gamma, alpha), 1.0) == pytest.approx(alpha, abs=1e-12)

    @settings(max_examples=200)
    @given(st.floats(1e-6, 10.0), alphas, alphas)
    def test_strictly_decreasing(self, gamma, a, b):
        if a == b:
            return
        lo, hi = sorted((a, b))
        assert effective_lr(gamma, lo) > effective_lr(gamma, hi) or math.isclose(lo, hi, rel_tol=1e-15)


class TestAlphaSchedules:
    def test_linear_endpoints(self):
        s = ScheduleSet(total_steps=11, alpha_kind="linear", alpha0=0.1, alpha1=0.6)
        assert alpha_at(s, 1) == 0.1
        assert alpha_at(s, 11) == pytest.approx(0.6)
        assert alpha_at(s, 6) == pytest.approx(0.35)

    def _synth(self, **kw):
        base = dict(total_steps=2000, warmup_steps=100, gamma_peak=0.01, alpha_kind="synthesized", alpha0=0.1, alpha1=0.5)
        base.update(kw)
        return ScheduleSet(**base)

    def test_synthesized_matches_baseline_before_clamp(self):
        s = self._synth()
        baseline = ScheduleSet(total_steps=2000, warmup_steps=100, gamma_peak=0.01, alpha0=0.1)
        onset = s.clamp_onset()
        assert onset is not None and 100 < onset < 2000
        for t in range(1, onset):
            assert abs(gamma_eff_at(s, t) - gamma_eff_at(baseline, t)) <= 1e-12
            if t > 100:
                assert gamma_at(s, t) == 0.01

    def test_clamp_then_freeze(self):
        s = self._synth()
        onset = s.clamp_onset()
        assert all(alpha_at(s, t) == 0.5 for t in range(onset, 2001))
        assert gamma_at(s, 2000) == 0.01

    def test_clamp_then_resume(self):
        s = self._synth(after_clamp="resume")
        baseline = ScheduleSet(total_steps=2000, warmup_steps=100, gamma_peak=0.01, alpha0=0.1)
        onset = s.clamp_onset()
        for t in range(onset, 2000, 97):
            assert alpha_at(s, t) == 0.5
            assert gamma_eff_at(s, t) == pytest.approx(gamma_eff_at(baseline, t), rel=1e-12)

    def test_erroneous_match_clamps_later(self):
        assert self._synth(alpha_match="erroneous").clamp_onset() > self._synth().clamp_onset()

    def test_non_synth_has_no_onset(self):
        assert ScheduleSet(total_steps=10).clamp_onset() is None


class TestCSq:
    def test_constant(self):
        s = ScheduleSet(total_steps=50, c_sq0=1.1875)
        assert c_sq_at(s, 1) == c_sq_at(s, 27) == c_sq_at(s, 50) == 1.1875

    def test_cosine_endpoints(self):
        s = ScheduleSet(total_steps=50, c_sq_shape="cosine", c_sq0=2.375, c_sq_final=2.375 / 4)
        assert c_sq_at(s, 1) == pytest.approx(2.375, abs=1e-9)
        assert c_sq_at(s, 50) == pytest.approx(2.375 / 4, rel=1e-14)

    def test_override_keeps_ratio(self):
        s = ScheduleSet(total_steps=50, c_sq_shape="cosine", c_sq0=1.0, c_sq_final=0.25)
        assert c_sq_at(s, 50, c_sq0=8.0) == pytest.approx(2.0)

    def test_cosine_needs_final(self):
        with pytest.raises(ValueError):
            ScheduleSet(total_steps=5, c_sq_shape="cosine")
