import numpy as np
import pytest

from duplexaec.dsp import analyze, synthesize
from duplexaec.laec import NORM_CAP, LaecConfig, LaecState, laec_frames, laec_process, laec_residual, laec_run
from duplexaec.metrics import erle, ser, windowed_erle

from conftest import sine, speech_shaped_noise


def ten_tap_rir(rng):
    return rng.standard_normal(10) * np.exp(-np.arange(10) / 3.0)


class TestConfig:
    @pytest.mark.parametrize("kwargs", [{"taps": 0}, {"step_size": 0.0}, {"step_size": 1.5},
                                        {"regularization": 0.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            LaecConfig(**kwargs)


class TestProcess:
    def test_zero_reference_passes_mic(self, rng):
        st = LaecState()
        mic = rng.standard_normal(321) + 1j * rng.standard_normal(321)
        out = laec_process(st, np.zeros(321, complex), mic)
        assert np.array_equal(out, mic)

    def test_non_finite_rolls_back(self, rng):
        st = LaecState()
        for _ in range(3):
            laec_process(st, rng.standard_normal(321) + 0j, rng.standard_normal(321) + 0j)
        before = st.snapshot()
        bad = np.zeros(321, complex)
        bad[3] = np.inf
        with pytest.raises(FloatingPointError):
            laec_process(st, bad, np.zeros(321, complex))
        after = st.snapshot()
        assert all(np.array_equal(a, b) for a, b in zip(before[:3], after[:3])) and before[3] == after[3]

    def test_frozen_filter_is_linear(self, rng):
        st = LaecState()
        for _ in range(20):
            laec_process(st, rng.standard_normal(321) + 0j, rng.standard_normal(321) + 0j)
        w = st.weights.copy()
        hist = np.concatenate([np.zeros((321, 1)), st.history[:, :-1]], axis=1)
        r = rng.standard_normal(321) + 1j * rng.standard_normal(321)
        hist[:, 0] = r
        y1 = rng.standard_normal(321) + 1j * rng.standard_normal(321)
        y2 = rng.standard_normal(321) + 1j * rng.standard_normal(321)
        frozen = st.snapshot()
        outs = []
        for y in (y1, y2, y1 + 2 * y2):
            probe = LaecState()
            probe.restore(frozen)
            outs.append(laec_process(probe, r, y, adapt=False))
            np.testing.assert_array_equal(probe.weights, w)
        np.testing.assert_allclose(outs[0], y1 - np.sum(np.conj(w) * hist, axis=1), atol=1e-12)
        # E(y) = y - echo_est, so E(y1 + 2 y2) = E(y1) + 2 E(y2) + 2 echo_est
        echo_est = y1 - outs[0]
        np.testing.assert_allclose(outs[2], outs[0] + 2 * outs[1] + 2 * echo_est, atol=1e-12)

    def test_norm_cap(self, rng):
        st = LaecState(LaecConfig(step_size=1.0))
        # adversarial: huge mic against tiny reference pushes filters outward
        for _ in range(50):
            laec_process(st, 1e-3 * (rng.standard_normal(321) + 0j), 1e3 * (rng.standard_normal(321) + 0j))
            assert np.all(np.linalg.norm(st.weights, axis=1) <= NORM_CAP * (1 + 1e-12))

    def test_reset(self, rng):
        st = LaecState()
        laec_process(st, rng.standard_normal(321) + 0j, rng.standard_normal(321) + 0j)
        st.reset()
        fresh = LaecState()
        assert all(np.array_equal(a, b) for a, b in zip(st.snapshot()[:3], fresh.snapshot()[:3]))


class TestConvergence:
    def test_single_tap_echo(self, rng):
        ref = 0.1 * rng.standard_normal(5 * 16000)
        mic = 0.5 * ref
        out = laec_run(ref, mic)
        assert erle(mic[-16000:], out[-16000:]) >= 25.0

    def test_ten_tap_rir_windowed_erle(self, rng):
        ref = 0.1 * rng.standard_normal(5 * 16000)
        echo = np.convolve(ref, ten_tap_rir(rng))[:len(ref)]
        out = laec_residual(echo, ref)
        w = windowed_erle(echo, out)
        assert w[-1] >= 20.0
        assert np.all(np.diff(w) >= -0.5)

    def test_double_talk_preserves_near_end(self, rng):
        n = 5 * 16000
        ref = 0.1 * rng.standard_normal(n)
        echo = np.convolve(ref, ten_tap_rir(rng))[:n]
        near = sine(440.0, n, amp=np.sqrt(2 * np.mean(echo ** 2)))
        assert ser(near, echo) == pytest.approx(0.0, abs=0.05)
        R, S = analyze(ref), analyze(near)
        out = laec_frames(LaecState(), R, S + analyze(echo))
        # the canceller only subtracts a reference estimate, so the near-end
        # component of the output is S itself and the rest is residual echo
        s_out = synthesize(S, n)
        e_out = synthesize(out - S, n)
        np.testing.assert_allclose(s_out, near, atol=1e-12)
        assert ser(s_out, e_out) >= ser(near, echo)

class TestResidual:
    def test_zero_reference(self, rng):
        echo = rng.standard_normal(16000)
        np.testing.assert_allclose(laec_residual(echo, np.zeros(16000)), echo, atol=1e-12)

    def test_linear_echo_cancelled(self, rng):
        ref = 0.1 * rng.standard_normal(5 * 16000)
        echo = np.convolve(ref, ten_tap_rir(rng))[:len(ref)]
        resid = laec_residual(echo, ref)
        assert erle(echo[-16000:], resid[-16000:]) >= 20.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            laec_residual(np.zeros(1000), np.zeros(999))

    def test_additivity_with_frozen_filters(self, rng):
        n = 5 * 16000
        ref = speech_shaped_noise(n, rng)
        echo = np.convolve(ref, ten_tap_rir(rng))[:n]
        speech = speech_shaped_noise(n, rng, level=0.05)
        R, E, S = analyze(ref), analyze(echo), analyze(speech)
        st = LaecState()
        laec_frames(st, R, E)  # converge on far-end single talk
        frozen = st.snapshot()
        a, b = LaecState(), LaecState()
        a.restore(frozen)
        b.restore(frozen)
        mixed = laec_frames(a, R, E + S, adapt=False)
        alone = laec_frames(b, R, E, adapt=False)
        diff = mixed - alone
        assert np.sqrt(np.mean(np.abs(diff - S) ** 2)) <= 1e-5
