import librosa
import numpy as np
import pytest

from lexstress import FormatError
from lexstress.dsp import (
    AudioBuffer,
    FeatureSequence,
    FeatureStats,
    compute_stats,
    extract_features,
    mel_filterbank,
    normalize,
    num_frames,
    read_feature_dump,
    read_wav,
    write_feature_dump,
)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def brute_force_log_mel(samples: np.ndarray) -> np.ndarray:
    """Direct DFT and loop-built triangular filters, sharing no code with the frontend"""
    n_fft, n_bins = 512, 257
    window = np.array([0.5 - 0.5 * np.cos(2 * np.pi * n / 399) for n in range(400)])
    edges = [_mel_to_hz(m) for m in np.linspace(_hz_to_mel(20.0), _hz_to_mel(8000.0), 82)]
    filters = np.zeros((80, n_bins))
    for j in range(80):
        left, center, right = edges[j], edges[j + 1], edges[j + 2]
        for k in range(n_bins):
            f = k * 16000 / n_fft
            if left < f <= center:
                filters[j, k] = (f - left) / (center - left)
            elif center < f < right:
                filters[j, k] = (right - f) / (right - center)
    n = np.arange(400)
    dft = np.exp(-2j * np.pi * np.outer(np.arange(n_bins), n) / n_fft)
    rows = []
    for start in range(0, len(samples) - 400 + 1, 160):
        spectrum = dft @ (samples[start : start + 400] * window)
        power = np.abs(spectrum) ** 2
        rows.append(np.log(np.maximum(filters @ power, 1e-10)))
    return np.array(rows)


def test_log_mel_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(20):
        samples = rng.uniform(-1, 1, size=int(rng.integers(400, 2400)))
        actual = extract_features(AudioBuffer(samples=samples)).frames
        expected = brute_force_log_mel(samples)
        assert actual.shape == expected.shape == (num_frames(len(samples)), 80)
        np.testing.assert_allclose(actual, expected, atol=1e-4, rtol=0)


def test_louder_audio_has_more_energy_in_every_band():
    samples = np.random.default_rng(3).uniform(-1, 1, size=4000)
    feats = [extract_features(AudioBuffer(samples=gain * samples)).frames for gain in (0.01, 0.1, 0.5, 1.0)]
    for quieter, louder in zip(feats, feats[1:]):
        assert np.all(louder > quieter)
    np.testing.assert_allclose(feats[3] - feats[2], 2 * np.log(2.0), atol=1e-9)


def test_filters_cover_every_bin_in_band():
    fb = mel_filterbank()
    freqs = np.arange(fb.shape[1]) * 16000 / 512
    in_band = (freqs >= 20.0) & (freqs < 8000.0)
    assert fb[:, in_band].sum(axis=0).min() > 0.1
    assert fb[:, ~in_band].max() < 1e-6
    assert np.all(fb.sum(axis=1) > 0.0)


def test_extract_features_is_deterministic():
    samples = np.random.default_rng(4).uniform(-1, 1, size=8000)
    first = extract_features(AudioBuffer(samples=samples)).frames
    mel_filterbank.cache_clear()
    second = extract_features(AudioBuffer(samples=samples.copy())).frames
    assert first.tobytes() == second.tobytes()


def test_sine_peaks_in_the_band_centered_on_its_frequency():
    t = np.arange(16000) / 16000
    frames = extract_features(AudioBuffer(samples=0.5 * np.sin(2 * np.pi * 1000.0 * t))).frames
    centers = librosa.mel_frequencies(n_mels=82, fmin=20.0, fmax=8000.0, htk=True)[1:-1]
    expected = int(np.argmin(np.abs(centers - 1000.0)))
    assert expected == 27
    assert np.all(frames.argmax(axis=1) == expected)


def test_num_frames():
    assert num_frames(16000) == 98
    assert num_frames(400) == 1
    assert num_frames(559) == 1
    assert num_frames(560) == 2
    with pytest.raises(ValueError):
        num_frames(399)


def test_extract_features_too_short():
    with pytest.raises(ValueError):
        extract_features(AudioBuffer(samples=np.zeros(100)))


def test_audio_buffer_rejects_other_rates():
    with pytest.raises(ValueError):
        AudioBuffer(samples=np.zeros(400), sample_rate=8000)


def _write_wav(path, samples, samplerate=16000, subtype="PCM_16"):
    import soundfile

    soundfile.write(str(path), samples, samplerate, subtype=subtype, format="WAV")
    return path


def test_read_wav(tmp_path):
    samples = (np.arange(800) % 100 - 50) / 100.0
    audio = read_wav(_write_wav(tmp_path / "a.wav", samples))
    assert len(audio) == 800
    np.testing.assert_allclose(audio.samples, samples, atol=1e-4)


def test_read_wav_rejects_wrong_format(tmp_path):
    with pytest.raises(FormatError, match="expected sample rate 16000, got 8000"):
        read_wav(_write_wav(tmp_path / "rate.wav", np.zeros(800), samplerate=8000))
    with pytest.raises(FormatError, match="expected mono"):
        read_wav(_write_wav(tmp_path / "stereo.wav", np.zeros((800, 2))))
    with pytest.raises(FormatError, match="16-bit PCM"):
        read_wav(_write_wav(tmp_path / "float.wav", np.zeros(800), subtype="FLOAT"))
    (tmp_path / "junk.wav").write_bytes(b"not audio at all")
    with pytest.raises(FormatError):
        read_wav(tmp_path / "junk.wav")


def test_feature_dump(tmp_path):
    frames = np.random.default_rng(1).standard_normal((7, 80)).astype(np.float32)
    path = write_feature_dump(FeatureSequence(frames=frames), tmp_path / "f" / "a.feat")
    raw = path.read_bytes()
    assert raw[:8] == b"SDFEAT01"
    assert len(raw) == 16 + 7 * 80 * 4
    np.testing.assert_array_equal(read_feature_dump(path).frames, frames)


def test_feature_dump_bad_magic(tmp_path):
    path = write_feature_dump(FeatureSequence(frames=np.zeros((2, 80))), tmp_path / "a.feat")
    path.write_bytes(b"XXXXXXXX" + path.read_bytes()[8:])
    with pytest.raises(FormatError, match="bad magic"):
        read_feature_dump(path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_feature_dump(path)


def test_stats_and_normalize():
    rng = np.random.default_rng(2)
    seqs = [FeatureSequence(frames=3.0 + 2.0 * rng.standard_normal((50, 80))) for _ in range(4)]
    stats = compute_stats(seqs)
    normed = np.concatenate([normalize(s, stats).frames for s in seqs])
    np.testing.assert_allclose(normed.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(normed.std(axis=0), 1.0, atol=1e-9)


def test_stats_floor_constant_dimensions():
    stats = compute_stats([FeatureSequence(frames=np.ones((5, 80)))])
    assert min(stats.std) == pytest.approx(1e-5)
    with pytest.raises(ValueError):
        compute_stats([])


def test_stats_reject_zero_std():
    with pytest.raises(ValueError, match="positive"):
        FeatureStats(mean=[0.0] * 80, std=[1.0] * 79 + [0.0])
