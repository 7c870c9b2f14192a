import numpy as np
import pytest

from speechrestore.audio import AudioBuffer, save_wav


def harmonic_speech(rate=16000, seconds=2.0, f0=140.0, seed=0, n_harmonics=14):
    """Speech-like test signal: harmonic stack with slow pitch drift and syllabic amplitude modulation."""
    rng = np.random.default_rng(seed)
    t = np.arange(int(round(rate * seconds))) / rate
    drift = f0 * (1 + 0.05 * np.sin(2 * np.pi * 0.7 * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(drift) / rate
    x = np.zeros_like(t)
    for k in range(1, n_harmonics + 1):
        if k * f0 * 1.1 >= rate / 2:
            break
        x += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
    envelope = (0.55 + 0.45 * np.sin(2 * np.pi * 3.3 * t + rng.uniform(0, 2 * np.pi))) ** 2
    x *= envelope
    return AudioBuffer(0.2 * x / np.max(np.abs(x)), rate)


def sine(freq, rate=48000, seconds=1.0, amplitude=1.0):
    t = np.arange(int(round(rate * seconds))) / rate
    return AudioBuffer(amplitude * np.sin(2 * np.pi * freq * t), rate)


def write_corpus(root, n_speech=3, n_noise=2, seconds=1.5, rates=(16000, 44100, 48000)):
    """Toy manifest corpus on disk; returns the CSV manifest path."""
    rng = np.random.default_rng(11)
    rows = ["path,external_mos,role,split"]
    for i in range(n_speech):
        rate = rates[i % len(rates)]
        save_wav(harmonic_speech(rate, seconds, f0=110 + 25 * i, seed=i), root / f"speech{i}.wav", 16)
        rows.append(f"speech{i}.wav,4.2,speech,eval")
    for i in range(n_noise):
        save_wav(AudioBuffer(0.05 * rng.standard_normal(48000), 48000), root / f"noise{i}.wav", 16)
        rows.append(f"noise{i}.wav,,noise,eval")
    path = root / "manifest.csv"
    path.write_text("\n".join(rows) + "\n")
    return path


@pytest.fixture
def corpus(tmp_path):
    return write_corpus(tmp_path)


# acceptance results are collected by tests/test_acceptance.py and echoed once per run
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, line = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {line}")
