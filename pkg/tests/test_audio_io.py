import struct

import numpy as np
import pytest

from protodrum.audio_io import (
    AnnotationError,
    AudioClip,
    AudioFormatError,
    OnsetAnnotation,
    VocabularyMap,
    apply_vocabulary,
    load_annotations,
    load_vocabulary,
    load_wav,
    save_annotations,
    save_wav,
)


def write_wav(path, samples, sample_rate=44100, bits=16, channels=1, fmt=None):
    """Scripted WAV writer independent of the module under test."""
    samples = np.asarray(samples)
    if channels == 2:
        interleaved = samples.reshape(-1)
    else:
        interleaved = samples
    if bits == 16:
        payload = np.round(np.clip(interleaved, -1, 1) * (2**15 - 1)).astype("<i2").tobytes()
        audio_format = fmt or 1
    elif bits == 24:
        ints = np.round(np.clip(interleaved, -1, 1) * (2**23 - 1)).astype(np.int32)
        b = np.zeros((ints.size, 3), dtype=np.uint8)
        b[:, 0] = ints & 0xFF
        b[:, 1] = (ints >> 8) & 0xFF
        b[:, 2] = (ints >> 16) & 0xFF
        payload = b.tobytes()
        audio_format = fmt or 1
    elif bits == 32:
        payload = interleaved.astype("<f4").tobytes()
        audio_format = fmt or 3
    else:
        raise ValueError(bits)
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        audio_format,
        channels,
        sample_rate,
        sample_rate * channels * bits // 8,
        channels * bits // 8,
        bits,
        b"data",
        len(payload),
    )
    path.write_bytes(header + payload)


class TestLoadWav:
    def test_silence_16bit(self, tmp_path):
        p = tmp_path / "silence.wav"
        write_wav(p, np.zeros(44100))
        clip = load_wav(p)
        assert clip.sample_rate == 44100
        assert clip.samples.shape == (44100,)
        assert np.all(clip.samples == 0.0)
        assert clip.duration == pytest.approx(1.0)

    def test_symmetric_stereo_downmixes_to_zero(self, tmp_path):
        p = tmp_path / "stereo.wav"
        frames = np.tile([0.5, -0.5], 1000).reshape(-1, 2)
        write_wav(p, frames, channels=2)
        clip = load_wav(p)
        assert clip.samples.shape == (1000,)
        assert np.max(np.abs(clip.samples)) < 1e-4

    def test_rejects_48k(self, tmp_path):
        p = tmp_path / "48k.wav"
        write_wav(p, np.zeros(4800), sample_rate=48000)
        with pytest.raises(AudioFormatError, match="unsupported sample rate 48000"):
            load_wav(p)

    def test_16bit_scaling(self, tmp_path):
        p = tmp_path / "ramp.wav"
        write_wav(p, np.array([0.0, 0.5, -0.5, 1.0]))
        clip = load_wav(p)
        assert clip.samples == pytest.approx([0.0, 0.5, -0.5, 1.0], abs=1e-4)

    def test_24bit_roundtrip(self, tmp_path):
        p = tmp_path / "deep.wav"
        x = np.linspace(-0.9, 0.9, 101)
        write_wav(p, x, bits=24)
        clip = load_wav(p)
        assert clip.samples == pytest.approx(x, abs=1e-6)

    def test_float32_passthrough(self, tmp_path):
        p = tmp_path / "f32.wav"
        x = np.sin(np.linspace(0, 10, 500))
        write_wav(p, x, bits=32)
        clip = load_wav(p)
        assert clip.samples == pytest.approx(x, abs=1e-7)

    def test_rejects_unsupported_encoding(self, tmp_path):
        p = tmp_path / "alaw.wav"
        write_wav(p, np.zeros(100), bits=16, fmt=6)
        with pytest.raises(AudioFormatError, match="unsupported encoding"):
            load_wav(p)

    def test_rejects_truncated_file(self, tmp_path):
        p = tmp_path / "trunc.wav"
        write_wav(p, np.zeros(1000))
        data = p.read_bytes()
        p.write_bytes(data[: len(data) - 500])
        with pytest.raises(AudioFormatError):
            load_wav(p)

    def test_rejects_non_wav(self, tmp_path):
        p = tmp_path / "noise.bin"
        p.write_bytes(b"definitely not a wav file")
        with pytest.raises(AudioFormatError):
            load_wav(p)

    def test_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        x = (rng.uniform(-0.8, 0.8, 2000)).astype(np.float32)
        clip = AudioClip(samples=x)
        p = tmp_path / "rt.wav"
        save_wav(clip, p)
        back = load_wav(p)
        assert back.samples == pytest.approx(x, abs=1.0 / 2**15)


class TestAnnotations:
    def test_direct_parse(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("0.50 KD\n1.00 SD\n")
        ann = load_annotations(p)
        assert ann.events == ((0.5, "KD"), (1.0, "SD"))

    def test_unsorted_input_sorted(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("1.0 SD\n0.5 KD\n")
        ann = load_annotations(p)
        assert ann.events == ((0.5, "KD"), (1.0, "SD"))

    def test_negative_time_reports_line(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("-0.1 KD\n")
        with pytest.raises(AnnotationError, match=":1:"):
            load_annotations(p)

    def test_malformed_line_reports_line_number(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("0.5 KD\nnot-an-event\n")
        with pytest.raises(AnnotationError, match=":2:"):
            load_annotations(p)

    def test_comments_and_blank_lines(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("# header\n\n0.25 HH\n")
        ann = load_annotations(p)
        assert ann.events == ((0.25, "HH"),)

    def test_tab_separated_label_with_spaces(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("0.5\tsnare rim\n")
        ann = load_annotations(p)
        assert ann.events == ((0.5, "snare rim"),)

    def test_roundtrip_idempotent(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("0.50 KD\n1.00 SD\n2.25 HH\n")
        ann = load_annotations(p)
        q = tmp_path / "b.txt"
        save_annotations(ann, q)
        again = load_annotations(q)
        assert again.events == ann.events
        r = tmp_path / "c.txt"
        save_annotations(again, r)
        assert q.read_text() == r.read_text()


class TestVocabulary:
    def test_direct_substitution(self):
        ann = OnsetAnnotation(events=((0.5, "snare_rim"),))
        vocab = VocabularyMap(entries={"snare_rim": "SD"})
        out = apply_vocabulary(ann, vocab)
        assert out.events == ((0.5, "SD"),)

    def test_identity_map(self):
        ann = OnsetAnnotation(events=((0.5, "KD"), (1.0, "SD")))
        vocab = VocabularyMap(entries={"KD": "KD", "SD": "SD"})
        assert apply_vocabulary(ann, vocab).events == ann.events

    def test_unmapped_dropped(self):
        ann = OnsetAnnotation(events=((0.5, "KD"), (1.0, "gong")))
        vocab = VocabularyMap(entries={"KD": "KD"})
        out = apply_vocabulary(ann, vocab)
        assert len(out) == len(ann) - 1

    def test_never_increases_count_never_reorders(self):
        rng = np.random.default_rng(3)
        labels = ["a", "b", "c", "d"]
        vocab = VocabularyMap(entries={"a": "X", "b": "X", "c": "Y"})
        for _ in range(50):
            times = np.sort(rng.uniform(0, 10, 20))
            ann = OnsetAnnotation(
                events=tuple((float(t), labels[rng.integers(4)]) for t in times)
            )
            out = apply_vocabulary(ann, vocab)
            assert len(out) <= len(ann)
            surviving = [t for t, lab in ann.events if lab in vocab.entries]
            assert [t for t, _ in out.events] == surviving

    def test_load_vocabulary_file(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("# map\nsnare_rim SD\nkick KD\n")
        vocab = load_vocabulary(p)
        assert vocab.entries == {"snare_rim": "SD", "kick": "KD"}

    def test_conflicting_mapping_rejected(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("kick KD\nkick SD\n")
        with pytest.raises(AnnotationError, match="mapped twice"):
            load_vocabulary(p)
