"""ESTOI, SI-SNR, segmental SNR, and manifest evaluation."""

import numpy as np
import pytest

from sdd.errors import ConfigError
from sdd.metrics import (
    EvalReport,
    estoi,
    evaluate_manifest,
    nearest_bucket,
    seg_snr,
    si_snr,
)


def speechlike(seed=0, seconds=2.0, fs=16000):
    """Multi-band carriers under independent slow modulators.

    ESTOI correlates per-band temporal envelopes, so the bands must move
    independently (a single global envelope is degenerate for it).
    """
    rng = np.random.default_rng(seed)
    n = int(seconds * fs)
    t = np.arange(n) / fs
    sig = np.zeros(n)
    for freq in np.geomspace(180.0, 3600.0, 10):
        carrier = np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
        rate = rng.uniform(1.5, 7.0)
        env = 0.2 + 0.8 * np.abs(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
        sig += carrier * env / np.sqrt(freq)
    return 0.5 * sig / np.abs(sig).max()


class TestEstoi:
    def test_self_score_is_one(self):
        x = speechlike(1)
        assert abs(estoi(x, x) - 1.0) < 1e-10

    def test_positive_scale_invariance_exact(self):
        x = speechlike(2)
        y = speechlike(3)
        assert estoi(x, 2.0 * y) == estoi(x, y)
        assert estoi(x, 0.5 * y) == estoi(x, y)
        assert abs(estoi(2.0 * x, y) - estoi(x, y)) < 1e-10
        assert abs(estoi(x, 3.7 * y) - estoi(x, y)) < 1e-10

    def test_uncorrelated_noise_scores_low(self):
        x = speechlike(4)
        rng = np.random.default_rng(5)
        scores = [estoi(x, rng.normal(size=x.shape)) for _ in range(20)]
        assert np.mean(scores) < 0.1

    def test_bounded(self):
        x = speechlike(6)
        rng = np.random.default_rng(7)
        for _ in range(5):
            score = estoi(x, x + rng.normal(0, 0.2, size=x.shape))
            assert -1.0 <= score <= 1.0

    def test_too_short_rejected(self):
        x = speechlike(8)[:3000]
        with pytest.raises(ConfigError, match="384"):
            estoi(x, x)

    def test_length_mismatch_rejected(self):
        x = speechlike(9)
        with pytest.raises(ConfigError):
            estoi(x, x[:-1])

    def test_degraded_scores_between_noise_and_self(self):
        x = speechlike(10)
        rng = np.random.default_rng(11)
        mild = estoi(x, x + rng.normal(0, 0.02, size=x.shape))
        heavy = estoi(x, x + rng.normal(0, 0.5, size=x.shape))
        assert mild > heavy > 0.0
        assert mild > 0.85


class TestSiSnr:
    def test_identical_capped_at_60(self):
        x = speechlike(12)
        assert si_snr(x, x) == 60.0

    def test_scale_invariance(self):
        x = speechlike(13)
        rng = np.random.default_rng(14)
        y = x + rng.normal(0, 0.1, size=x.shape)
        assert si_snr(x, 2.0 * y) == pytest.approx(si_snr(x, y), abs=1e-9)
        assert si_snr(x, 2.0 * x) == 60.0

    def test_orthogonal_noise_closed_form(self):
        rng = np.random.default_rng(15)
        x = rng.normal(size=8000)
        x -= x.mean()
        n = rng.normal(size=8000)
        n -= n.mean()
        n -= (np.dot(n, x) / np.dot(x, x)) * x  # exactly orthogonal to x
        expected = 10.0 * np.log10(np.dot(x, x) / np.dot(n, n))
        assert si_snr(x, x + n) == pytest.approx(expected, abs=1e-6)

    def test_silent_clean_rejected(self):
        with pytest.raises(ConfigError):
            si_snr(np.zeros(100), np.ones(100))


class TestSegSnr:
    def test_identical_hits_ceiling(self):
        x = speechlike(16)
        assert seg_snr(x, x) == 35.0

    def test_antiphase_is_minus_6db(self):
        # error energy = 4x clean energy -> 10*log10(1/4); the -10 dB floor
        # does not bite here.
        x = speechlike(17)
        assert seg_snr(x, -x) == pytest.approx(10.0 * np.log10(0.25), abs=1e-9)

    def test_floor_clamp(self):
        x = speechlike(18)
        rng = np.random.default_rng(19)
        assert seg_snr(x, x + 100.0 * rng.normal(size=x.shape)) == -10.0

    def test_known_per_frame_snr(self):
        rng = np.random.default_rng(20)
        frame = 320
        x = rng.normal(size=frame * 10)
        noise = rng.normal(size=frame * 10)
        # Scale noise per frame for an exact 12 dB in each frame.
        xf = x.reshape(-1, frame)
        nf = noise.reshape(-1, frame)
        scale = np.sqrt((xf**2).sum(axis=1) / (nf**2).sum(axis=1) / 10 ** 1.2)
        y = (xf + scale[:, None] * nf).reshape(-1)
        assert seg_snr(x, y) == pytest.approx(12.0, abs=0.1)


class TestEvaluateManifest:
    def test_empty_manifest(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text("")
        report = evaluate_manifest(path, enhance_fn=None)
        assert report.pair_count == 0
        assert report.rows == []

    def _make_manifest(self, tmp_path, n=4):
        from sdd.wavio import write_wav
        import json

        records = []
        for i in range(n):
            target = speechlike(30 + i)
            rng = np.random.default_rng(60 + i)
            snr = [-3.0, 0.0, 3.0, 6.0][i % 4]
            noise = rng.normal(size=target.shape)
            noise *= np.sqrt((target**2).mean() / (noise**2).mean() / 10 ** (snr / 10))
            noisy = target + noise
            tp = tmp_path / f"t{i}.wav"
            np_ = tmp_path / f"n{i}.wav"
            rp = tmp_path / f"r{i}.wav"
            write_wav(tp, target)
            write_wav(np_, noisy)
            write_wav(rp, target)
            records.append({"id": f"p{i}", "noisy": str(np_), "target": str(tp),
                            "reverb": str(rp), "snr_db": snr})
        path = tmp_path / "manifest.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        return path

    def test_passthrough_equals_noisy_row(self, tmp_path):
        path = self._make_manifest(tmp_path)
        report = evaluate_manifest(path, enhance_fn=lambda sig, depth: sig, depths=(1,))
        rows = {(r.system, r.metric): r for r in report.rows}
        for metric in ("estoi", "si_snr", "seg_snr"):
            noisy = rows[("noisy", metric)]
            stage = rows[("stage1", metric)]
            assert noisy.per_bucket.keys() == stage.per_bucket.keys()
            for b in noisy.per_bucket:
                assert noisy.per_bucket[b] == pytest.approx(stage.per_bucket[b], abs=1e-9)

    def test_averages_are_weighted_means(self, tmp_path):
        path = self._make_manifest(tmp_path, n=4)
        report = evaluate_manifest(path, enhance_fn=None)
        for row in report.rows:
            total = sum(report.counts[b] for b in row.per_bucket)
            weighted = sum(row.per_bucket[b] * report.counts[b] for b in row.per_bucket)
            assert row.average == pytest.approx(weighted / total, abs=1e-9)

    def test_report_render(self, tmp_path):
        path = self._make_manifest(tmp_path, n=2)
        report = evaluate_manifest(path, enhance_fn=None)
        text = report.to_text()
        assert "noisy" in text and "estoi" in text and "pairs: 2" in text
        tsv = report.to_tsv()
        assert tsv.startswith("system\tmetric")

    def test_bucket_assignment(self):
        assert nearest_bucket(-2.4) == -3.0
        assert nearest_bucket(4.4) == 3.0
        assert nearest_bucket(7.6) == 9.0

    def test_worker_fanout_matches_sequential(self, tmp_path):
        path = self._make_manifest(tmp_path, n=4)
        seq = evaluate_manifest(path, enhance_fn=lambda s, d: 0.9 * s, depths=(1,))
        par = evaluate_manifest(path, enhance_fn=lambda s, d: 0.9 * s, depths=(1,),
                                workers=4)
        assert seq.to_tsv() == par.to_tsv()
