import json

import numpy as np
import pytest

import adstory


def test_version():
    code, out, _ = adstory.run_cli(["--version"])
    assert code == 0
    assert adstory.__version__ in out


def test_top_k_and_runs():
    assert adstory.top_k_peaks([0.1, 0.9, 0.9, 0.3], 3) == [1, 2, 3]
    assert adstory.top_k_peaks([0.5], 3) == [0, 0, 0]
    assert adstory.longest_run_centers([0, 1, 1, 1, 0, 2, 0], 1) == [2]
    assert adstory.heuristic_baseline(40, 3) == [5, 15, 25]
    assert adstory.heuristic_baseline(12, 3) == [5, 11, 11]
    with pytest.raises(adstory.AdstoryError):
        adstory.heuristic_baseline(40, 2)


def test_losses():
    assert adstory.sigmoid_ce(0.0, 1.0) == pytest.approx(np.log(2.0))
    assert adstory.softmax_ce([0.0, 0.0, 0.0], 1) == pytest.approx(np.log(3.0))
    # large logits stay finite
    assert np.isfinite(adstory.sigmoid_ce(800.0, 0.0))


def test_average_precision():
    ap = adstory.average_precision([0.9, 0.8, 0.7], [True, False, True], ["a", "b", "c"])
    assert ap == pytest.approx((6 * 1.0 + 5 * (2 / 3)) / 11)


def test_flow_of_a_shifted_ramp():
    x = np.arange(16, dtype=np.float64)
    prev = np.tile(x * 8, (16, 1)).astype(np.uint8)
    nxt = np.tile((x - 1) * 8, (16, 1)).clip(0, 255).astype(np.uint8)
    u, v = adstory.dense_flow(prev, nxt)
    assert u.shape == (16, 16)
    assert np.mean(u[4:12, 4:12]) > 0.5
    assert abs(np.mean(v[4:12, 4:12])) < 0.1
    mag = adstory.flow_magnitude(u, v)
    assert mag == pytest.approx(np.mean(np.hypot(u, v)))


def test_extract_signals_from_arrays():
    frames = np.zeros((8, 16, 16), dtype=np.uint8)
    frames[4:] = 200
    sr = 400
    samples = np.zeros(2 * sr)
    samples[sr + 10] = -0.8
    track = adstory.extract_signals(frames, 4, samples, sr)
    assert track["fps"] == (4, 1)
    assert track["shots"].shape == (8, 5)
    assert track["shots"][4].all()
    assert not track["shots"][:4].any()
    assert track["audio"][4] == pytest.approx(0.8)
    assert adstory.predict(track, "audio", 1) == [1]
    assert adstory.predict(track, "shots", 1) == [1]
    with pytest.raises(adstory.AdstoryError):
        adstory.predict(track, "nope", 1)


def test_synthetic_corpus_round_trip(tmp_path):
    truth = adstory.synthesize(tmp_path, "climax", 5, 5)
    assert len(truth["videos"]) == 5
    code, _, err = adstory.run_cli(["--quiet", "extract", "--data-dir", str(tmp_path)])
    assert code == 0, err
    signals = adstory.read_signals(tmp_path / "signals.jsonl")
    assert sorted(signals) == sorted(v["video_id"] for v in truth["videos"])
    preds = {vid: adstory.predict(t, "audio", 3) for vid, t in signals.items()}
    assert adstory.climax_recall(preds, tmp_path / "annotations.jsonl", 1, 0) == 1.0

    out = tmp_path / "p.jsonl"
    code, _, _ = adstory.run_cli(["--quiet", "predict", "--method", "audio", "--k", "3",
                                  "--data-dir", str(tmp_path), "--out", str(out)])
    assert code == 0
    for line in out.read_text().splitlines():
        row = json.loads(line)
        assert row["timestamps_sec"] == preds[row["video_id"]]


def test_input_errors(tmp_path):
    code, _, err = adstory.run_cli(["predict", "--method", "audio", "--signals",
                                    str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "p")])
    assert code == 2
    assert "missing.jsonl" in err
    with pytest.raises(adstory.AdstoryError):
        adstory.read_signals(tmp_path / "missing.jsonl")
