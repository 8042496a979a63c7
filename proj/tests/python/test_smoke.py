import math
import os
import pathlib
import sys

import numpy as np
import pytest

import sslfuse

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "oracles"))
import derived_values as oracle  # noqa: E402

FIXTURES = pathlib.Path(os.environ.get("SSLFUSE_FIXTURE_DIR", pathlib.Path(__file__).resolve().parents[1] / "fixtures"))


def test_noam_peak():
    assert sslfuse.lr_at(25000, 1.0, 256, 25000) == pytest.approx(oracle.VALUES["lr_d256_w25000_peak"], rel=1e-14)
    with pytest.raises(sslfuse.UsageError):
        sslfuse.lr_at(0, 1.0, 256, 25000)


def test_param_deltas():
    none = sslfuse.param_count("none")["total"]
    assert sslfuse.param_count("sfa")["total"] - none == oracle.VALUES["sfa_delta"]
    assert sslfuse.param_count("ca")["total"] - none == oracle.VALUES["ca_delta"]


def test_fbank_shape_and_tone():
    t = np.arange(16000) / 16000.0
    feats = sslfuse.fbank(0.5 * np.sin(2 * math.pi * 440.0 * t))
    assert feats.shape == (oracle.VALUES["fbank_frames_1s"], 80)
    assert int(np.argmax(feats[feats.shape[0] // 2])) == oracle.VALUES["nearest_mel_filter_440"]
    assert sslfuse.mel_centers()[15] == pytest.approx(oracle.mel_centers()[15], rel=1e-12)


def test_ssf1_round_trip_and_golden(tmp_path):
    values = np.random.default_rng(0).standard_normal((5, 7)).astype(np.float32)
    sslfuse.write_features(tmp_path / "x.ssf", values)
    assert np.array_equal(sslfuse.read_features(tmp_path / "x.ssf"), values)
    golden = sslfuse.read_features(FIXTURES / "sample_2x3.ssf")
    assert golden.shape == (2, 3)
    assert golden[0, 0] == 1.5
    with pytest.raises(sslfuse.FormatError):
        sslfuse.read_features(FIXTURES / "truncated_2x3.ssf")


def test_fuse_sfa_gather_add():
    u = np.arange(8.0).reshape(4, 2)
    v = 10.0 * np.arange(10.0).reshape(5, 2)
    got = sslfuse.fuse_sfa(u, v, 2)
    for i in range(4):
        j = min(5, 2 * (i + 1)) - 1
        assert np.array_equal(got[i], u[i] + v[j])


def test_ctc_against_enumeration():
    assert sslfuse.ctc_loss(np.log(np.full((2, 2), 0.5)), [1]) == pytest.approx(-math.log(0.75), abs=1e-12)
    rng = np.random.default_rng(3)
    probs = rng.uniform(0.05, 1.0, (4, 3))
    probs /= probs.sum(axis=1, keepdims=True)
    assert sslfuse.ctc_loss(np.log(probs), [1, 2]) == pytest.approx(oracle.ctc_bruteforce(probs.tolist(), [1, 2]), rel=1e-10)
    with pytest.raises(sslfuse.LengthError):
        sslfuse.ctc_loss(np.log(probs[:1]), [1, 1])


def test_wer_and_vocab():
    assert sslfuse.wer("the cat sat", "the cat sat")["wer"] == 0.0
    assert sslfuse.wer("the cat sat", "")["wer"] == 1.0
    ids = sslfuse.encode_text("It's  A")
    assert ids == [11, 22, 29, 21, 2, 3]
    assert sslfuse.decode_ids(ids) == "it's a"


def test_cli_roundtrip(tmp_path):
    manifest = sslfuse.gen_toy_corpus(tmp_path / "toy", seed=7, utterances=3)
    code, out, err = sslfuse.cli(["features", "validate", "--manifest", str(manifest), "--ssl-source", "hubert-base"])
    assert code == 0, err
    code, out, _ = sslfuse.cli(["params", "--mode", "sfa"])
    assert code == 0 and "total\t" in out
    code, _, err = sslfuse.cli(["bogus"])
    assert code == 1 and "bogus" in err


def test_frozen_values_match_oracle():
    frozen = {}
    for line in (FIXTURES / "derived_values.tsv").read_text().splitlines():
        key, value = line.split("\t")
        frozen[key] = float(value)
    assert frozen.keys() == oracle.VALUES.keys()
    for key, value in oracle.VALUES.items():
        assert frozen[key] == pytest.approx(value, rel=1e-15), key
