import itertools

import numpy as np
import pytest
from PIL import Image

from vidinstruct.errors import (ConfigError, DecodeError, MissingPathError,
                                MixedDimensionsError, ShapeError,
                                ValidationError)
from vidinstruct.keyframes import (FrameBatch, frame_signature, ingest_frames,
                                   save_keyframes, select_keyframes,
                                   signature_distance)


def solid(value, h=8, w=8):
    return np.full((h, w, 3), value, dtype=np.uint8)


def batch_of(values, video_id="vid"):
    frames = np.stack([solid(v) for v in values])
    return FrameBatch(video_id=video_id, frames=frames,
                      timestamps=np.arange(len(values), dtype=np.float64))


def three_scene_batch():
    return batch_of([0] * 30 + [128] * 30 + [255] * 30)


def write_frames(dirpath, count, value=100, size=8):
    dirpath.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        Image.fromarray(solid(value, size, size)).save(
            dirpath / f"frame_{i:06d}.png")


class TestIngest:
    def test_directory_of_pngs(self, tmp_path):
        write_frames(tmp_path / "v", 10)
        batch = ingest_frames(tmp_path / "v")
        assert len(batch) == 10
        assert batch.frames.shape == (10, 8, 8, 3)
        np.testing.assert_array_equal(batch.timestamps, np.arange(10.0))

    def test_stride_two(self, tmp_path):
        write_frames(tmp_path / "v", 10)
        batch = ingest_frames(tmp_path / "v", stride=2)
        assert len(batch) == 5
        np.testing.assert_array_equal(batch.timestamps, [0.0, 2.0, 4.0, 6.0, 8.0])

    def test_missing_path(self, tmp_path):
        with pytest.raises(MissingPathError):
            ingest_frames(tmp_path / "nope")

    def test_mixed_dimensions(self, tmp_path):
        d = tmp_path / "v"
        write_frames(d, 3)
        Image.fromarray(solid(0, 16, 16)).save(d / "frame_000099.png")
        with pytest.raises(MixedDimensionsError):
            ingest_frames(d)

    def test_undecodable_file(self, tmp_path):
        d = tmp_path / "v"
        d.mkdir()
        (d / "frame_000000.png").write_bytes(b"not a png")
        with pytest.raises(DecodeError):
            ingest_frames(d)

    def test_video_without_decoder_template(self, tmp_path):
        f = tmp_path / "clip.mp4"
        f.write_bytes(b"\x00")
        with pytest.raises(ConfigError):
            ingest_frames(f)

    def test_video_via_decoder_template(self, tmp_path):
        # Stand-in decoder: a shell copy of prepared frames into {outdir}.
        src = tmp_path / "prepared"
        write_frames(src, 4)
        clip = tmp_path / "clip.mp4"
        clip.write_bytes(b"\x00")
        template = f"cp -r {src}/. {{outdir}}"
        batch = ingest_frames(clip, decoder_template=template)
        assert len(batch) == 4

    def test_timestamps_with_fps(self, tmp_path):
        write_frames(tmp_path / "v", 4)
        batch = ingest_frames(tmp_path / "v", fps=2.0)
        np.testing.assert_array_equal(batch.timestamps, [0.0, 0.5, 1.0, 1.5])


class TestSignatures:
    def test_all_black_mass_in_first_bin(self):
        sig = frame_signature(solid(0))
        per_channel = sig.bins.reshape(3, 32)
        np.testing.assert_array_equal(per_channel[:, 0], [1.0, 1.0, 1.0])
        assert per_channel[:, 1:].sum() == 0

    def test_all_white_mass_in_last_bin(self):
        sig = frame_signature(solid(255))
        per_channel = sig.bins.reshape(3, 32)
        np.testing.assert_array_equal(per_channel[:, -1], [1.0, 1.0, 1.0])

    def test_half_black_half_white_direct_count(self):
        frame = solid(0)
        frame[4:, :, :] = 255
        sig = frame_signature(frame)
        per_channel = sig.bins.reshape(3, 32)
        # direct count: 32 of 64 pixels per channel in each extreme bin
        np.testing.assert_array_equal(per_channel[:, 0], [0.5] * 3)
        np.testing.assert_array_equal(per_channel[:, -1], [0.5] * 3)
        assert per_channel[:, 1:-1].sum() == 0

    def test_channel_normalization(self, rng):
        frame = rng.integers(0, 256, size=(12, 9, 3)).astype(np.uint8)
        sig = frame_signature(frame)
        np.testing.assert_allclose(sig.bins.reshape(3, 32).sum(axis=1), 1.0)

    def test_distance_identity_and_symmetry(self, rng):
        a = frame_signature(rng.integers(0, 256, (8, 8, 3)).astype(np.uint8))
        b = frame_signature(rng.integers(0, 256, (8, 8, 3)).astype(np.uint8))
        assert signature_distance(a, a) == 0.0
        assert signature_distance(a, b) == signature_distance(b, a)
        assert signature_distance(a, b) >= 0.0

    def test_black_vs_white_distance(self):
        # hand L1: each channel moves all mass bin 0 -> bin 31, distance 2 x 3
        d = signature_distance(frame_signature(solid(0)), frame_signature(solid(255)))
        assert d == pytest.approx(6.0)

    def test_bin_count_mismatch(self):
        with pytest.raises(ShapeError):
            signature_distance(frame_signature(solid(0), bins=32),
                               frame_signature(solid(0), bins=16))


def brute_force_best_dispersion(batch, k):
    """Max over all k-subsets of the min pairwise signature distance."""
    sigs = [frame_signature(f) for f in batch.frames]
    n = len(sigs)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = signature_distance(sigs[i], sigs[j])
    best = -1.0
    for combo in itertools.combinations(range(n), k):
        score = min(dist[a][b] for a, b in itertools.combinations(combo, 2))
        best = max(best, score)
    return best, dist


class TestSelection:
    def test_constant_video_collapses_to_one_frame(self):
        ks = select_keyframes(batch_of([50] * 12), k=3)
        assert ks.indices == (0,)

    def test_three_scene_video_covers_scenes(self):
        batch = three_scene_batch()
        ks = select_keyframes(batch, k=3)
        scenes = sorted(i // 30 for i in ks.indices)
        assert scenes == [0, 1, 2]

    def test_matches_brute_force_dispersion(self):
        # small version of the scene fixture keeps the oracle cheap
        batch = batch_of([0] * 4 + [128] * 4 + [255] * 4)
        best, dist = brute_force_best_dispersion(batch, 3)
        ks = select_keyframes(batch, k=3)
        chosen = list(ks.indices)
        achieved = min(dist[a][b] for a, b in itertools.combinations(chosen, 2))
        assert achieved == pytest.approx(best)

    def test_k_at_least_frame_count_returns_all_distinct(self):
        batch = batch_of([0, 60, 120, 200])
        ks = select_keyframes(batch, k=10)
        assert ks.indices == (0, 1, 2, 3)

    def test_k_zero_rejected(self):
        with pytest.raises(ValidationError):
            select_keyframes(batch_of([0, 1]), k=0)

    def test_indices_strictly_increasing_unique(self, rng):
        values = rng.integers(0, 256, size=20).tolist()
        ks = select_keyframes(batch_of(values), k=7)
        assert list(ks.indices) == sorted(set(ks.indices))

    def test_deterministic(self, rng):
        values = rng.integers(0, 256, size=15).tolist()
        a = select_keyframes(batch_of(values), k=5)
        b = select_keyframes(batch_of(values), k=5)
        assert a.indices == b.indices

    def test_greedy_prefix_monotonicity(self, rng):
        values = rng.integers(0, 256, size=18).tolist()
        batch = batch_of(values)
        for k in range(1, 8):
            smaller = set(select_keyframes(batch, k=k).indices)
            larger = set(select_keyframes(batch, k=k + 1).indices)
            assert smaller <= larger

    def test_scene_block_coverage_property(self):
        for values, m in [([10] * 5 + [200] * 5, 2),
                          ([0] * 3 + [90] * 3 + [170] * 3 + [250] * 3, 4)]:
            batch = batch_of(values)
            ks = select_keyframes(batch, k=m)
            block = len(values) // m
            assert sorted(i // block for i in ks.indices) == list(range(m))


class TestManifest:
    def test_manifest_round_trip(self, tmp_path):
        import json

        ks = select_keyframes(three_scene_batch(), k=3)
        manifest_path = save_keyframes(ks, tmp_path / "out")
        manifest = json.loads(manifest_path.read_text())
        assert manifest["video_id"] == "vid"
        assert manifest["indices"] == list(ks.indices)
        for name in manifest["files"]:
            assert (tmp_path / "out" / name).exists()
