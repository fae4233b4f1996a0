"""Tests for pooling, assembly, and projection of frame features."""

import numpy as np
import pytest

from videoground.errors import InvalidInputError, ShapeError
from videoground.features import (
    FrameFeatureTensor,
    Projector,
    assemble_video_feature,
    load_video_feature,
    project_features,
    sample_frame_indices,
    save_video_feature,
    spatial_pool,
    split_video_feature,
    temporal_pool,
)


def make_tensor(t, n, d, rng=None, grid=None):
    if rng is None:
        data = np.zeros((t, n, d), dtype=np.float64)
    else:
        data = rng.standard_normal((t, n, d))
    if grid is None:
        grid = (1, n)
    return FrameFeatureTensor(data, grid_h=grid[0], grid_w=grid[1], patch_size=14)


def test_temporal_pool_two_frame_midpoint():
    data = np.stack([np.zeros((3, 2)), np.full((3, 2), 2.0)])
    feats = FrameFeatureTensor(data, grid_h=1, grid_w=3, patch_size=14)
    pooled = temporal_pool(feats)
    assert pooled.data.shape == (3, 2)
    assert np.array_equal(pooled.data, np.ones((3, 2)))


def test_spatial_pool_small_example():
    data = np.zeros((2, 3, 2))
    data[:, 1, :] = 3.0
    data[:, 2, :] = 3.0
    feats = FrameFeatureTensor(data, grid_h=1, grid_w=3, patch_size=14)
    pooled = spatial_pool(feats)
    assert pooled.data.shape == (2, 2)
    assert np.allclose(pooled.data, 2.0)


def test_pooling_matches_loop_oracle():
    # Independent recomputation with explicit python loops.
    rng = np.random.default_rng(11)
    feats = make_tensor(4, 6, 3, rng, grid=(2, 3))
    tp = temporal_pool(feats).data
    sp = spatial_pool(feats).data
    for n in range(6):
        for d in range(3):
            acc = sum(feats.data[t, n, d] for t in range(4)) / 4
            assert abs(tp[n, d] - acc) <= 1e-12
    for t in range(4):
        for d in range(3):
            acc = sum(feats.data[t, n, d] for n in range(6)) / 6
            assert abs(sp[t, d] - acc) <= 1e-12


def test_temporal_pool_frame_permutation_invariant():
    rng = np.random.default_rng(3)
    feats = make_tensor(5, 4, 3, rng, grid=(2, 2))
    perm = rng.permutation(5)
    shuffled = FrameFeatureTensor(feats.data[perm], grid_h=2, grid_w=2, patch_size=14)
    assert np.allclose(temporal_pool(feats).data,
                       temporal_pool(shuffled).data, atol=1e-12)


def test_spatial_pool_token_permutation_invariant():
    rng = np.random.default_rng(4)
    feats = make_tensor(5, 4, 3, rng, grid=(2, 2))
    perm = rng.permutation(4)
    shuffled = FrameFeatureTensor(feats.data[:, perm], grid_h=2, grid_w=2,
                                  patch_size=14)
    assert np.allclose(spatial_pool(feats).data,
                       spatial_pool(shuffled).data, atol=1e-12)


def test_pool_means_agree_on_global_mean():
    rng = np.random.default_rng(5)
    feats = make_tensor(6, 8, 4, rng, grid=(2, 4))
    global_mean = feats.data.mean(axis=(0, 1))
    assert np.allclose(temporal_pool(feats).data.mean(axis=0), global_mean,
                       atol=1e-10)
    assert np.allclose(spatial_pool(feats).data.mean(axis=0), global_mean,
                       atol=1e-10)


def test_assemble_orders_temporal_then_spatial():
    rng = np.random.default_rng(6)
    feats = make_tensor(3, 4, 2, rng, grid=(2, 2))
    tp = temporal_pool(feats)
    sp = spatial_pool(feats)
    video = assemble_video_feature(tp, sp)
    assert video.data.shape == (4 + 3, 2)
    assert np.array_equal(video.data[:4], tp.data)
    assert np.array_equal(video.data[4:], sp.data)
    assert video.num_temporal == 4
    assert video.num_spatial == 3


def test_split_roundtrip():
    rng = np.random.default_rng(7)
    feats = make_tensor(3, 4, 2, rng, grid=(2, 2))
    video = assemble_video_feature(temporal_pool(feats), spatial_pool(feats))
    tp, sp = split_video_feature(video)
    assert np.array_equal(tp.data, temporal_pool(feats).data)
    assert np.array_equal(sp.data, spatial_pool(feats).data)


def test_assemble_rejects_channel_mismatch():
    a = temporal_pool(make_tensor(2, 2, 3))
    b = spatial_pool(make_tensor(2, 2, 4))
    with pytest.raises(ShapeError):
        assemble_video_feature(a, b)


def test_frame_features_reject_non_finite():
    data = np.zeros((2, 2, 2))
    data[0, 0, 0] = np.nan
    with pytest.raises(InvalidInputError):
        FrameFeatureTensor(data, grid_h=1, grid_w=2, patch_size=14)


def test_frame_features_reject_grid_mismatch():
    with pytest.raises(ShapeError):
        FrameFeatureTensor(np.zeros((2, 5, 2)), grid_h=2, grid_w=3,
                           patch_size=14)


def test_identity_projection_is_exact():
    rng = np.random.default_rng(8)
    feats = make_tensor(3, 4, 6, rng, grid=(2, 2))
    video = assemble_video_feature(temporal_pool(feats), spatial_pool(feats))
    projected = project_features(video, Projector.identity(6))
    assert np.array_equal(projected.data, video.data)


def test_projection_matches_manual_two_layer():
    rng = np.random.default_rng(9)
    feats = make_tensor(3, 4, 5, rng, grid=(2, 2))
    video = assemble_video_feature(temporal_pool(feats), spatial_pool(feats))
    proj = Projector.random(5, 7, hidden=6, seed=2)
    out = project_features(video, proj).data

    h = video.data
    (w0, b0), (w1, b1) = proj.layers
    expected = np.maximum(h @ w0 + b0, 0.0) @ w1 + b1
    assert np.allclose(out, expected, atol=1e-9)


def test_projection_relu_between_layers_only():
    # Negative outputs must survive the final layer untouched.
    w0 = np.eye(2)
    b0 = np.zeros(2)
    w1 = -np.eye(2)
    b1 = np.zeros(2)
    proj = Projector(layers=((w0, b0), (w1, b1)))
    feats = FrameFeatureTensor(np.ones((1, 2, 2)), grid_h=1, grid_w=2,
                               patch_size=14)
    video = assemble_video_feature(temporal_pool(feats), spatial_pool(feats))
    out = project_features(video, proj)
    assert (out.data < 0).all()


def test_projection_rejects_width_mismatch():
    feats = make_tensor(2, 2, 3)
    video = assemble_video_feature(temporal_pool(feats), spatial_pool(feats))
    with pytest.raises(ShapeError):
        project_features(video, Projector.identity(4))


def test_projector_random_is_seed_deterministic():
    a = Projector.random(4, 5, hidden=6, seed=3)
    b = Projector.random(4, 5, hidden=6, seed=3)
    c = Projector.random(4, 5, hidden=6, seed=4)
    for (wa, ba), (wb, bb) in zip(a.layers, b.layers):
        assert np.array_equal(wa, wb)
        assert np.array_equal(ba, bb)
    assert not np.array_equal(a.layers[0][0], c.layers[0][0])


def test_projector_save_load_roundtrip(tmp_path):
    proj = Projector.random(4, 5, hidden=6, seed=1)
    path = tmp_path / "proj.bin"
    proj.save(path)
    loaded = Projector.load(path)
    assert loaded.in_width == 4
    assert loaded.out_width == 5
    # Storage is 32-bit, so expect float32 resolution, not exactness.
    for (w, b), (lw, lb) in zip(proj.layers, loaded.layers):
        assert np.allclose(w, lw, atol=1e-6)
        assert np.allclose(b, lb, atol=1e-6)


def test_video_feature_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(10)
    feats = make_tensor(3, 4, 2, rng, grid=(2, 2))
    video = assemble_video_feature(temporal_pool(feats), spatial_pool(feats))
    path = tmp_path / "feature.bin"
    save_video_feature(path, video)
    loaded = load_video_feature(path)
    assert loaded.num_temporal == video.num_temporal
    assert loaded.num_spatial == video.num_spatial
    assert np.allclose(loaded.data, video.data, atol=1e-6)


def test_sample_frame_indices_spacing():
    idx = sample_frame_indices(1000, count=100)
    assert len(idx) == 100
    assert idx[0] == 0
    assert idx[-1] == 999
    assert all(b > a for a, b in zip(idx, idx[1:]))


def test_sample_frame_indices_short_video_repeats():
    idx = sample_frame_indices(3, count=7)
    assert len(idx) == 7
    assert set(idx) == {0, 1, 2}
    assert all(b >= a for a, b in zip(idx, idx[1:]))


def test_sample_frame_indices_single():
    assert sample_frame_indices(50, count=1) == [0]


def test_sample_frame_indices_rejects_bad_args():
    with pytest.raises(InvalidInputError):
        sample_frame_indices(0, count=4)
    with pytest.raises(InvalidInputError):
        sample_frame_indices(10, count=0)
