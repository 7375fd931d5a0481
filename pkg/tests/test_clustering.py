"""Vertex clustering, face assignment, and the padded batch layout."""

import numpy as np
import pytest
import torch

from conftest import square_pair
from meshseg.clustering import (
    ClusterAssignment,
    assign_faces,
    build_batch,
    cluster_faces,
    flatten_batch,
    kmeans,
    kmeans_pp_centers,
)


def blob_points(seed=0, per_blob=20):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]])
    points = np.concatenate(
        [c + 0.1 * rng.normal(size=(per_blob, 3)) for c in centers]
    )
    truth = np.repeat(np.arange(3), per_blob)
    return points, truth


class TestKMeans:
    def test_shapes_and_ranges(self):
        points, _ = blob_points()
        labels, centers, history = kmeans(points, 3, np.random.default_rng(0))
        assert labels.shape == (60,)
        assert centers.shape == (3, 3)
        assert labels.min() >= 0 and labels.max() < 3
        assert len(history) >= 1

    def test_recovers_well_separated_blobs(self):
        points, truth = blob_points(seed=1)
        labels, _, _ = kmeans(points, 3, np.random.default_rng(1))
        # same partition up to a relabeling
        for blob in range(3):
            chunk = labels[truth == blob]
            assert (chunk == chunk[0]).all()
        assert len(set(labels[::20])) == 3

    def test_distortion_never_increases(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            points = rng.random((50, 3))
            _, _, history = kmeans(points, 7, np.random.default_rng(seed + 100))
            assert all(a >= b - 1e-9 for a, b in zip(history, history[1:]))

    def test_single_cluster_collapses_to_the_mean(self):
        points = np.random.default_rng(2).random((12, 3))
        labels, centers, history = kmeans(points, 1, np.random.default_rng(2))
        assert (labels == 0).all()
        assert np.allclose(centers[0], points.mean(axis=0), atol=1e-12)
        want = ((points - points.mean(axis=0)) ** 2).sum()
        assert abs(history[-1] - want) < 1e-9

    def test_deterministic_for_seed(self):
        points = np.random.default_rng(3).random((40, 3))
        a = kmeans(points, 5, np.random.default_rng(11))
        b = kmeans(points, 5, np.random.default_rng(11))
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])
        assert a[2] == b[2]

    def test_more_clusters_than_points_rejected(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((2, 3)), 3, np.random.default_rng(0))

    def test_seeding_picks_distinct_points_when_spread_out(self):
        points, _ = blob_points(seed=4)
        centers = kmeans_pp_centers(points, 3, np.random.default_rng(4))
        d = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
        assert d[np.triu_indices(3, 1)].min() > 1.0


class TestAssignFaces:
    def test_majority_wins(self):
        vertex_cluster = np.array([0, 0, 1, 1, 1, 2])
        faces = np.array([[0, 1, 2], [2, 3, 4], [0, 3, 5]])
        got = assign_faces(vertex_cluster, faces, np.random.default_rng(0))
        assert got[0] == 0  # two corners in 0
        assert got[1] == 1  # all corners in 1
        assert got[2] in (0, 1, 2)  # three-way tie

    def test_two_of_three_beats_the_odd_corner(self):
        vertex_cluster = np.array([1, 1, 2])
        faces = np.array([[0, 1, 2]])
        got = assign_faces(vertex_cluster, faces, np.random.default_rng(0))
        assert got[0] == 1

    def test_ties_resolve_deterministically_for_a_seed(self):
        vertex_cluster = np.array([0, 1, 2, 3, 4, 5])
        faces = np.array([[0, 1, 2], [3, 4, 5], [0, 2, 4]])
        a = assign_faces(vertex_cluster, faces, np.random.default_rng(7))
        b = assign_faces(vertex_cluster, faces, np.random.default_rng(7))
        assert np.array_equal(a, b)
        for face_index, face in enumerate(faces):
            assert a[face_index] in vertex_cluster[face]

    def test_cluster_faces_counts_cover_every_face(self):
        mesh = square_pair()
        assignment = cluster_faces(mesh, 8, np.random.default_rng(0))
        # only 4 vertices, so the cluster count is clamped
        assert assignment.num_clusters <= 4
        assert assignment.face_counts().sum() == mesh.face_count
        assert assignment.face_cluster.shape == (2,)
        assert assignment.vertex_cluster.shape == (4,)


def arange_features(count, width=4):
    return torch.arange(count * width, dtype=torch.float64).reshape(count, width)


class TestBatchLayout:
    def test_faces_pack_in_ascending_order_after_the_shared_token(self):
        features = arange_features(6)
        face_cluster = np.array([0, 0, 1, 0, 1, 1])
        token = torch.full((4,), -1.0, dtype=torch.float64)
        batch = build_batch(features, face_cluster, token, num_clusters=2)
        assert batch.tensor.shape == (2, 4, 4)
        assert torch.equal(batch.tensor[0, 0], token)
        assert torch.equal(batch.tensor[1, 0], token)
        assert torch.equal(batch.tensor[0, 1:], features[[0, 1, 3]])
        assert torch.equal(batch.tensor[1, 1:], features[[2, 4, 5]])
        assert batch.mask.all()

    def test_shorter_clusters_are_padded_with_zeros(self):
        features = arange_features(4)
        face_cluster = np.array([0, 0, 0, 1])
        token = torch.zeros(4, dtype=torch.float64)
        batch = build_batch(features, face_cluster, token, num_clusters=2)
        assert batch.tensor.shape == (2, 4, 4)
        assert np.array_equal(batch.mask.numpy(),
                              [[True, True, True, True],
                               [True, True, False, False]])
        assert torch.equal(batch.tensor[1, 2:], torch.zeros(2, 4, dtype=torch.float64))

    def test_empty_cluster_keeps_only_its_token(self):
        features = arange_features(2)
        face_cluster = np.array([0, 0])
        token = torch.ones(4, dtype=torch.float64)
        batch = build_batch(features, face_cluster, token, num_clusters=3)
        assert batch.tensor.shape == (3, 3, 4)
        assert torch.equal(batch.tensor[2, 0], token)
        assert np.array_equal(batch.mask[2].numpy(), [True, False, False])

    def test_flatten_inverts_the_packing(self):
        features = arange_features(7)
        face_cluster = np.array([2, 0, 1, 1, 2, 0, 2])
        token = torch.zeros(4, dtype=torch.float64)
        batch = build_batch(features, face_cluster, token, num_clusters=3)
        assert torch.equal(flatten_batch(batch.tensor, batch), features)

    def test_flatten_reads_the_tensor_it_is_given(self):
        features = arange_features(3)
        face_cluster = np.array([0, 1, 0])
        token = torch.zeros(4, dtype=torch.float64)
        batch = build_batch(features, face_cluster, token, num_clusters=2)
        doubled = flatten_batch(batch.tensor * 2.0, batch)
        assert torch.equal(doubled, features * 2.0)

    def test_gradients_flow_through_the_packing(self):
        features = arange_features(4).requires_grad_(True)
        face_cluster = np.array([0, 1, 1, 0])
        token = torch.zeros(4, dtype=torch.float64, requires_grad=True)
        batch = build_batch(features, face_cluster, token, num_clusters=2)
        loss = flatten_batch(batch.tensor, batch).pow(2).sum()
        grads = torch.autograd.grad(loss, [features, token])
        assert torch.equal(grads[0], 2.0 * features.detach())
        assert torch.equal(grads[1], torch.zeros(4, dtype=torch.float64))

    def test_bad_arguments_rejected(self):
        features = arange_features(3)
        token = torch.zeros(4, dtype=torch.float64)
        with pytest.raises(ValueError):
            build_batch(features, np.array([0, 1]), token, 2)  # length mismatch
        with pytest.raises(ValueError):
            build_batch(features, np.array([0, 1, 2]), token, 2)  # out of range
        with pytest.raises(ValueError):
            build_batch(features, np.array([0, 0, 1]), torch.zeros(3, dtype=torch.float64), 2)
