"""Vertex clustering and the padded cluster-batch layout.

Vertices are grouped by k-means (k-means++ seeding, Lloyd refinement) and
each face inherits the majority cluster of its three vertices, with three-way
ties broken by a seeded uniform draw. For the transformer stack, per-face
feature rows are arranged into a (K, S + 1, W) tensor: slot 0 of every
cluster sequence holds a shared learnable summary token, faces follow in
ascending index order, and shorter clusters are zero-padded under a boolean
mask.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .mesh_io import Mesh

KMEANS_MAX_ITER = 100


def kmeans_pp_centers(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first center uniform, then squared-distance sampling."""
    n = len(points)
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = points[first]
    closest = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total > 0.0:
            probs = closest / total
            choice = int(rng.choice(n, p=probs))
        else:
            choice = int(rng.integers(n))  # all remaining points coincide
        centers[i] = points[choice]
        d = ((points - centers[i]) ** 2).sum(axis=1)
        closest = np.minimum(closest, d)
    return centers


def kmeans(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int = KMEANS_MAX_ITER,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations from a k-means++ start.

    Returns (labels, centers, distortion_history), where the history holds
    the sum of squared point-to-center distances after each assignment.
    Clusters that come up empty are repaired by moving their center onto the
    point currently farthest from its assigned center.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be 2-D, got shape {points.shape}")
    n = len(points)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < k:
        raise ValueError(f"cannot place {k} clusters on {n} points")
    centers = kmeans_pp_centers(points, k, rng)
    history: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        assigned = d2[np.arange(n), new_labels]
        for cluster in range(k):  # repair empties, lowest cluster index first
            if not (new_labels == cluster).any():
                farthest = int(assigned.argmax())
                centers[cluster] = points[farthest]
                new_labels[farthest] = cluster
                assigned[farthest] = 0.0
        history.append(float(assigned.sum()))
        if len(history) > 1 and (new_labels == labels).all():
            labels = new_labels
            break
        labels = new_labels
        for cluster in range(k):
            members = points[labels == cluster]
            if len(members):
                centers[cluster] = members.mean(axis=0)
    return labels, centers, history


def assign_faces(
    vertex_cluster: np.ndarray,
    faces: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Majority cluster of each face's three vertices; a three-way tie picks
    one of the three uniformly. Tie draws are consumed in ascending face
    order, so the assignment is reproducible for a fixed seed."""
    corner = np.asarray(vertex_cluster, dtype=np.int64)[np.asarray(faces, dtype=np.int64)]
    c0, c1, c2 = corner[:, 0], corner[:, 1], corner[:, 2]
    out = np.where(c0 == c1, c0, np.where(c0 == c2, c0, np.where(c1 == c2, c1, -1)))
    for i in np.nonzero(out == -1)[0]:
        out[i] = corner[i, int(rng.integers(3))]
    return out


@dataclass
class ClusterAssignment:
    """Clustering of one mesh: vertex labels, face labels, and diagnostics."""

    vertex_cluster: np.ndarray
    face_cluster: np.ndarray
    centers: np.ndarray
    distortion_history: list[float]
    num_clusters: int

    def face_counts(self) -> np.ndarray:
        return np.bincount(self.face_cluster, minlength=self.num_clusters)


def cluster_faces(mesh: Mesh, k: int, rng: np.random.Generator) -> ClusterAssignment:
    """Cluster mesh vertices and assign every face to a cluster.

    A request for more clusters than the mesh has vertices is clamped.
    """
    k = min(k, mesh.vertex_count)
    labels, centers, history = kmeans(mesh.vertices, k, rng)
    face_cluster = assign_faces(labels, mesh.faces, rng)
    return ClusterAssignment(
        vertex_cluster=labels,
        face_cluster=face_cluster,
        centers=centers,
        distortion_history=history,
        num_clusters=k,
    )


@dataclass
class ClusterBatch:
    """Faces arranged as padded per-cluster sequences.

    ``tensor`` is (K, S + 1, W) with the shared summary token at slot 0 of
    every sequence and zero rows past each cluster's face count. ``mask``
    marks the token and real faces. ``face_cluster``/``face_slot`` map each
    original face to its cell, which makes the layout exactly invertible.
    """

    tensor: torch.Tensor
    mask: torch.Tensor
    face_cluster: torch.Tensor
    face_slot: torch.Tensor

    @property
    def num_clusters(self) -> int:
        return self.tensor.shape[0]


def build_batch(
    face_features: torch.Tensor,
    face_cluster: np.ndarray | torch.Tensor,
    cluster_token: torch.Tensor,
    num_clusters: int,
) -> ClusterBatch:
    """Scatter per-face feature rows into the padded cluster layout.

    A cluster with no faces is fine: its sequence is the token alone.
    """
    if face_features.ndim != 2:
        raise ValueError(f"face_features must be (F, W), got {tuple(face_features.shape)}")
    if num_clusters < 1:
        raise ValueError(f"num_clusters must be >= 1, got {num_clusters}")
    width = face_features.shape[1]
    if cluster_token.shape != (width,):
        raise ValueError(
            f"cluster token must have shape ({width},), got {tuple(cluster_token.shape)}"
        )
    fc = np.asarray(
        face_cluster.cpu().numpy() if isinstance(face_cluster, torch.Tensor) else face_cluster,
        dtype=np.int64,
    )
    face_count = len(face_features)
    if fc.shape != (face_count,):
        raise ValueError("face_cluster must assign every feature row")
    if face_count and (fc.min() < 0 or fc.max() >= num_clusters):
        raise ValueError("face cluster index out of range")

    counts = np.bincount(fc, minlength=num_clusters)
    seq_len = int(counts.max()) + 1 if face_count else 1
    # stable sort groups faces by cluster while keeping ascending face index
    order = np.argsort(fc, kind="stable")
    starts = np.zeros(num_clusters, dtype=np.int64)
    starts[1:] = np.cumsum(counts)[:-1]
    slot = np.empty(face_count, dtype=np.int64)
    slot[order] = np.arange(face_count) - starts[fc[order]] + 1

    device = face_features.device
    fc_t = torch.from_numpy(fc).to(device)
    slot_t = torch.from_numpy(slot).to(device)
    tensor = torch.zeros(
        num_clusters, seq_len, width, dtype=face_features.dtype, device=device
    )
    tensor[:, 0, :] = cluster_token
    tensor[fc_t, slot_t, :] = face_features
    mask = torch.zeros(num_clusters, seq_len, dtype=torch.bool, device=device)
    mask[:, 0] = True
    mask[fc_t, slot_t] = True
    return ClusterBatch(tensor=tensor, mask=mask, face_cluster=fc_t, face_slot=slot_t)


def flatten_batch(tensor: torch.Tensor, batch: ClusterBatch) -> torch.Tensor:
    """Gather per-face rows back out of the padded layout, dropping the
    summary tokens and padding.

    The tensor may carry extra padded slots beyond the batch's sequence
    length; the recorded face slots are unaffected by trailing padding.
    """
    if tensor.shape[0] != batch.tensor.shape[0] or tensor.shape[1] < batch.tensor.shape[1]:
        raise ValueError(
            f"tensor layout {tuple(tensor.shape[:2])} cannot hold the batch "
            f"{tuple(batch.tensor.shape[:2])}"
        )
    return tensor[batch.face_cluster, batch.face_slot]


def dump_assignment_csv(path: str | Path, face_cluster: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["face_index", "cluster"])
        for i, cluster in enumerate(np.asarray(face_cluster, dtype=np.int64)):
            writer.writerow([i, int(cluster)])
