"""Synthetic datasets: grid/geometric graphs with smooth nodal signals.

The generator produces a learnable node-regression task: a low-pass
polynomial filter of white noise gives graph-smooth targets, and the
feature columns are increasingly diffused noisy copies of the target.
It stands in for physical measurement pipelines; externally produced
data in the same JSON schema loads through the same functions.

All randomness comes from seeded generators with a fixed stream order
(graph, then per sample: target -> feature noise -> observation mask,
then the train/test split), so identical manifests give identical bytes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .graph import Graph, from_edge_list, read_edge_list, spectral_radius_estimate, write_edge_list
from .loss import Sample

__all__ = [
    "DatasetManifest",
    "gen_graph",
    "gen_samples",
    "split_dataset",
    "split_indices",
    "generate_dataset",
    "write_dataset",
    "load_dataset",
    "write_samples",
    "read_samples",
    "TARGET_FILTER_COEFFS",
]

# low-pass filter producing the ground-truth signal from white noise:
# 3 * ((1 + x)/2)^3, a monotone response over the scaled-adjacency spectrum
# [-1, 1].  The scale keeps targets near unit variance on the stock graphs.
TARGET_FILTER_COEFFS = (0.375, 1.125, 1.125, 0.375)

GRAPH_FILE = "graph.edges"
SAMPLES_FILE = "samples.json"
MANIFEST_FILE = "manifest.json"


@dataclass
class DatasetManifest:
    n_nodes: int
    n_features: int
    n_samples: int
    observed_fraction: float
    noise_sigma: float
    seed: int
    graph_kind: str = "grid2d"
    graph_param: float = 0.35
    mask_mode: str = "per_sample"
    train_fraction: float = 0.8
    graph_path: str = GRAPH_FILE
    samples_path: str = SAMPLES_FILE
    train_indices: list = field(default_factory=list)
    test_indices: list = field(default_factory=list)

    def validate(self):
        if not 0.0 < self.observed_fraction <= 1.0:
            raise ValueError("observed_fraction must be in (0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.mask_mode not in ("per_sample", "fixed"):
            raise ValueError("mask_mode must be per_sample or fixed")
        if self.n_samples < 2 or self.n_nodes < 2 or self.n_features < 1:
            raise ValueError("dataset dimensions too small")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        split = sorted(self.train_indices) + sorted(self.test_indices)
        if self.train_indices and sorted(split) != list(range(self.n_samples)):
            raise ValueError("split indices must partition the sample range")


def _connected(weights) -> bool:
    n = weights.shape[0]
    seen = np.zeros(n, dtype=bool)
    frontier = [0]
    seen[0] = True
    while frontier:
        node = frontier.pop()
        for nbr in np.flatnonzero(weights[node]):
            if not seen[nbr]:
                seen[nbr] = True
                frontier.append(int(nbr))
    return bool(seen.all())


def gen_graph(kind: str, n_nodes: int, param: float = 0.35, seed: int = 0) -> Graph:
    """Generate a connected graph.

    ``grid2d`` builds a sqrt(N) x sqrt(N) lattice with unit weights
    (N must be a perfect square).  ``geometric`` samples points uniformly
    in the unit square, connects pairs closer than ``param`` with weight
    exp(-d^2/param^2), and resamples up to 100 times until connected.
    """
    if n_nodes < 2:
        raise ValueError("need at least two nodes")
    if kind == "grid2d":
        side = math.isqrt(n_nodes)
        if side * side != n_nodes:
            raise ValueError(f"grid2d needs a square node count, got {n_nodes}")
        edges = []
        for r in range(side):
            for c in range(side):
                node = r * side + c
                if c + 1 < side:
                    edges.append((node, node + 1, 1.0))
                if r + 1 < side:
                    edges.append((node, node + side, 1.0))
        return from_edge_list(n_nodes, edges)
    if kind == "geometric":
        if param <= 0:
            raise ValueError("geometric graphs need param > 0")
        rng = np.random.default_rng(seed)
        for _ in range(100):
            pts = rng.random((n_nodes, 2))
            diff = pts[:, None, :] - pts[None, :, :]
            dist = np.sqrt((diff * diff).sum(axis=2))
            w = np.where(dist < param, np.exp(-(dist**2) / param**2), 0.0)
            np.fill_diagonal(w, 0.0)
            if _connected(w):
                return Graph(w)
        raise ValueError(f"no connected geometric graph after 100 tries (param={param})")
    raise ValueError(f"unknown graph kind {kind!r}")


def gen_samples(g: Graph, n_samples: int, n_features: int, noise_sigma: float,
                observed_fraction: float, seed: int = 0, mask_mode: str = "per_sample"):
    """Draw samples of (features, target, observed mask) on a graph.

    Per sample: the target is a low-pass filtered white-noise signal
    y = sum_k a_k (W/r)^k z with r the spectral-radius estimate, and
    feature column j is (W/r)^(j-1) y plus Gaussian noise.  Masks select
    ceil(observed_fraction * N) nodes, redrawn per sample unless
    ``mask_mode`` is "fixed".
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not 0.0 < observed_fraction <= 1.0:
        raise ValueError("observed_fraction must be in (0, 1]")
    if mask_mode not in ("per_sample", "fixed"):
        raise ValueError("mask_mode must be per_sample or fixed")
    radius = spectral_radius_estimate(g, iterations=200, seed=seed)
    if radius <= 0:
        raise ValueError("graph has no edges; cannot scale diffusion")
    w_hat = g.weights / radius
    rng = np.random.default_rng(seed)
    n = g.n_nodes
    n_observed = int(math.ceil(observed_fraction * n))
    fixed_mask = None
    if mask_mode == "fixed":
        fixed_mask = np.zeros(n, dtype=bool)
        fixed_mask[rng.choice(n, size=n_observed, replace=False)] = True
    samples = []
    for _ in range(int(n_samples)):
        z = rng.standard_normal(n)
        y = np.zeros(n)
        power = z
        for k, coeff in enumerate(TARGET_FILTER_COEFFS):
            if k > 0:
                power = w_hat @ power
            y += coeff * power
        noise = noise_sigma * rng.standard_normal((n, n_features))
        features = np.empty((n, n_features))
        column = y
        for j in range(n_features):
            if j > 0:
                column = w_hat @ column
            features[:, j] = column
        features += noise
        if fixed_mask is not None:
            mask = fixed_mask.copy()
        else:
            mask = np.zeros(n, dtype=bool)
            mask[rng.choice(n, size=n_observed, replace=False)] = True
        samples.append(Sample(features, y, mask))
    return samples


def split_indices(n_samples: int, train_fraction: float, seed: int = 0):
    """Index sets of a deterministic shuffled floor(f*S) / remainder split."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n_train = int(math.floor(train_fraction * n_samples))
    if n_train == 0 or n_train == n_samples:
        raise ValueError("split leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n_samples)
    return sorted(int(i) for i in perm[:n_train]), sorted(int(i) for i in perm[n_train:])


def split_dataset(samples, train_fraction: float, seed: int = 0):
    """Split a sample list into disjoint (train, test) lists."""
    samples = list(samples)
    train_idx, test_idx = split_indices(len(samples), train_fraction, seed)
    return [samples[i] for i in train_idx], [samples[i] for i in test_idx]


def _samples_doc(samples):
    return {
        "samples": [
            {
                "features": s.features.ravel().tolist(),
                "labels": s.labels.tolist(),
                "observed": [bool(b) for b in s.observed],
            }
            for s in samples
        ]
    }


def write_samples(samples, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(_samples_doc(samples), fh)
        fh.write("\n")


def read_samples(path, n_nodes, n_features):
    try:
        with open(path) as fh:
            doc = json.load(fh)
        out = []
        for rec in doc["samples"]:
            feats = np.array(rec["features"], dtype=np.float64).reshape(n_nodes, n_features)
            out.append(Sample(feats, np.array(rec["labels"]), np.array(rec["observed"], dtype=bool)))
        return out
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed samples file ({exc})") from exc


def write_dataset(out_dir, manifest: DatasetManifest, g: Graph, samples) -> None:
    """Write manifest + graph + samples under a directory."""
    manifest.validate()
    os.makedirs(out_dir, exist_ok=True)
    write_edge_list(g, os.path.join(out_dir, manifest.graph_path))
    write_samples(samples, os.path.join(out_dir, manifest.samples_path))
    doc = {
        "n_nodes": manifest.n_nodes,
        "n_features": manifest.n_features,
        "n_samples": manifest.n_samples,
        "observed_fraction": manifest.observed_fraction,
        "noise_sigma": manifest.noise_sigma,
        "seed": manifest.seed,
        "graph_kind": manifest.graph_kind,
        "graph_param": manifest.graph_param,
        "mask_mode": manifest.mask_mode,
        "train_fraction": manifest.train_fraction,
        "graph_path": manifest.graph_path,
        "samples_path": manifest.samples_path,
        "train_indices": list(manifest.train_indices),
        "test_indices": list(manifest.test_indices),
    }
    with open(os.path.join(out_dir, MANIFEST_FILE), "w", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_dataset(data_dir):
    """Load a dataset directory; returns (manifest, graph, train, test)."""
    path = os.path.join(data_dir, MANIFEST_FILE)
    try:
        with open(path) as fh:
            doc = json.load(fh)
        manifest = DatasetManifest(**doc)
        manifest.validate()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed manifest ({exc})") from exc
    g = read_edge_list(os.path.join(data_dir, manifest.graph_path))
    if g.n_nodes != manifest.n_nodes:
        raise ConfigError(f"{path}: graph has {g.n_nodes} nodes, manifest says {manifest.n_nodes}")
    samples = read_samples(
        os.path.join(data_dir, manifest.samples_path), manifest.n_nodes, manifest.n_features
    )
    if len(samples) != manifest.n_samples:
        raise ConfigError(f"{path}: sample count mismatch")
    train = [samples[i] for i in manifest.train_indices]
    test = [samples[i] for i in manifest.test_indices]
    return manifest, g, train, test


def generate_dataset(manifest: DatasetManifest):
    """Generate graph + samples + split from manifest parameters.

    Seeds are derived from the manifest seed in a fixed order (graph,
    samples, split), so the full dataset is a pure function of the
    manifest.  Returns (graph, samples) and fills the split indices.
    """
    manifest.validate()
    graph_seed, sample_seed, split_seed = (
        int(s.generate_state(1)[0]) for s in np.random.SeedSequence(manifest.seed).spawn(3)
    )
    g = gen_graph(manifest.graph_kind, manifest.n_nodes, manifest.graph_param, graph_seed)
    samples = gen_samples(
        g,
        manifest.n_samples,
        manifest.n_features,
        manifest.noise_sigma,
        manifest.observed_fraction,
        sample_seed,
        manifest.mask_mode,
    )
    train_idx, test_idx = split_indices(len(samples), manifest.train_fraction, split_seed)
    manifest.train_indices = train_idx
    manifest.test_indices = test_idx
    return g, samples
