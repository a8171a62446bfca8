"""Dense undirected weighted graphs: Laplacian construction and k-hop diffusion.

Graphs are immutable after construction.  All node signals are dense
float64 matrices of shape (n_nodes, n_features); everything downstream
(filters, training, attacks) runs on this representation.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

__all__ = [
    "Graph",
    "from_edge_list",
    "degree_matrix",
    "laplacian",
    "diffuse",
    "spectral_radius_estimate",
    "read_edge_list",
    "write_edge_list",
    "as_signal",
]


class Graph:
    """Undirected weighted graph stored as a dense symmetric adjacency matrix.

    Invariants enforced at construction: symmetry, zero diagonal,
    nonnegative finite weights.  The weight matrix is frozen (read-only)
    so instances can be shared freely across workers.
    """

    __slots__ = ("n_nodes", "weights", "_laplacian")

    def __init__(self, weights):
        w = np.array(weights, dtype=np.float64, order="C")
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {w.shape}")
        if w.shape[0] < 1:
            raise ValueError("graph needs at least one node")
        if not np.isfinite(w).all():
            raise ValueError("adjacency contains non-finite entries")
        if (w < 0).any():
            raise ValueError("negative edge weight")
        if np.diagonal(w).any():
            raise ValueError("self-loop (nonzero diagonal entry)")
        if not np.array_equal(w, w.T):
            raise ValueError("adjacency must be symmetric")
        w.setflags(write=False)
        self.n_nodes = int(w.shape[0])
        self.weights = w
        self._laplacian = None

    def __repr__(self):
        nnz = int(np.count_nonzero(self.weights)) // 2
        return f"Graph(n_nodes={self.n_nodes}, n_edges={nnz})"


def from_edge_list(n_nodes, edges):
    """Build a Graph from (u, v, weight) triples.

    Duplicate undirected edges are rejected, as are self-loops, negative
    weights and out-of-range indices.
    """
    w = np.zeros((n_nodes, n_nodes), dtype=np.float64)
    seen = set()
    for u, v, weight in edges:
        u, v = int(u), int(v)
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise ValueError(f"edge ({u},{v}) out of range for {n_nodes} nodes")
        if u == v:
            raise ValueError(f"self-loop at node {u}")
        if weight < 0:
            raise ValueError(f"negative weight {weight} on edge ({u},{v})")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise ValueError(f"duplicate edge ({u},{v})")
        seen.add(key)
        w[u, v] = w[v, u] = float(weight)
    return Graph(w)


def degree_matrix(g: Graph) -> np.ndarray:
    """Diagonal matrix of weighted node degrees (row sums of the adjacency)."""
    return np.diag(g.weights.sum(axis=1))


def laplacian(g: Graph) -> np.ndarray:
    """Unnormalized Laplacian: degree matrix minus adjacency.  Cached."""
    if g._laplacian is None:
        lap = degree_matrix(g) - g.weights
        lap.setflags(write=False)
        g._laplacian = lap
    return g._laplacian


def as_signal(x, n_nodes=None) -> np.ndarray:
    """Validate and coerce a node-signal matrix to C-contiguous float64."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"signal must be 2-D (nodes x features), got ndim={arr.ndim}")
    if n_nodes is not None and arr.shape[0] != n_nodes:
        raise ValueError(f"signal has {arr.shape[0]} rows, graph has {n_nodes} nodes")
    if not np.isfinite(arr).all():
        raise ValueError("signal contains non-finite entries")
    return arr


def diffuse(g: Graph, x, k: int) -> np.ndarray:
    """Apply the adjacency k times to a signal matrix (k-hop feature mixing)."""
    if k < 0:
        raise ValueError("diffusion order must be nonnegative")
    y = as_signal(x, g.n_nodes).copy()
    for _ in range(int(k)):
        y = g.weights @ y
    return y


def spectral_radius_estimate(g: Graph, iterations: int = 100, seed: int = 0) -> float:
    """Power-iteration estimate of the largest-magnitude adjacency eigenvalue.

    Deterministic for a given seed; returns 0.0 for the all-zero graph.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(g.n_nodes)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return 0.0
    v /= norm
    est = 0.0
    for _ in range(int(iterations)):
        w = g.weights @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        est = norm  # ||W v|| with ||v|| == 1
        v = w / norm
    return est


def write_edge_list(g: Graph, path) -> None:
    """Write the graph in the plain-text edge-list format.

    Format: a header line ``N <n_nodes>`` followed by one ``u v w`` line
    per undirected edge (u < v, 0-based).  Weights use shortest exact
    float representation so a read-back reproduces the matrix bit for bit.
    """
    lines = [f"N {g.n_nodes}"]
    w = g.weights
    for i in range(g.n_nodes):
        for j in range(i + 1, g.n_nodes):
            if w[i, j] != 0.0:
                lines.append(f"{i} {j} {float(w[i, j])!r}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_edge_list(path) -> Graph:
    """Parse the edge-list format written by :func:`write_edge_list`.

    Lines starting with ``#`` and blank lines are ignored; trailing
    whitespace is tolerated.  Malformed content raises ConfigError.
    """
    n_nodes = None
    edges = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if n_nodes is None:
                    if parts[0] != "N" or len(parts) != 2:
                        raise ValueError("expected header 'N <n_nodes>'")
                    n_nodes = int(parts[1])
                    continue
                if len(parts) != 3:
                    raise ValueError("expected 'u v w'")
                edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    if n_nodes is None:
        raise ConfigError(f"{path}: missing 'N <n_nodes>' header")
    try:
        return from_edge_list(n_nodes, edges)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
