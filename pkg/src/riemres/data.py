"""Datasets: graph and SPD containers, synthetic generators, splits, diagnostics.

Graph datasets live on disk as a directory with ``edges.txt`` ("u v" lines),
``features.csv`` / ``labels.csv`` (headered CSV), and ``meta.json``.  SPD
datasets are a directory of matrix text files plus ``labels.csv``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import warnings
from collections import deque

import numpy as np

from . import linalg
from .errors import NumericError, PreconditionError, SchemaError

GROMOV_CAP = 200  # brute-force four-point scan refuses larger graphs


@dataclasses.dataclass
class GraphDataset:
    """Node features, per-node class labels, and an undirected edge list."""

    features: np.ndarray  # (n, d)
    labels: np.ndarray    # (n,) int
    edges: np.ndarray     # (m, 2) int, u < v
    name: str = "graph"
    splits: dict | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise SchemaError(
                f"{self.labels.shape[0]} labels for {n} feature rows")
        if not np.all(np.isfinite(self.features)):
            raise SchemaError("non-finite feature values")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= n):
            raise SchemaError("edge endpoint out of range")
        if self.splits is not None:
            seen = set()
            for key, idx in self.splits.items():
                idx = set(np.asarray(idx).tolist())
                if idx & seen:
                    raise SchemaError(f"split {key!r} overlaps another split")
                seen |= idx

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        if self.edges.size:
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a


@dataclasses.dataclass
class SPDDataset:
    """A stack of SPD matrices with one class label each.

    Every matrix is guaranteed to admit a Cholesky factorization; builders
    drop offending matrices and record how many in ``dropped``.
    """

    matrices: np.ndarray  # (N, n, n)
    labels: np.ndarray    # (N,) int
    name: str = "spd"
    dropped: int = 0
    splits: dict | None = None

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.matrices.ndim != 3 or self.matrices.shape[1] != self.matrices.shape[2]:
            raise SchemaError(f"expected (N, n, n) matrices, got {self.matrices.shape}")
        if self.labels.shape != (self.matrices.shape[0],):
            raise SchemaError(
                f"{self.labels.shape[0]} labels for {self.matrices.shape[0]} matrices")

    @property
    def num_samples(self) -> int:
        return self.matrices.shape[0]


# ---------------------------------------------------------------------------
# file I/O


def _parse_edges(path: str, num_nodes: int | None = None) -> np.ndarray:
    edges = []
    seen = set()
    duplicates = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise SchemaError(f"{path}:{lineno}: expected 'u v', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-integer endpoint in {line!r}")
            if num_nodes is not None and not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise SchemaError(
                    f"{path}:{lineno}: endpoint out of range for {num_nodes} nodes")
            key = (min(u, v), max(u, v))
            if key in seen:
                duplicates += 1
                continue
            seen.add(key)
            edges.append(key)
    if duplicates:
        warnings.warn(f"{path}: dropped {duplicates} duplicate edge line(s)")
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def _read_csv_matrix(path: str) -> np.ndarray:
    with open(path) as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: empty file")
    width = len(rows[0])
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise SchemaError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        try:
            out.append([float(v) for v in row])
        except ValueError:
            raise SchemaError(f"{path}:{lineno}: non-numeric value in {row!r}")
    return np.asarray(out, dtype=np.float64)


def load_graph(edge_file: str, feature_file: str, label_file: str,
               name: str = "graph") -> GraphDataset:
    """Assemble a validated dataset from the three on-disk pieces."""
    features = _read_csv_matrix(feature_file)
    labels = _read_csv_matrix(label_file)
    if labels.shape[1] != 1:
        raise SchemaError(f"{label_file}: expected a single label column")
    if labels.shape[0] != features.shape[0]:
        raise SchemaError(
            f"{labels.shape[0]} labels but {features.shape[0]} feature rows")
    edges = _parse_edges(edge_file, num_nodes=features.shape[0])
    return GraphDataset(features, labels[:, 0].astype(np.int64), edges, name=name)


def save_graph_dataset(dataset: GraphDataset, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "edges.txt"), "w") as fh:
        for u, v in dataset.edges:
            fh.write(f"{u} {v}\n")
    d = dataset.features.shape[1]
    with open(os.path.join(out_dir, "features.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(d)])
        for row in dataset.features:
            writer.writerow([repr(float(v)) for v in row])
    with open(os.path.join(out_dir, "labels.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"])
        for v in dataset.labels:
            writer.writerow([int(v)])
    meta = {"name": dataset.name, "n": int(dataset.num_nodes), "d": int(d),
            "kind": "graph"}
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)


def load_graph_dataset(directory: str) -> GraphDataset:
    meta_path = os.path.join(directory, "meta.json")
    name = "graph"
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            name = json.load(fh).get("name", name)
    return load_graph(os.path.join(directory, "edges.txt"),
                      os.path.join(directory, "features.csv"),
                      os.path.join(directory, "labels.csv"), name=name)


def save_spd_dataset(dataset: SPDDataset, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for i, mat in enumerate(dataset.matrices):
        linalg.save_matrix(os.path.join(out_dir, f"matrix_{i:05d}.txt"), mat)
    with open(os.path.join(out_dir, "labels.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"])
        for v in dataset.labels:
            writer.writerow([int(v)])
    meta = {"name": dataset.name, "n": int(dataset.num_samples),
            "d": int(dataset.matrices.shape[1]), "kind": "spd",
            "dropped": int(dataset.dropped)}
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)


def load_spd_dataset(directory: str) -> SPDDataset:
    labels = _read_csv_matrix(os.path.join(directory, "labels.csv"))
    files = sorted(f for f in os.listdir(directory)
                   if f.startswith("matrix_") and f.endswith(".txt"))
    if len(files) != labels.shape[0]:
        raise SchemaError(
            f"{directory}: {len(files)} matrix files but {labels.shape[0]} labels")
    mats = np.stack([linalg.load_matrix(os.path.join(directory, f)) for f in files])
    name = "spd"
    dropped = 0
    meta_path = os.path.join(directory, "meta.json")
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
        name = meta.get("name", name)
        dropped = int(meta.get("dropped", 0))
    return SPDDataset(mats, labels[:, 0].astype(np.int64), name=name, dropped=dropped)


def load_dataset(directory: str):
    """Dispatch on ``meta.json`` kind (graph vs SPD directory layout)."""
    meta_path = os.path.join(directory, "meta.json")
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            kind = json.load(fh).get("kind", "graph")
    else:
        kind = "spd" if os.path.exists(os.path.join(directory, "matrix_00000.txt")) \
            else "graph"
    if kind == "spd":
        return load_spd_dataset(directory)
    return load_graph_dataset(directory)


# ---------------------------------------------------------------------------
# synthetic generators


def generate_sir_tree(n_nodes: int, branching: int = 2,
                      infection_prob: float = 0.5, seed: int = 0) -> GraphDataset:
    """Epidemic simulation on a complete ``branching``-ary tree.

    The root starts infected; infection passes from an infected parent to a
    child with probability ``1 - (1 - infection_prob) ** susceptibility``,
    which grows with both arguments and is ``infection_prob * susceptibility``
    to first order.  Susceptibility is drawn per node from Uniform(0.5, 1.5)
    and exposed as a feature together with depth and degree.
    """
    if n_nodes < 2:
        raise PreconditionError("need at least 2 nodes")
    if not 0.0 < infection_prob < 1.0:
        raise PreconditionError("infection_prob must lie in (0, 1)")
    if branching < 1:
        raise PreconditionError("branching must be >= 1")
    rng = np.random.default_rng(seed)
    parent = np.array([(i - 1) // branching for i in range(n_nodes)])
    edges = np.stack([parent[1:], np.arange(1, n_nodes)], axis=1)

    depth = np.zeros(n_nodes, dtype=np.int64)
    for i in range(1, n_nodes):  # parents precede children in index order
        depth[i] = depth[parent[i]] + 1
    degree = np.zeros(n_nodes, dtype=np.int64)
    np.add.at(degree, edges[:, 0], 1)
    np.add.at(degree, edges[:, 1], 1)

    susceptibility = rng.uniform(0.5, 1.5, size=n_nodes)
    transmit = 1.0 - (1.0 - infection_prob) ** susceptibility
    draws = rng.random(n_nodes)
    infected = np.zeros(n_nodes, dtype=bool)
    infected[0] = True
    for i in range(1, n_nodes):
        infected[i] = infected[parent[i]] and draws[i] < transmit[i]

    features = np.stack([susceptibility,
                         depth.astype(np.float64),
                         degree.astype(np.float64)], axis=1)
    return GraphDataset(features, infected.astype(np.int64), edges,
                        name=f"sir-tree-{n_nodes}")


def build_covariance_dataset(sequences, labels, use_correlation: bool = False,
                             name: str = "covariance") -> SPDDataset:
    """Per-sequence sample covariance, keeping only Cholesky-factorizable output.

    Each sequence is a (T, n) series with T > n; its covariance is
    ``(1/(T-1)) sum (x_t - mu)(x_t - mu)^T``.  With ``use_correlation`` the
    rows/columns are divided by the standard deviations, giving unit diagonal.
    Matrices whose Cholesky factorization fails are dropped and counted.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(sequences) != labels.shape[0]:
        raise PreconditionError(
            f"{len(sequences)} sequences but {labels.shape[0]} labels")
    mats, kept_labels, dropped = [], [], 0
    for seq, label in zip(sequences, labels):
        seq = np.asarray(seq, dtype=np.float64)
        if seq.ndim != 2:
            raise PreconditionError(f"sequence must be (T, n), got {seq.shape}")
        t, n = seq.shape
        if t <= n:
            raise PreconditionError(f"need T > n frames, got T={t}, n={n}")
        mu = seq.mean(axis=0)
        centered = seq - mu
        cov = centered.T @ centered / (t - 1)
        if use_correlation:
            std = np.sqrt(np.diag(cov))
            if np.any(std <= 0.0):
                dropped += 1
                continue
            cov = cov / std[:, None] / std[None, :]
        if linalg.cholesky(cov) is None:
            dropped += 1
            continue
        mats.append(cov)
        kept_labels.append(label)
    if not mats:
        raise NumericError("every covariance matrix failed the Cholesky filter")
    return SPDDataset(np.stack(mats), np.asarray(kept_labels, dtype=np.int64),
                      name=name, dropped=dropped)


def _matched_spectra(dim: int, num_classes: int, separation: float) -> list:
    """Class eigenvalue templates with equal trace and Frobenius norm.

    All classes share trace ``dim`` and squared Frobenius norm
    ``dim * (1 + separation / 2)``, so no linear or plain quadratic statistic
    of the matrix entries separates them.  Class 0 packs the spread into one
    outlier eigenvalue (dim-1 equal values plus one large one); classes 1+
    spread it geometrically, which drags the log-spectrum (determinant) far
    below class 0's.  The classes therefore differ only in log-eigenvalue
    shape.
    """
    if separation <= 0:
        raise PreconditionError("separation must be positive")
    s1 = float(dim)
    s2 = s1 ** 2 / dim * (1.0 + separation / 2.0)

    # class 0: eigenvalues {x * (dim-1), y}; two moments, two unknowns
    # dim*(dim-1)*x^2 - 2*s1*(dim-1)*x + (s1^2 - s2) = 0
    qa = dim * (dim - 1)
    qb = -2.0 * s1 * (dim - 1)
    qc = s1 ** 2 - s2
    disc = qb ** 2 - 4.0 * qa * qc
    x = (-qb - np.sqrt(disc)) / (2.0 * qa)
    y = s1 - (dim - 1) * x
    if x <= 0 or y <= 0:
        raise PreconditionError(
            f"separation {separation} too large for dim {dim}")
    spectra = [np.concatenate([np.full(dim - 1, x), [y]])]

    if num_classes >= 2:
        # class 1: geometric spread exp(linspace(-s, s, dim)) scaled to the
        # trace; the Frobenius constraint picks s by bisection (the ratio
        # sum(e^2)/sum(e)^2 grows monotonically with s)
        target = s2 / s1 ** 2

        def ratio(s):
            e = np.exp(np.linspace(-s, s, dim))
            return float((e ** 2).sum() / e.sum() ** 2)

        lo, hi = 0.0, 1.0
        while ratio(hi) < target:
            hi *= 2.0
            if hi > 50:
                raise PreconditionError(
                    f"separation {separation} unreachable for dim {dim}")
        for _ in range(200):
            mid = (lo + hi) / 2.0
            if ratio(mid) < target:
                lo = mid
            else:
                hi = mid
        e = np.exp(np.linspace(-hi, hi, dim))
        spectra.append(e * (s1 / e.sum()))

    for c in range(2, num_classes):
        # classes 2+: c equal outliers {x * (dim-c), y * c}
        k = c
        if k >= dim:
            raise PreconditionError(
                f"num_classes {num_classes} too large for dim {dim}")
        # (dim-k)x + ky = s1, (dim-k)x^2 + ky^2 = s2 with y = (s1-(dim-k)x)/k
        aa = (dim - k) + (dim - k) ** 2 / k
        bb = -2.0 * s1 * (dim - k) / k
        cc = s1 ** 2 / k - s2
        disc = bb ** 2 - 4.0 * aa * cc
        if disc < 0:
            raise PreconditionError(
                f"separation {separation} unreachable for class {c}")
        x = (-bb - np.sqrt(disc)) / (2.0 * aa)
        y = (s1 - (dim - k) * x) / k
        if x <= 0 or y <= 0:
            raise PreconditionError(
                f"separation {separation} too large for class {c}")
        spectra.append(np.concatenate([np.full(dim - k, x), np.full(k, y)]))
    return spectra


def generate_spd_classes(num_samples: int = 200, dim: int = 10,
                         frames: int = 40, num_classes: int = 2,
                         separation: float = 1.0, seed: int = 0) -> SPDDataset:
    """Covariance dataset whose class signal is purely spectral.

    Every sample gets its own random orthogonal basis, and class spectra are
    matched in trace and Frobenius norm (see ``_matched_spectra``), so no
    linear or simple quadratic function of the entries separates the classes;
    the discriminating statistic lives in the log-eigenvalue domain.  Samples
    are covariances of Gaussian series with the class spectrum, so they carry
    Wishart sampling noise.
    """
    if frames <= dim:
        raise PreconditionError("need more frames than matrix dimension")
    rng = np.random.default_rng(seed)
    spectra = _matched_spectra(dim, num_classes, separation)
    mats, labels = [], []
    per_class = num_samples // num_classes
    for c in range(num_classes):
        count = per_class + (1 if c < num_samples % num_classes else 0)
        for _ in range(count):
            q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
            q *= np.sign(np.diag(r))[None, :]
            root = q * np.sqrt(spectra[c])[None, :]
            frames_c = rng.standard_normal((frames, dim)) @ root.T
            mu = frames_c.mean(axis=0)
            centered = frames_c - mu
            mats.append(centered.T @ centered / (frames - 1))
            labels.append(c)
    order = rng.permutation(len(mats))
    mats = np.stack(mats)[order]
    labels = np.asarray(labels, dtype=np.int64)[order]
    kept, kept_labels, dropped = [], [], 0
    for mat, label in zip(mats, labels):
        if linalg.cholesky(mat) is None:
            dropped += 1
            continue
        kept.append(mat)
        kept_labels.append(label)
    if not kept:
        raise NumericError("every generated covariance failed the Cholesky filter")
    return SPDDataset(np.stack(kept), np.asarray(kept_labels, dtype=np.int64),
                      name=f"spd-classes-{dim}", dropped=dropped)


# ---------------------------------------------------------------------------
# diagnostics and splits


def _hop_distances(num_nodes: int, edges: np.ndarray) -> np.ndarray:
    """All-pairs BFS hop counts; -1 marks unreachable pairs."""
    adj = [[] for _ in range(num_nodes)]
    for u, v in edges:
        adj[u].append(int(v))
        adj[v].append(int(u))
    dist = np.full((num_nodes, num_nodes), -1, dtype=np.int64)
    for s in range(num_nodes):
        dist[s, s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for w in adj[u]:
                if dist[s, w] < 0:
                    dist[s, w] = dist[s, u] + 1
                    queue.append(w)
    return dist


def gromov_delta(dataset_or_edges, num_nodes: int | None = None,
                 cap: int = GROMOV_CAP) -> float:
    """Worst four-point defect over all node quadruples, halved.

    For each quadruple the three pairings d(x,y)+d(z,w), d(x,z)+d(y,w),
    d(x,w)+d(y,z) are sorted and the gap between the two largest is the
    defect.  Hop-count metric; trees give exactly 0.
    """
    if isinstance(dataset_or_edges, GraphDataset):
        edges = dataset_or_edges.edges
        num_nodes = dataset_or_edges.num_nodes
    else:
        edges = np.asarray(dataset_or_edges, dtype=np.int64).reshape(-1, 2)
        if num_nodes is None:
            num_nodes = int(edges.max()) + 1 if edges.size else 1
    if num_nodes > cap:
        raise PreconditionError(
            f"brute-force four-point scan refuses {num_nodes} nodes (cap {cap})")
    dist = _hop_distances(num_nodes, edges)
    if np.any(dist < 0):
        raise PreconditionError("graph is disconnected")
    dist = dist.astype(np.int16)  # hop sums stay far below the int16 range
    best = 0
    # one quadruple axis at a time keeps the scan at O(n) cubes of size n^3
    for x in range(num_nodes):
        s1 = dist[x][:, None, None] + dist[None, :, :]        # d(x,y)+d(z,w)
        s2 = dist[x][None, :, None] + dist[:, None, :]        # d(x,z)+d(y,w)
        s3 = dist[x][None, None, :] + dist[:, :, None]        # d(x,w)+d(y,z)
        mx = np.maximum(s1, s2)
        mn = np.minimum(s1, s2)
        mid = np.maximum(mn, np.minimum(mx, s3))
        np.maximum(mx, s3, out=mx)
        mx -= mid
        best = max(best, int(mx.max()))
    return best / 2.0


def split_dataset(dataset, fractions=(0.7, 0.15, 0.15), seed: int = 0,
                  stratify: bool = True):
    """Attach deterministic train/val/test splits, stratified by class.

    Falls back to an unstratified split with a warning when some class has
    fewer members than there are splits.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or sum(fractions) > 1 + 1e-12:
        raise PreconditionError("need three positive fractions summing to <= 1")
    labels = dataset.labels
    n = labels.shape[0]
    rng = np.random.default_rng(seed)

    def cut(indices):
        k1 = int(round(len(indices) * fractions[0]))
        k2 = int(round(len(indices) * (fractions[0] + fractions[1])))
        return indices[:k1], indices[k1:k2], indices[k2:]

    classes, counts = np.unique(labels, return_counts=True)
    if stratify and np.min(counts) < 3:
        warnings.warn("class with fewer than 3 members; splitting unstratified")
        stratify = False
    if stratify:
        parts = [[], [], []]
        for c in classes:
            idx = rng.permutation(np.flatnonzero(labels == c))
            for part, piece in zip(parts, cut(idx)):
                part.append(piece)
        splits = tuple(np.sort(np.concatenate(p)) for p in parts)
    else:
        splits = tuple(np.sort(s) for s in cut(rng.permutation(n)))
    named = {"train": splits[0], "val": splits[1], "test": splits[2]}
    return dataclasses.replace(dataset, splits=named)
