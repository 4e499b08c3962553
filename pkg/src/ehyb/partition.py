"""Graph construction and balanced vertex partitioning.

The matrix is treated as an undirected graph (rows/columns are vertices, each
off-diagonal entry an edge). The built-in partitioner is greedy BFS region
growing with one boundary-refinement pass: dependency-free, deterministic,
and adequate for FEM-like meshes. Higher-quality partitions from external
tools can be supplied through the plain-text interchange file.
"""

from __future__ import annotations

import os
import random
from collections import deque
from dataclasses import dataclass

import numpy as np

from .matrix_io import CooMatrix


@dataclass(eq=False)
class AdjacencyGraph:
    """Undirected graph in CSR-like adjacency form, neighbor lists sorted."""

    n_vertices: int
    adj_ptr: np.ndarray
    adj: np.ndarray

    def neighbors(self, v: int) -> np.ndarray:
        return self.adj[self.adj_ptr[v] : self.adj_ptr[v + 1]]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adj_ptr)

    @property
    def n_edges(self) -> int:
        return int(self.adj.size) // 2


@dataclass(eq=False)
class PartitionMap:
    """Vertex-to-partition assignment with per-partition sizes."""

    n_parts: int
    assignment: np.ndarray
    part_sizes: np.ndarray

    @classmethod
    def from_assignment(cls, assignment, n_parts: int | None = None) -> "PartitionMap":
        assignment = np.asarray(assignment, dtype=np.int64)
        if assignment.ndim != 1:
            raise ValueError("assignment must be one-dimensional")
        if assignment.size and assignment.min() < 0:
            raise ValueError("negative partition id")
        inferred = int(assignment.max()) + 1 if assignment.size else 0
        if n_parts is None:
            n_parts = max(inferred, 1)
        elif inferred > n_parts:
            raise ValueError(f"partition id {inferred - 1} >= n_parts {n_parts}")
        sizes = np.bincount(assignment, minlength=n_parts).astype(np.int64)
        return cls(n_parts=n_parts, assignment=assignment, part_sizes=sizes)

    @property
    def n_vertices(self) -> int:
        return int(self.assignment.size)


@dataclass(frozen=True)
class CutMetrics:
    inner_entries: int
    extra_entries: int
    inner_fraction: float


def build_graph(m: CooMatrix) -> AdjacencyGraph:
    """Undirected adjacency of a square matrix; diagonal entries ignored.

    Edge {u, v} is present iff entry (u, v) or (v, u) exists with u != v, so
    structurally asymmetric patterns are symmetrized.
    """
    if not m.is_square:
        raise ValueError("matrix must be square")
    n = m.n_rows
    off = m.rows != m.cols
    u = m.rows[off]
    v = m.cols[off]
    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    if src.size:
        key = np.unique(src * np.int64(n) + dst)
        src = key // n
        dst = key % n
    counts = np.bincount(src, minlength=n) if src.size else np.zeros(n, np.int64)
    adj_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=adj_ptr[1:])
    return AdjacencyGraph(n_vertices=n, adj_ptr=adj_ptr, adj=dst.astype(np.int32))


def partition_graph(
    g: AdjacencyGraph, n_parts: int, capacity: int, seed: int = 0
) -> PartitionMap:
    """Balanced partition by greedy BFS region growing plus one refinement pass.

    Each region is seeded at the unassigned vertex of minimum degree (ties
    broken by the seeded RNG) and grown breadth-first until the partition
    reaches `capacity`. Leftover vertices grow extra regions into the least
    full partitions; isolated vertices are appended round-robin to non-full
    partitions. A single boundary pass then moves a vertex to an adjacent
    non-full partition when that strictly reduces the cut. Deterministic for
    a fixed seed; every part size is <= capacity on return.
    """
    n = g.n_vertices
    if n_parts < 1:
        raise ValueError("n_parts must be >= 1")
    if capacity < 1 or n_parts * capacity < n:
        raise ValueError(
            f"infeasible: {n_parts} parts of capacity {capacity} cannot hold {n} vertices"
        )
    rng = random.Random(seed)
    degrees = g.degrees
    assignment = np.full(n, -1, dtype=np.int64)
    sizes = np.zeros(n_parts, dtype=np.int64)

    isolated = np.flatnonzero(degrees == 0)
    connected = np.flatnonzero(degrees > 0)
    by_degree = connected[np.argsort(degrees[connected], kind="stable")].tolist()
    cursor = 0

    def next_seed() -> int:
        nonlocal cursor
        while cursor < len(by_degree) and assignment[by_degree[cursor]] >= 0:
            cursor += 1
        if cursor >= len(by_degree):
            return -1
        d = degrees[by_degree[cursor]]
        run = []
        i = cursor
        while i < len(by_degree) and degrees[by_degree[i]] == d:
            if assignment[by_degree[i]] < 0:
                run.append(by_degree[i])
            i += 1
        return run[rng.randrange(len(run))] if len(run) > 1 else run[0]

    def grow(pid: int) -> int:
        start = next_seed()
        if start < 0:
            return 0
        grown = 1
        assignment[start] = pid
        sizes[pid] += 1
        queue = deque([start])
        while queue and sizes[pid] < capacity:
            u = queue.popleft()
            for w in g.neighbors(u):
                w = int(w)
                if assignment[w] < 0:
                    assignment[w] = pid
                    sizes[pid] += 1
                    grown += 1
                    queue.append(w)
                    if sizes[pid] == capacity:
                        break
        return grown

    left = len(by_degree)
    for pid in range(n_parts):
        if left == 0:
            break
        left -= grow(pid)
    while left > 0:
        nonfull = np.flatnonzero(sizes < capacity)
        pid = int(nonfull[np.argmin(sizes[nonfull])])
        left -= grow(pid)

    pid = 0
    for v in isolated:
        while sizes[pid] >= capacity:
            pid = (pid + 1) % n_parts
        assignment[v] = pid
        sizes[pid] += 1
        pid = (pid + 1) % n_parts

    # one boundary-refinement pass: move when the cut strictly decreases
    for v in range(n):
        nbrs = g.neighbors(v)
        if nbrs.size == 0:
            continue
        a = int(assignment[v])
        counts = np.bincount(assignment[nbrs], minlength=n_parts)
        internal = counts[a]
        movable = sizes < capacity
        movable[a] = False
        if not movable.any():
            continue
        scores = np.where(movable, counts, -1)
        b = int(np.argmax(scores))
        if scores[b] > internal:
            assignment[v] = b
            sizes[a] -= 1
            sizes[b] += 1

    return PartitionMap(n_parts=n_parts, assignment=assignment, part_sizes=sizes)


def random_partition(
    n_vertices: int, n_parts: int, capacity: int | None = None, seed: int = 0
) -> PartitionMap:
    """Seeded balanced random partition (part sizes differ by at most one)."""
    if n_parts < 1:
        raise ValueError("n_parts must be >= 1")
    max_size = -(-n_vertices // n_parts)
    if capacity is not None and max_size > capacity:
        raise ValueError(f"balanced parts of size {max_size} exceed capacity {capacity}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_vertices)
    assignment = np.empty(n_vertices, dtype=np.int64)
    for pid, chunk in enumerate(np.array_split(perm, n_parts)):
        assignment[chunk] = pid
    return PartitionMap.from_assignment(assignment, n_parts=n_parts)


def rebalance_partition(
    g: AdjacencyGraph, parts: PartitionMap, capacity: int
) -> PartitionMap:
    """Evict vertices from overfull partitions until every size <= capacity.

    The highest-cut boundary vertex of the largest overfull partition moves to
    the least full partition adjacent to it (falling back to the globally
    least full one). Intended for partitions loaded from external files; the
    built-in partitioner never produces overfull parts.
    """
    n_parts = parts.n_parts
    if n_parts * capacity < g.n_vertices:
        raise ValueError("infeasible capacity")
    assignment = parts.assignment.copy()
    sizes = parts.part_sizes.copy()
    while True:
        over = np.flatnonzero(sizes > capacity)
        if over.size == 0:
            break
        pid = int(over[np.argmax(sizes[over])])
        members = np.flatnonzero(assignment == pid)
        best_v, best_ext = -1, -1
        for v in members:
            nbrs = g.neighbors(int(v))
            ext = int(np.count_nonzero(assignment[nbrs] != pid))
            if ext > best_ext:
                best_v, best_ext = int(v), ext
        nbrs = g.neighbors(best_v)
        targets = np.unique(assignment[nbrs])
        targets = targets[(targets != pid) & (sizes[targets] < capacity)]
        if targets.size:
            target = int(targets[np.argmin(sizes[targets])])
        else:
            nonfull = np.flatnonzero(sizes < capacity)
            target = int(nonfull[np.argmin(sizes[nonfull])])
        assignment[best_v] = target
        sizes[pid] -= 1
        sizes[target] += 1
    return PartitionMap(n_parts=n_parts, assignment=assignment, part_sizes=sizes)


def cut_metrics(m: CooMatrix, parts: PartitionMap) -> CutMetrics:
    """Count inner entries (row and column in the same partition) vs extra.

    Diagonal entries are always inner. An empty matrix reports fraction 1.0.
    """
    if not m.is_square or parts.n_vertices != m.n_rows:
        raise ValueError("dimension mismatch between matrix and partition")
    if m.nnz == 0:
        return CutMetrics(0, 0, 1.0)
    a = parts.assignment
    inner = int(np.count_nonzero(a[m.rows] == a[m.cols]))
    extra = m.nnz - inner
    return CutMetrics(inner, extra, inner / m.nnz)


def save_partition_file(parts: PartitionMap, sink) -> None:
    """One 0-based partition id per vertex per line (METIS output style)."""
    text = "\n".join(str(int(p)) for p in parts.assignment) + "\n"
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w") as fh:
            fh.write(text)
    else:
        try:
            sink.write(text)
        except TypeError:
            sink.write(text.encode("ascii"))


def load_partition_file(
    source, n_vertices: int, n_parts: int | None = None
) -> PartitionMap:
    """Read a partition interchange file; errors on line-count mismatch.

    When n_parts is given, any id >= n_parts is rejected; otherwise the part
    count is inferred as max id + 1.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            text = fh.read()
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("ascii")
    tokens = text.split()
    if len(tokens) != n_vertices:
        raise ValueError(
            f"partition file has {len(tokens)} entries, expected {n_vertices}"
        )
    try:
        assignment = np.asarray([int(t) for t in tokens], dtype=np.int64)
    except ValueError:
        raise ValueError("partition file must contain one integer per line") from None
    return PartitionMap.from_assignment(assignment, n_parts=n_parts)
