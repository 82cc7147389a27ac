"""Directed Erdos-Renyi G(n, M) networks stored in CSR form."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class TopologyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Network:
    n_nodes: int
    density: float
    out_ptr: np.ndarray  # int64, len n+1
    out_idx: np.ndarray  # int32, destination ids sorted within each row
    in_ptr: np.ndarray
    in_idx: np.ndarray

    @property
    def edge_count(self) -> int:
        return int(self.out_idx.size)

    def out_neighbors(self, node: int) -> np.ndarray:
        return self.out_idx[self.out_ptr[node]:self.out_ptr[node + 1]]

    def in_neighbors(self, node: int) -> np.ndarray:
        return self.in_idx[self.in_ptr[node]:self.in_ptr[node + 1]]

    def out_degree(self) -> np.ndarray:
        return np.diff(self.out_ptr)

    def edges(self) -> np.ndarray:
        """(E, 2) array of (src, dst) in row-major order."""
        src = np.repeat(np.arange(self.n_nodes, dtype=np.int32), self.out_degree())
        return np.column_stack([src, self.out_idx])

    def same_edges(self, other: "Network") -> bool:
        return (self.n_nodes == other.n_nodes
                and np.array_equal(self.out_ptr, other.out_ptr)
                and np.array_equal(self.out_idx, other.out_idx))


def edge_count_for(n: int, d: float) -> int:
    return int(round(d * n * (n - 1)))


def from_edges(n: int, src, dst, density: float | None = None) -> Network:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.size and (src.min() < 0 or dst.min() < 0 or src.max() >= n or dst.max() >= n):
        raise TopologyError("edge endpoint out of range")
    if np.any(src == dst):
        raise TopologyError("self-loops are not allowed")
    key = np.unique(src * n + dst)
    if key.size != src.size:
        raise TopologyError("duplicate edges")
    src, dst = key // n, key % n
    out_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=out_ptr[1:])
    order = np.lexsort((src, dst))
    in_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(dst, minlength=n), out=in_ptr[1:])
    if density is None:
        density = src.size / (n * (n - 1))
    return Network(n, float(density), out_ptr, dst.astype(np.int32),
                   in_ptr, src[order].astype(np.int32))


def generate_er(n: int, d: float, rng: np.random.Generator) -> Network:
    """Exactly round(d n (n-1)) distinct directed non-loop edges, uniformly chosen."""
    if n < 2:
        raise TopologyError(f"need at least 2 nodes, got n={n}")
    if not 0.0 < d <= 1.0:
        raise TopologyError(f"density must satisfy 0 < d <= 1, got d={d}")
    m = edge_count_for(n, d)
    if m < 1:
        raise TopologyError(f"d*n*(n-1) = {d * n * (n - 1):.3g} < 1: network would have no edges")
    pairs = n * (n - 1)
    idx = np.sort(rng.choice(pairs, size=m, replace=False))
    src = idx // (n - 1)
    j = idx % (n - 1)
    dst = j + (j >= src)
    return from_edges(n, src, dst, density=d)


def complete_digraph(n: int) -> Network:
    src, dst = np.nonzero(~np.eye(n, dtype=bool))
    return from_edges(n, src, dst, density=1.0)


def write_edge_list(net: Network, path, seed=None) -> None:
    lines = [f"# n={net.n_nodes} d={net.density} seed={seed}"]
    lines += [f"{s},{t}" for s, t in net.edges().tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path) -> Network:
    header, *rows = Path(path).read_text().splitlines()
    fields = dict(tok.split("=", 1) for tok in header.lstrip("# ").split())
    pairs = np.array([r.split(",") for r in rows if r.strip()], dtype=np.int64).reshape(-1, 2)
    return from_edges(int(fields["n"]), pairs[:, 0], pairs[:, 1], density=float(fields["d"]))
