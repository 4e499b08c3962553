"""Shared matrix generators and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np

from ehyb import (
    CooMatrix,
    DeviceProfile,
    PartitionMap,
    assemble_ehyb,
    build_graph,
    build_reorder_plan,
    classify_rows,
    compute_params,
    partition_graph,
    random_partition,
)


def identity_coo(n: int) -> CooMatrix:
    idx = np.arange(n)
    return CooMatrix(n, n, idx, idx, np.ones(n))


def tridiagonal(n: int, diag: float = 2.0, off: float = -1.0) -> CooMatrix:
    rows, cols, vals = [], [], []
    for i in range(n):
        for j in (i - 1, i, i + 1):
            if 0 <= j < n:
                rows.append(i)
                cols.append(j)
                vals.append(diag if i == j else off)
    return CooMatrix(n, n, rows, cols, vals)


def laplacian_1d(n: int) -> CooMatrix:
    return tridiagonal(n)


def laplacian_2d(nx: int, ny: int) -> CooMatrix:
    """5-point stencil on an nx-by-ny grid."""
    n = nx * ny
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    vid = (ix * ny + iy).ravel()
    rows = [vid]
    cols = [vid]
    vals = [np.full(n, 4.0)]
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        jx, jy = ix + dx, iy + dy
        ok = ((jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny)).ravel()
        rows.append(vid[ok])
        cols.append((jx * ny + jy).ravel()[ok])
        vals.append(np.full(ok.sum(), -1.0))
    return CooMatrix(n, n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


def laplacian_3d(nx: int, ny: int, nz: int) -> CooMatrix:
    """7-point stencil on an nx-by-ny-by-nz grid."""
    n = nx * ny * nz
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    vid = ((ix * ny + iy) * nz + iz).ravel()
    rows = [vid]
    cols = [vid]
    vals = [np.full(n, 6.0)]
    for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
        jx, jy, jz = ix + dx, iy + dy, iz + dz
        ok = ((jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny) & (jz >= 0) & (jz < nz)).ravel()
        rows.append(vid[ok])
        cols.append(((jx * ny + jy) * nz + jz).ravel()[ok])
        vals.append(np.full(ok.sum(), -1.0))
    return CooMatrix(n, n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


def random_coo(n: int, density: float, seed: int) -> CooMatrix:
    """Square random matrix with unique coordinates and values in [-1, 1)."""
    rng = np.random.default_rng(seed)
    nnz = max(1, int(round(density * n * n)))
    flat = rng.choice(n * n, size=min(nnz, n * n), replace=False)
    vals = rng.uniform(-1.0, 1.0, size=flat.size)
    return CooMatrix(n, n, flat // n, flat % n, vals)


def block_diag_dense(n_blocks: int, block: int) -> CooMatrix:
    """Dense blocks on the diagonal; aligned partitions cut zero edges."""
    n = n_blocks * block
    rows, cols = [], []
    for b in range(n_blocks):
        base = b * block
        ii, jj = np.meshgrid(np.arange(block), np.arange(block), indexing="ij")
        rows.append(base + ii.ravel())
        cols.append(base + jj.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = 1.0 + 0.01 * np.arange(rows.size)
    return CooMatrix(n, n, rows, cols, vals)


def dense_of(m: CooMatrix) -> np.ndarray:
    a = np.zeros((m.n_rows, m.n_cols))
    a[m.rows, m.cols] = m.values
    return a


def entry_multiset(m: CooMatrix) -> list:
    return sorted(zip(m.rows.tolist(), m.cols.tolist(), m.values.tolist()))


def rel_error(y, y_ref) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_ref = np.asarray(y_ref, dtype=np.float64)
    denom = float(np.max(np.abs(y_ref))) if y_ref.size else 0.0
    diff = float(np.max(np.abs(y - y_ref))) if y_ref.size else 0.0
    return diff / denom if denom > 0.0 else diff


def pipeline(m: CooMatrix, profile: DeviceProfile, tau: int = 8, parts=None, seed: int = 0):
    """Run the preprocessing chain; returns (params, partition, plan, ehyb)."""
    params = compute_params(m.n_rows, tau, profile)
    if parts is None:
        g = build_graph(m)
        parts = partition_graph(g, params.n_parts, params.vec_cache_size, seed=seed)
    cls = classify_rows(m, parts)
    plan = build_reorder_plan(cls, params, parts)
    return params, parts, plan, assemble_ehyb(m, plan, params, parts)


def corpus_cases():
    """Specs for the acceptance corpus: 500 random cases plus stencil families.

    Yields (name, matrix, tau, profile, partition_or_None, seed).
    """
    rng = np.random.default_rng(20240611)
    for i in range(500):
        n = int(rng.integers(8, 513))
        density = float(np.exp(rng.uniform(np.log(0.001), np.log(0.1))))
        tau = 4 if i % 5 == 4 else 8
        procs = int(rng.choice([1, 2, 4]))
        warp = int(rng.choice([4, 8, 32]))
        slots = warp * int(rng.integers(1, 9))
        profile = DeviceProfile(num_processors=procs, warp_size=warp, shm_max=slots * tau)
        m = random_coo(n, density, seed=int(rng.integers(0, 2**31)))
        params = compute_params(n, tau, profile)
        if i % 2 == 0:
            parts = None  # built-in partitioner
        else:
            parts = random_partition(
                n, params.n_parts, params.vec_cache_size, seed=int(rng.integers(0, 2**31))
            )
        yield f"random[{i}] n={n}", m, tau, profile, parts, i
    stencil_profile = DeviceProfile(num_processors=4, warp_size=32, shm_max=48 * 1024)
    for n in (64, 512, 4096, 32768):
        yield f"chain n={n}", laplacian_1d(n), 8, stencil_profile, None, 0
    for k in (8, 16, 64, 181):
        yield f"grid2d {k}x{k}", laplacian_2d(k, k), 8, stencil_profile, None, 0
    for k in (4, 8, 16, 32):
        yield f"grid3d {k}^3", laplacian_3d(k, k, k), 8, stencil_profile, None, 0
