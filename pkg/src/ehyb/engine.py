"""SpMV execution: a CSR reference kernel and the simulated-device engine.

The simulated device runs one block per partition. Phase 1 copies the
partition's input-vector window into its "shared memory" cache and sweeps the
partition's ELL slices, each lane accumulating its row in storage order.
Phase 2 starts only after every phase-1 write has completed and walks the ER
slices, reading the uncached input vector and scattering partial sums into
the output rows named by y_idx_er. Each output row receives exactly one
phase-1 write and at most one phase-2 accumulate, so results are bit-identical
for every worker count and both scheduling modes.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .format import EhybMatrix, permute_vector, unpermute_vector
from .matrix_io import CsrMatrix

SCHEDULING_MODES = ("static", "stealing")


@dataclass(frozen=True)
class ExecutionConfig:
    """Simulated concurrency: worker_count concurrent blocks; "stealing"
    claims work units from a shared counter, "static" deals them round-robin."""

    worker_count: int = 1
    scheduling: str = "static"
    record_stats: bool = True

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if self.scheduling not in SCHEDULING_MODES:
            raise ValueError(f"scheduling must be one of {SCHEDULING_MODES}")


@dataclass(eq=False)
class ExecStats:
    """cached_loads counts input-vector reads served from a partition cache
    (the ELL entries); uncached_loads the ER-phase reads. flops = 2 * nnz."""

    cached_loads: int
    uncached_loads: int
    flops: int
    bytes_touched_model: int
    slices_per_block: np.ndarray
    er_slices_per_worker: np.ndarray


def spmv_csr(m: CsrMatrix, x) -> np.ndarray:
    """Reference y = A x over CSR storage, float64 accumulation per row in a
    fixed (pairwise, ascending-index) order. The oracle for all equivalence
    tests; independent of the EHYB layout."""
    x = np.asarray(x)
    if x.ndim != 1 or x.size != m.n_cols:
        raise ValueError("length mismatch: x must have n_cols entries")
    y = np.zeros(m.n_rows, dtype=np.float64)
    if m.nnz == 0:
        return y
    prod = m.values * x[m.col_idx].astype(np.float64)
    nz_rows = np.flatnonzero(np.diff(m.row_ptr) > 0)
    y[nz_rows] = np.add.reduceat(prod, m.row_ptr[nz_rows])
    return y


def _traffic_metadata_bytes(e: EhybMatrix) -> int:
    return (
        e.position_ell.nbytes
        + e.width_ell.nbytes
        + e.part_boundary.nbytes
        + e.position_er.nbytes
        + e.width_er.nbytes
        + e.plan.y_idx_er.size * 4
    )


def traffic_model(e: EhybMatrix, tau: int | None = None) -> int:
    """Modeled bytes moved through device memory for one product:

        slots_ell * (tau + 2) + slots_er * (tau + 4)   matrix body
        + metadata bytes                               slice/partition tables
        + dimension * tau                              one cached read of x
                                                       per partition window
        + uncached_loads * tau                         ER-phase x reads
        + dimension * tau                              y writes

    Reporting only; tau defaults to the stored precision and may be
    overridden for what-if comparisons on the same structure.
    """
    if tau is None:
        tau = e.params.tau
    return int(
        e.val_ell.size * (tau + 2)
        + e.val_er.size * (tau + 4)
        + _traffic_metadata_bytes(e)
        + e.dimension * tau
        + e.nnz_er * tau
        + e.dimension * tau
    )


def spmv_ehyb(
    e: EhybMatrix, x_reordered, cfg: ExecutionConfig = ExecutionConfig()
) -> tuple[np.ndarray, ExecStats]:
    """Product in reordered space: y_reordered = A_reordered x_reordered.

    x_reordered must have padded_dimension entries (see permute_vector).
    Computation runs at the stored precision; the result is bit-identical
    across worker counts and scheduling modes.
    """
    x = np.asarray(x_reordered)
    if x.ndim != 1 or x.size != e.padded_dimension:
        raise ValueError("length mismatch: x must have padded_dimension entries")
    dtype = e.val_ell.dtype
    x = np.ascontiguousarray(x, dtype=dtype)
    y = np.zeros(e.padded_dimension, dtype=dtype)

    warp = e.params.warp_size
    vec = e.params.vec_cache_size
    n_parts = e.n_parts
    slices_per_block = vec // warp
    n_er = e.plan.n_er_rows
    n_er_slices = e.width_er.size
    val_ell, col_ell, pos_ell, wid_ell = e.val_ell, e.col_ell, e.position_ell, e.width_ell
    val_er, col_er, pos_er, wid_er = e.val_er, e.col_er, e.position_er, e.width_er
    y_idx = e.plan.y_idx_er

    def run_block(b: int) -> None:
        lo = int(e.part_boundary[b])
        cache = x[lo : lo + vec]
        base = lo // warp
        for s in range(base, base + slices_per_block):
            pos = int(pos_ell[s])
            acc = np.zeros(warp, dtype=dtype)
            for k in range(int(wid_ell[s])):
                seg = slice(pos + k * warp, pos + (k + 1) * warp)
                acc += val_ell[seg] * cache[col_ell[seg]]
            y[s * warp : (s + 1) * warp] = acc

    def run_er_slice(j: int) -> None:
        pos = int(pos_er[j])
        acc = np.zeros(warp, dtype=dtype)
        for k in range(int(wid_er[j])):
            seg = slice(pos + k * warp, pos + (k + 1) * warp)
            acc += val_er[seg] * x[col_er[seg]]
        lanes = min(warp, n_er - j * warp)
        rows = y_idx[j * warp : j * warp + lanes]
        y[rows] += acc[:lanes]

    er_claims = np.zeros(cfg.worker_count, dtype=np.int64)
    if cfg.worker_count == 1:
        for b in range(n_parts):
            run_block(b)
        for j in range(n_er_slices):
            run_er_slice(j)
        er_claims[0] = n_er_slices
    elif cfg.scheduling == "static":
        def sweep(fn, total, wid):
            done = 0
            for i in range(wid, total, cfg.worker_count):
                fn(i)
                done += 1
            return done

        with ThreadPoolExecutor(cfg.worker_count) as pool:
            # list() forces completion: a full barrier between the phases
            list(pool.map(lambda w: sweep(run_block, n_parts, w), range(cfg.worker_count)))
            claims = list(
                pool.map(lambda w: sweep(run_er_slice, n_er_slices, w), range(cfg.worker_count))
            )
        er_claims[:] = claims
    else:
        lock = threading.Lock()
        counter = [0]

        def claim(limit: int) -> int:
            with lock:
                i = counter[0]
                if i >= limit:
                    return -1
                counter[0] = i + 1
                return i

        def steal_loop(fn, limit):
            done = 0
            while (i := claim(limit)) >= 0:
                fn(i)
                done += 1
            return done

        with ThreadPoolExecutor(cfg.worker_count) as pool:
            futs = [pool.submit(steal_loop, run_block, n_parts) for _ in range(cfg.worker_count)]
            for f in futs:
                f.result()  # barrier; re-raises worker failures
            counter[0] = 0
            futs = [
                pool.submit(steal_loop, run_er_slice, n_er_slices)
                for _ in range(cfg.worker_count)
            ]
            er_claims[:] = [f.result() for f in futs]

    stats = ExecStats(
        cached_loads=e.nnz_ell,
        uncached_loads=e.nnz_er,
        flops=2 * e.nnz,
        bytes_touched_model=traffic_model(e) if cfg.record_stats else 0,
        slices_per_block=np.full(n_parts, slices_per_block, dtype=np.int64),
        er_slices_per_worker=er_claims,
    )
    return y, stats


def spmv_ehyb_user(e: EhybMatrix, x, cfg: ExecutionConfig = ExecutionConfig()) -> np.ndarray:
    """Original-order convenience wrapper: permute, multiply, unpermute.

    x has the original dimension; the result dtype matches the stored
    precision (float32 when tau = 4).
    """
    xr = permute_vector(np.asarray(x), e.plan)
    yr, _ = spmv_ehyb(e, xr, cfg)
    return unpermute_vector(yr, e.plan)
