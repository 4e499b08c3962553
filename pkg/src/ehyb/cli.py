"""Command-line front end: convert, verify, bench, stats.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from .engine import ExecutionConfig, spmv_csr, spmv_ehyb, spmv_ehyb_user, traffic_model
from .format import (
    DEFAULT_PROFILE,
    DeviceProfile,
    QUOTED_DOUBLE_PRECISION_SAVINGS,
    assemble_ehyb,
    build_reorder_plan,
    classify_rows,
    compute_params,
    ehyb_to_coo,
    footprint_stats,
    permute_vector,
)
from .matrix_io import (
    ContainerError,
    MatrixMarketError,
    coo_to_csr,
    parse_matrix_market,
    read_ehyb_container,
    write_ehyb_container,
)
from .partition import (
    PartitionMap,
    build_graph,
    cut_metrics,
    load_partition_file,
    partition_graph,
    rebalance_partition,
)

LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407
LCG_SEED_MIX = 0x9E3779B97F4A7C15

BENCH_CSV_SCHEMA = 1
BENCH_CSV_COLUMNS = [
    "schema_version",
    "matrix",
    "kernel",
    "dimension",
    "nnz",
    "n_parts",
    "vec_cache_size",
    "inner_fraction",
    "nnz_ell",
    "nnz_er",
    "footprint_total_bytes",
    "savings_vs_32bit_cols",
    "traffic_model_bytes",
    "workers",
    "scheduling",
    "reps",
    "warmup",
    "median_s",
    "gflops",
    "partition_s",
    "reorder_assemble_s",
    "prep_to_spmv_ratio",
]
_CSV_INT_COLS = {
    "schema_version", "dimension", "nnz", "n_parts", "vec_cache_size",
    "nnz_ell", "nnz_er", "footprint_total_bytes", "traffic_model_bytes",
    "workers", "reps", "warmup",
}
_CSV_FLOAT_COLS = {
    "inner_fraction", "savings_vs_32bit_cols", "median_s", "gflops",
    "partition_s", "reorder_assemble_s", "prep_to_spmv_ratio",
}


def deterministic_vector(length: int, seed: int) -> np.ndarray:
    """Seeded pseudo-random vector with entries in [-1, 1).

    Platform-independent 64-bit LCG so verification failures reproduce
    everywhere: s_0 = seed XOR 0x9E3779B97F4A7C15, s_k = (a s_{k-1} + c)
    mod 2^64 with a = 6364136223846793005 and c = 1442695040888963407;
    entry k is the top 53 bits of s_{k+1} mapped linearly onto [-1, 1).
    """
    if length < 0:
        raise ValueError("length must be non-negative")
    s0 = np.uint64((seed ^ LCG_SEED_MIX) & 0xFFFFFFFFFFFFFFFF)
    a = np.uint64(LCG_MULTIPLIER)
    c = np.uint64(LCG_INCREMENT)
    with np.errstate(over="ignore"):
        apows = np.cumprod(np.full(length, a, dtype=np.uint64))
        prefix = np.concatenate((np.ones(1, dtype=np.uint64), apows[:-1]))
        geo = np.cumsum(prefix, dtype=np.uint64)
        states = apows * s0 + c * geo
    unit = (states >> np.uint64(11)).astype(np.float64) * (2.0**-53)
    return 2.0 * unit - 1.0


@dataclass(frozen=True)
class KernelTiming:
    kernel: str
    median_s: float
    gflops: float


@dataclass(eq=False)
class BenchReport:
    matrix: str
    dimension: int
    nnz: int
    n_parts: int
    vec_cache_size: int
    inner_fraction: float
    nnz_ell: int
    nnz_er: int
    footprint_total_bytes: int
    savings_vs_32bit_cols: float
    traffic_model_bytes: int
    workers: int
    scheduling: str
    reps: int
    warmup: int
    partition_s: float
    reorder_assemble_s: float
    prep_to_spmv_ratio: float
    kernels: list

    def rows(self) -> list[dict]:
        shared = {k: v for k, v in asdict(self).items() if k != "kernels"}
        shared["schema_version"] = BENCH_CSV_SCHEMA
        out = []
        for kt in self.kernels:
            row = dict(shared)
            row.update(kernel=kt.kernel, median_s=kt.median_s, gflops=kt.gflops)
            out.append({col: row[col] for col in BENCH_CSV_COLUMNS})
        return out


def write_bench_csv(report: BenchReport, fh) -> None:
    writer = csv.DictWriter(fh, fieldnames=BENCH_CSV_COLUMNS)
    writer.writeheader()
    for row in report.rows():
        writer.writerow(row)


def read_bench_csv(source) -> list[dict]:
    """Parse a bench CSV back into typed rows; rejects unknown schemas."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="") as fh:
            return read_bench_csv(fh)
    rows = list(csv.DictReader(source))
    out = []
    for row in rows:
        if int(row.get("schema_version", -1)) != BENCH_CSV_SCHEMA:
            raise ValueError(f"unsupported bench CSV schema {row.get('schema_version')}")
        typed = {}
        for key, val in row.items():
            if key in _CSV_INT_COLS:
                typed[key] = int(val)
            elif key in _CSV_FLOAT_COLS:
                typed[key] = float(val)
            else:
                typed[key] = val
        out.append(typed)
    return out


def _add_device_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--P", type=int, default=DEFAULT_PROFILE.num_processors,
                   help="simulated processor count (default 80)")
    p.add_argument("--warp", type=int, default=DEFAULT_PROFILE.warp_size,
                   help="warp size (default 32)")
    p.add_argument("--shm-bytes", type=int, default=DEFAULT_PROFILE.shm_max,
                   help="shared memory per block in bytes (default 49152)")
    p.add_argument("--tau", type=int, choices=(4, 8), default=8,
                   help="bytes per stored value: 4 single, 8 double")
    p.add_argument("--parts-file", default=None,
                   help="partition interchange file (one 0-based id per vertex line)")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for the built-in partitioner and test vectors")


def _profile(args) -> DeviceProfile:
    return DeviceProfile(num_processors=args.P, warp_size=args.warp, shm_max=args.shm_bytes)


def _build_pipeline(path: str, args, tau: int):
    """Parse a .mtx file and run the preprocessing steps, timing the split."""
    m = parse_matrix_market(path)
    if not m.is_square:
        raise ValueError("matrix must be square")
    params = compute_params(m.n_rows, tau, _profile(args))
    t0 = time.perf_counter()
    graph = build_graph(m)
    if args.parts_file:
        parts = load_partition_file(args.parts_file, m.n_rows, n_parts=params.n_parts)
        parts = PartitionMap.from_assignment(parts.assignment, n_parts=params.n_parts)
        if int(parts.part_sizes.max(initial=0)) > params.vec_cache_size:
            parts = rebalance_partition(graph, parts, params.vec_cache_size)
    else:
        parts = partition_graph(graph, params.n_parts, params.vec_cache_size, seed=args.seed)
    t1 = time.perf_counter()
    cls = classify_rows(m, parts)
    plan = build_reorder_plan(cls, params, parts)
    e = assemble_ehyb(m, plan, params, parts)
    t2 = time.perf_counter()
    return m, parts, e, t1 - t0, t2 - t1


def cmd_convert(args) -> int:
    m, parts, e, t_part, t_reorder = _build_pipeline(args.input, args, args.tau)
    out_path = args.output or os.path.splitext(args.input)[0] + ".ehyb"
    write_ehyb_container(e, out_path)
    metrics = cut_metrics(m, parts)
    record = {
        "matrix": os.path.basename(args.input),
        "dimension": m.n_rows,
        "nnz": m.nnz,
        "n_parts": e.n_parts,
        "vec_cache_size": e.params.vec_cache_size,
        "inner_fraction": metrics.inner_fraction,
        "nnz_ell": e.nnz_ell,
        "nnz_er": e.nnz_er,
        "partition_s": t_part,
        "reorder_assemble_s": t_reorder,
        "output": out_path,
    }
    print(json.dumps(record))
    return 0


def _rel_error(y: np.ndarray, y_ref: np.ndarray) -> float:
    denom = float(np.max(np.abs(y_ref))) if y_ref.size else 0.0
    diff = float(np.max(np.abs(y.astype(np.float64) - y_ref))) if y_ref.size else 0.0
    return diff / denom if denom > 0.0 else diff


def cmd_verify(args) -> int:
    if args.vectors < 1:
        raise ValueError("--vectors must be >= 1")
    cfg = ExecutionConfig(worker_count=args.workers, scheduling=args.scheduling)
    if args.input.endswith(".ehyb"):
        try:
            e = read_ehyb_container(args.input)
        except ContainerError as exc:
            print(json.dumps({"status": "fail", "reason": f"container: {exc}"}))
            return 1
        m = ehyb_to_coo(e)
    else:
        m, _, e, _, _ = _build_pipeline(args.input, args, args.tau)
    tol = args.tolerance
    if tol is None:
        tol = 1e-12 if e.params.tau == 8 else 1e-5
    csr = coo_to_csr(m)
    worst = 0.0
    failing_seed = None
    for i in range(args.vectors):
        seed = args.seed + i
        x = deterministic_vector(m.n_rows, seed)
        y = spmv_ehyb_user(e, x, cfg)
        y_ref = spmv_csr(csr, x)
        err = _rel_error(y, y_ref)
        if err > worst:
            worst = err
        if err > tol and failing_seed is None:
            failing_seed = seed
    record = {
        "matrix": os.path.basename(args.input),
        "vectors": args.vectors,
        "max_rel_error": worst,
        "tolerance": tol,
        "status": "pass" if failing_seed is None else "fail",
    }
    if failing_seed is not None:
        record["failing_seed"] = failing_seed
    print(json.dumps(record))
    return 0 if failing_seed is None else 1


def _median_time(fn, reps: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    samples.sort()
    mid = len(samples) // 2
    if len(samples) % 2:
        return samples[mid]
    return 0.5 * (samples[mid - 1] + samples[mid])


def cmd_bench(args) -> int:
    if args.reps < 1 or args.warmup < 0:
        raise ValueError("--reps must be >= 1 and --warmup >= 0")
    tau = 4 if args.precision == "f32" else 8
    m, parts, e, t_part, t_reorder = _build_pipeline(args.input, args, tau)
    cfg = ExecutionConfig(worker_count=args.workers, scheduling=args.scheduling)
    x = deterministic_vector(m.n_rows, args.seed)
    xr = permute_vector(x, e.plan)
    csr = coo_to_csr(m)

    med_ehyb = _median_time(lambda: spmv_ehyb(e, xr, cfg), args.reps, args.warmup)
    med_csr = _median_time(lambda: spmv_csr(csr, x), args.reps, args.warmup)
    flops = 2 * m.nnz
    fp = footprint_stats(e)
    metrics = cut_metrics(m, parts)
    report = BenchReport(
        matrix=os.path.basename(args.input),
        dimension=m.n_rows,
        nnz=m.nnz,
        n_parts=e.n_parts,
        vec_cache_size=e.params.vec_cache_size,
        inner_fraction=metrics.inner_fraction,
        nnz_ell=e.nnz_ell,
        nnz_er=e.nnz_er,
        footprint_total_bytes=fp.total_bytes,
        savings_vs_32bit_cols=fp.savings_vs_32bit_cols,
        traffic_model_bytes=traffic_model(e),
        workers=args.workers,
        scheduling=args.scheduling,
        reps=args.reps,
        warmup=args.warmup,
        partition_s=t_part,
        reorder_assemble_s=t_reorder,
        prep_to_spmv_ratio=(t_part + t_reorder) / med_ehyb if med_ehyb > 0 else 0.0,
        kernels=[
            KernelTiming("ehyb", med_ehyb, flops / med_ehyb / 1e9 if med_ehyb > 0 else 0.0),
            KernelTiming("csr-oracle", med_csr, flops / med_csr / 1e9 if med_csr > 0 else 0.0),
        ],
    )
    if args.out == "csv":
        buf = io.StringIO()
        write_bench_csv(report, buf)
        text = buf.getvalue()
    else:
        payload = asdict(report)
        payload["schema_version"] = BENCH_CSV_SCHEMA
        text = json.dumps(payload, indent=2) + "\n"
    if args.output:
        with open(args.output, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_stats(args) -> int:
    m, parts, e, _, _ = _build_pipeline(args.input, args, args.tau)
    metrics = cut_metrics(m, parts)
    fp = footprint_stats(e)
    n_parts = e.n_parts
    vec = e.params.vec_cache_size
    widths = e.ell_row_widths.reshape(n_parts, vec)
    histograms = []
    for p in range(n_parts):
        vals, counts = np.unique(widths[p], return_counts=True)
        histograms.append(
            {"part": p, "widths": {str(int(w)): int(ct) for w, ct in zip(vals, counts)}}
        )
    footprint = {
        "ell_bytes": fp.ell_bytes,
        "er_bytes": fp.er_bytes,
        "total_bytes": fp.total_bytes,
        "savings_vs_32bit_cols": fp.savings_vs_32bit_cols,
    }
    if e.params.tau == 8:
        # per-slot arithmetic says 1/6; the circulated 13.3% figure is
        # surfaced, unresolved, rather than silently dropped
        footprint["quoted_double_precision_savings"] = QUOTED_DOUBLE_PRECISION_SAVINGS
        footprint["savings_note"] = (
            "per-slot arithmetic gives 16.7% for 8-byte values; the 13.3% "
            "figure quoted elsewhere is unresolved (it presumably includes "
            "metadata arrays in its denominator)"
        )
    record = {
        "matrix": os.path.basename(args.input),
        "dimension": m.n_rows,
        "padded_dimension": e.padded_dimension,
        "nnz": m.nnz,
        "n_parts": n_parts,
        "vec_cache_size": vec,
        "inner_fraction": metrics.inner_fraction,
        "er_rows": e.plan.n_er_rows,
        "nnz_ell": e.nnz_ell,
        "nnz_er": e.nnz_er,
        "padding_overhead": (e.padded_dimension - m.n_rows) / m.n_rows,
        "ell_slot_fill": e.nnz_ell / e.val_ell.size if e.val_ell.size else 1.0,
        "footprint": footprint,
        "traffic_model_bytes": traffic_model(e),
        "width_histograms": histograms,
    }
    print(json.dumps(record))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehyb",
        description="EHYB sparse-matrix toolkit: convert, verify, bench, stats",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a .mtx file to a .ehyb container")
    p.add_argument("input")
    p.add_argument("-o", "--output", default=None, help="output path (default: input stem + .ehyb)")
    _add_device_flags(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("verify", help="check the engine against the CSR oracle")
    p.add_argument("input", help=".mtx or .ehyb file")
    _add_device_flags(p)
    p.add_argument("--vectors", type=int, default=3, help="number of test vectors")
    p.add_argument("--tolerance", type=float, default=None,
                   help="max relative error (default 1e-12 double, 1e-5 single)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--scheduling", choices=("static", "stealing"), default="static")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time the EHYB and CSR kernels")
    p.add_argument("input", help=".mtx file")
    _add_device_flags(p)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--scheduling", choices=("static", "stealing"), default="static")
    p.add_argument("--precision", choices=("f32", "f64"), default="f64")
    p.add_argument("--out", choices=("csv", "json"), default="json")
    p.add_argument("--output", default=None, help="write the report here instead of stdout")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stats", help="report format and traffic statistics")
    p.add_argument("input", help=".mtx file")
    _add_device_flags(p)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MatrixMarketError, ContainerError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
