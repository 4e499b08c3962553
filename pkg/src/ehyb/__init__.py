"""EHYB: explicitly-caching hybrid sparse-matrix format and SpMV engine."""

from .engine import (
    ExecStats,
    ExecutionConfig,
    spmv_csr,
    spmv_ehyb,
    spmv_ehyb_user,
    traffic_model,
)
from .format import (
    DEFAULT_PROFILE,
    MAX_LOCAL_INDEX,
    DeviceProfile,
    EhybMatrix,
    EhybParams,
    FootprintStats,
    ReorderPlan,
    RowClassification,
    assemble_ehyb,
    build_ehyb,
    build_reorder_plan,
    classify_rows,
    compute_params,
    ehyb_to_coo,
    footprint_stats,
    permute_vector,
    unpermute_vector,
)
from .matrix_io import (
    ContainerError,
    CooMatrix,
    CsrMatrix,
    MatrixMarketError,
    UnsupportedFormatError,
    coo_to_csr,
    csr_to_coo,
    parse_matrix_market,
    read_ehyb_container,
    write_ehyb_container,
    write_matrix_market,
)
from .partition import (
    AdjacencyGraph,
    CutMetrics,
    PartitionMap,
    build_graph,
    cut_metrics,
    load_partition_file,
    partition_graph,
    random_partition,
    rebalance_partition,
    save_partition_file,
)

__version__ = "0.1.0"

__all__ = [
    "AdjacencyGraph",
    "ContainerError",
    "CooMatrix",
    "CsrMatrix",
    "CutMetrics",
    "DEFAULT_PROFILE",
    "DeviceProfile",
    "EhybMatrix",
    "EhybParams",
    "ExecStats",
    "ExecutionConfig",
    "FootprintStats",
    "MAX_LOCAL_INDEX",
    "MatrixMarketError",
    "PartitionMap",
    "ReorderPlan",
    "RowClassification",
    "UnsupportedFormatError",
    "assemble_ehyb",
    "build_ehyb",
    "build_graph",
    "build_reorder_plan",
    "classify_rows",
    "compute_params",
    "coo_to_csr",
    "csr_to_coo",
    "cut_metrics",
    "ehyb_to_coo",
    "footprint_stats",
    "load_partition_file",
    "parse_matrix_market",
    "partition_graph",
    "permute_vector",
    "random_partition",
    "read_ehyb_container",
    "rebalance_partition",
    "save_partition_file",
    "spmv_csr",
    "spmv_ehyb",
    "spmv_ehyb_user",
    "traffic_model",
    "unpermute_vector",
    "write_ehyb_container",
    "write_matrix_market",
]
