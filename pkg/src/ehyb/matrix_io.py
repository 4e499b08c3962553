"""Sparse matrix ingestion and serialization.

Matrix Market parsing (coordinate variant), COO and CSR representations, and
the binary ".ehyb" container used to persist assembled matrices so the
preprocessing cost can be paid once and amortized over many products.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np


class MatrixMarketError(ValueError):
    """Malformed Matrix Market input; the message names the offending line."""


class UnsupportedFormatError(MatrixMarketError):
    """Valid Matrix Market input that this library deliberately rejects."""


class ContainerError(ValueError):
    """Corrupt, truncated, or incompatible .ehyb container."""


@dataclass(eq=False)
class CooMatrix:
    """Coordinate-format sparse matrix.

    Entries are 0-based and duplicate-free after ingestion (the parser sums
    duplicates). Explicit zeros are kept as structural nonzeros: they cost
    storage like any entry, and dropping them would change nnz-based metrics.
    """

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if not (self.rows.shape == self.cols.shape == self.values.shape):
            raise ValueError("rows, cols and values must have equal length")
        if self.rows.ndim != 1:
            raise ValueError("entry arrays must be one-dimensional")
        if self.rows.size:
            if self.rows.min() < 0 or self.rows.max() >= self.n_rows:
                raise ValueError("row index out of bounds")
            if self.cols.min() < 0 or self.cols.max() >= self.n_cols:
                raise ValueError("column index out of bounds")

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def is_square(self) -> bool:
        return self.n_rows == self.n_cols

    def entry_set(self) -> set:
        """Entries as a set of (row, col, value) triples, for comparisons."""
        return set(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))


@dataclass(eq=False)
class CsrMatrix:
    """Compressed-sparse-row matrix; columns strictly increasing per row."""

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        self.col_idx = np.asarray(self.col_idx, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.row_ptr.size != self.n_rows + 1:
            raise ValueError("row_ptr must have length n_rows + 1")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != self.values.size:
            raise ValueError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ValueError("row_ptr must be non-decreasing")
        if self.col_idx.size != self.values.size:
            raise ValueError("col_idx and values must have equal length")
        nnz = self.values.size
        if nnz > 1:
            # strictly increasing columns inside each row; adjacent pairs that
            # cross a row boundary are exempt
            bad = np.diff(self.col_idx) <= 0
            interior = np.ones(nnz - 1, dtype=bool)
            starts = self.row_ptr[1:-1]
            starts = starts[(starts > 0) & (starts < nnz)]
            interior[starts - 1] = False
            if np.any(bad & interior):
                raise ValueError("col_idx must be strictly increasing within each row")

    @property
    def nnz(self) -> int:
        return int(self.values.size)


def _read_text(source) -> str:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read().decode("latin-1")
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("latin-1")
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("latin-1")
    return data


def parse_matrix_market(source) -> CooMatrix:
    """Parse Matrix Market "coordinate" input into a CooMatrix.

    Accepts a path, raw bytes, or an open file object. Symmetric inputs are
    expanded to general storage (off-diagonal entries mirrored), pattern
    entries get value 1.0, indices are converted from 1-based to 0-based, and
    duplicate coordinates are summed.

    Raises MatrixMarketError naming the offending line for malformed input,
    and UnsupportedFormatError for complex fields, dense "array" files, or
    symmetries other than general/symmetric.
    """
    lines = _read_text(source).splitlines()
    if not lines:
        raise MatrixMarketError("line 1: empty input")

    header = lines[0].strip().split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise MatrixMarketError("line 1: malformed Matrix Market header")
    obj, fmt, field, symmetry = (tok.lower() for tok in header[1:])
    if obj != "matrix":
        raise MatrixMarketError(f"line 1: unsupported object {obj!r}")
    if fmt == "array":
        raise UnsupportedFormatError("line 1: dense 'array' files are not supported")
    if fmt != "coordinate":
        raise MatrixMarketError(f"line 1: unknown format {fmt!r}")
    if field == "complex":
        raise UnsupportedFormatError("line 1: complex-valued matrices are not supported")
    if field not in ("real", "integer", "pattern"):
        raise MatrixMarketError(f"line 1: unknown field {field!r}")
    if symmetry not in ("general", "symmetric"):
        raise UnsupportedFormatError(f"line 1: unsupported symmetry {symmetry!r}")

    # size line: first non-comment, non-blank line after the header
    lineno = 1
    n_lines = len(lines)
    while True:
        if lineno >= n_lines:
            raise MatrixMarketError(f"line {lineno + 1}: missing size line")
        text = lines[lineno].strip()
        lineno += 1
        if text and not text.startswith("%"):
            break
    tokens = text.split()
    if len(tokens) != 3:
        raise MatrixMarketError(f"line {lineno}: size line must be 'rows cols nnz'")
    try:
        n_rows, n_cols, n_declared = (int(t) for t in tokens)
    except ValueError:
        raise MatrixMarketError(f"line {lineno}: size line must contain integers") from None
    if n_rows < 0 or n_cols < 0 or n_declared < 0:
        raise MatrixMarketError(f"line {lineno}: negative size")

    pattern = field == "pattern"
    want = 2 if pattern else 3
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    seen = 0
    while lineno < n_lines:
        text = lines[lineno].strip()
        lineno += 1
        if not text or text.startswith("%"):
            continue
        if seen == n_declared:
            raise MatrixMarketError(
                f"line {lineno}: extra entry beyond the declared {n_declared}"
            )
        tokens = text.split()
        if len(tokens) < want:
            raise MatrixMarketError(f"line {lineno}: expected {want} fields per entry")
        try:
            i = int(tokens[0])
            j = int(tokens[1])
            v = 1.0 if pattern else float(tokens[2])
        except ValueError:
            raise MatrixMarketError(f"line {lineno}: malformed entry") from None
        if not (1 <= i <= n_rows and 1 <= j <= n_cols):
            raise MatrixMarketError(f"line {lineno}: index out of declared bounds")
        rows.append(i - 1)
        cols.append(j - 1)
        vals.append(v)
        seen += 1
    if seen != n_declared:
        raise MatrixMarketError(
            f"line {lineno}: expected {n_declared} entries, found {seen}"
        )

    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    v = np.asarray(vals, dtype=np.float64)
    if symmetry == "symmetric":
        off = r != c
        r, c, v = (
            np.concatenate([r, c[off]]),
            np.concatenate([c, r[off]]),
            np.concatenate([v, v[off]]),
        )

    # sum duplicates; keying by row*n_cols+col also sorts entries by (row, col)
    if r.size:
        key = r * np.int64(max(n_cols, 1)) + c
        uniq, inverse = np.unique(key, return_inverse=True)
        summed = np.zeros(uniq.size, dtype=np.float64)
        np.add.at(summed, inverse, v)
        r = uniq // max(n_cols, 1)
        c = uniq % max(n_cols, 1)
        v = summed
    return CooMatrix(n_rows, n_cols, r, c, v)


def write_matrix_market(m: CooMatrix, sink) -> None:
    """Write a CooMatrix as Matrix Market coordinate/real/general text."""
    order = np.lexsort((m.cols, m.rows))
    out = ["%%MatrixMarket matrix coordinate real general"]
    out.append(f"{m.n_rows} {m.n_cols} {m.nnz}")
    rs = m.rows[order] + 1
    cs = m.cols[order] + 1
    vs = m.values[order]
    for i in range(m.nnz):
        out.append(f"{rs[i]} {cs[i]} {vs[i]:.17g}")
    text = "\n".join(out) + "\n"
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w") as fh:
            fh.write(text)
    else:
        try:
            sink.write(text)
        except TypeError:
            sink.write(text.encode("ascii"))


def coo_to_csr(m: CooMatrix) -> CsrMatrix:
    """Convert COO to CSR, sorting entries by (row, col). Rejects duplicates."""
    order = np.lexsort((m.cols, m.rows))
    rows = m.rows[order]
    cols = m.cols[order]
    vals = m.values[order]
    if rows.size > 1:
        dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
        if np.any(dup):
            raise ValueError("duplicate (row, col) entries")
    counts = np.bincount(rows, minlength=m.n_rows) if rows.size else np.zeros(m.n_rows, np.int64)
    row_ptr = np.zeros(m.n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    return CsrMatrix(m.n_rows, m.n_cols, row_ptr, cols, vals)


def csr_to_coo(m: CsrMatrix) -> CooMatrix:
    rows = np.repeat(np.arange(m.n_rows, dtype=np.int64), np.diff(m.row_ptr))
    return CooMatrix(m.n_rows, m.n_cols, rows, m.col_idx.copy(), m.values.copy())


# --------------------------------------------------------------------------
# .ehyb binary container
#
# Little-endian throughout. Layout:
#   magic "EHYB" | version u32 | value precision tag u32 (4 or 8)
#   payload: every field below, each prefixed with its byte length as u64
#   crc32 of payload, u32
# Field order (scalars are u64; array dtypes as noted):
#   dimension, padded_dimension, k, n_parts, vec_cache_size, warp_size,
#   n_er_rows,
#   reorder_table i32, inverse_table i32, arrange_table i32, y_idx_er i32,
#   part_boundary i32, position_ell i32, width_ell i32, ell_row_widths i32,
#   col_ell u16, val_ell f32|f64,
#   position_er i32, width_er i32, er_row_widths i32, col_er u32,
#   val_er f32|f64
# --------------------------------------------------------------------------

_MAGIC = b"EHYB"
_VERSION = 1

_META_DTYPE = np.dtype("<i4")


def _packed(data: bytes) -> bytes:
    return struct.pack("<Q", len(data)) + data


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.off = 0

    def _take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.payload):
            raise ContainerError(f"truncated stream while reading {what}")
        chunk = self.payload[self.off : self.off + n]
        self.off += n
        return chunk

    def field(self, what: str) -> bytes:
        (length,) = struct.unpack("<Q", self._take(8, f"{what} length"))
        return self._take(length, what)

    def scalar(self, what: str) -> int:
        data = self.field(what)
        if len(data) != 8:
            raise ContainerError(f"bad scalar length for {what}")
        return struct.unpack("<Q", data)[0]

    def array(self, dtype, what: str) -> np.ndarray:
        data = self.field(what)
        dtype = np.dtype(dtype)
        if len(data) % dtype.itemsize:
            raise ContainerError(f"array length not a multiple of item size for {what}")
        return np.frombuffer(data, dtype=dtype).copy()

    def finish(self):
        if self.off != len(self.payload):
            raise ContainerError("trailing bytes after last field")


def write_ehyb_container(e, sink) -> None:
    """Serialize an assembled EhybMatrix; read_ehyb_container inverts bit-exactly."""
    val_dtype = np.dtype("<f4") if e.params.tau == 4 else np.dtype("<f8")
    plan = e.plan
    parts = [
        struct.pack("<Q", e.dimension),
        struct.pack("<Q", e.padded_dimension),
        struct.pack("<Q", e.params.k),
        struct.pack("<Q", e.params.n_parts),
        struct.pack("<Q", e.params.vec_cache_size),
        struct.pack("<Q", e.params.warp_size),
        struct.pack("<Q", plan.n_er_rows),
        np.ascontiguousarray(plan.reorder_table, _META_DTYPE).tobytes(),
        np.ascontiguousarray(plan.inverse_table, _META_DTYPE).tobytes(),
        np.ascontiguousarray(plan.arrange_table, _META_DTYPE).tobytes(),
        np.ascontiguousarray(plan.y_idx_er, _META_DTYPE).tobytes(),
        np.ascontiguousarray(e.part_boundary, _META_DTYPE).tobytes(),
        np.ascontiguousarray(e.position_ell, _META_DTYPE).tobytes(),
        np.ascontiguousarray(e.width_ell, _META_DTYPE).tobytes(),
        np.ascontiguousarray(e.ell_row_widths, _META_DTYPE).tobytes(),
        np.ascontiguousarray(e.col_ell, "<u2").tobytes(),
        np.ascontiguousarray(e.val_ell, val_dtype).tobytes(),
        np.ascontiguousarray(e.position_er, _META_DTYPE).tobytes(),
        np.ascontiguousarray(e.width_er, _META_DTYPE).tobytes(),
        np.ascontiguousarray(e.er_row_widths, _META_DTYPE).tobytes(),
        np.ascontiguousarray(e.col_er, "<u4").tobytes(),
        np.ascontiguousarray(e.val_er, val_dtype).tobytes(),
    ]
    payload = b"".join(_packed(p) for p in parts)
    blob = (
        _MAGIC
        + struct.pack("<I", _VERSION)
        + struct.pack("<I", e.params.tau)
        + payload
        + struct.pack("<I", zlib.crc32(payload))
    )
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            fh.write(blob)
    else:
        sink.write(blob)


def read_ehyb_container(source):
    """Deserialize a .ehyb container back into an EhybMatrix.

    Raises ContainerError on magic/version mismatch, truncation, or CRC
    failure. The checksum is verified before any field is interpreted.
    """
    from .format import EhybMatrix, EhybParams, ReorderPlan  # deferred: avoids cycle

    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            blob = fh.read()
    elif isinstance(source, (bytes, bytearray)):
        blob = bytes(source)
    else:
        blob = source.read()

    if len(blob) < 16:
        raise ContainerError("truncated stream: missing header")
    if blob[:4] != _MAGIC:
        raise ContainerError("bad magic: not an EHYB container")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != _VERSION:
        raise ContainerError(f"unsupported container version {version}")
    (tau,) = struct.unpack("<I", blob[8:12])
    if tau not in (4, 8):
        raise ContainerError(f"invalid precision tag {tau}")
    payload = blob[12:-4]
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc_stored:
        raise ContainerError("checksum failure: payload does not match CRC32")

    rd = _Reader(payload)
    dimension = rd.scalar("dimension")
    padded_dimension = rd.scalar("padded_dimension")
    k = rd.scalar("k")
    n_parts = rd.scalar("n_parts")
    vec_cache_size = rd.scalar("vec_cache_size")
    warp_size = rd.scalar("warp_size")
    n_er_rows = rd.scalar("n_er_rows")
    val_dtype = np.dtype("<f4") if tau == 4 else np.dtype("<f8")
    reorder_table = rd.array(_META_DTYPE, "reorder_table")
    inverse_table = rd.array(_META_DTYPE, "inverse_table")
    arrange_table = rd.array(_META_DTYPE, "arrange_table")
    y_idx_er = rd.array(_META_DTYPE, "y_idx_er")
    part_boundary = rd.array(_META_DTYPE, "part_boundary")
    position_ell = rd.array(_META_DTYPE, "position_ell")
    width_ell = rd.array(_META_DTYPE, "width_ell")
    ell_row_widths = rd.array(_META_DTYPE, "ell_row_widths")
    col_ell = rd.array("<u2", "col_ell")
    val_ell = rd.array(val_dtype, "val_ell")
    position_er = rd.array(_META_DTYPE, "position_er")
    width_er = rd.array(_META_DTYPE, "width_er")
    er_row_widths = rd.array(_META_DTYPE, "er_row_widths")
    col_er = rd.array("<u4", "col_er")
    val_er = rd.array(val_dtype, "val_er")
    rd.finish()

    params = EhybParams(
        k=int(k),
        n_parts=int(n_parts),
        vec_cache_size=int(vec_cache_size),
        tau=int(tau),
        warp_size=int(warp_size),
    )
    plan = ReorderPlan(
        reorder_table=reorder_table,
        inverse_table=inverse_table,
        arrange_table=arrange_table,
        y_idx_er=y_idx_er,
        n_er_rows=int(n_er_rows),
        dimension=int(dimension),
        padded_dimension=int(padded_dimension),
    )
    e = EhybMatrix(
        params=params,
        plan=plan,
        dimension=int(dimension),
        padded_dimension=int(padded_dimension),
        val_ell=val_ell,
        col_ell=col_ell,
        position_ell=position_ell,
        width_ell=width_ell,
        part_boundary=part_boundary,
        ell_row_widths=ell_row_widths,
        val_er=val_er,
        col_er=col_er,
        position_er=position_er,
        width_er=width_er,
        er_row_widths=er_row_widths,
    )
    try:
        e.check()
    except ValueError as exc:
        raise ContainerError(f"inconsistent container contents: {exc}") from exc
    return e
