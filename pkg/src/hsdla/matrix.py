"""Column-major complex matrix storage, stacked block layouts, FLOP accounting.

Everything downstream (builder, oracle, CLI) moves data through the types in
this module.  Matrices are complex double precision, stored column-major with
an explicit leading dimension, so row-block views of a tall stacked matrix
share one allocation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ContractViolationError

HSM1_MAGIC = b"HSDLAM1\x00"


class ComplexDense:
    """Complex double-precision matrix, column-major, with explicit leading dimension.

    The matrix is a window of ``rows`` rows starting at ``row_offset`` inside a
    column-major allocation of ``leading_dimension`` rows; element (i, j) of the
    window lives at flat offset ``row_offset + i + j * leading_dimension``.
    Row-block views created with :meth:`block` share the allocation, so writing
    through a view is visible to every other view of the same buffer.
    """

    __slots__ = ("_base", "_row0", "rows")

    def __init__(self, base: np.ndarray, row_offset: int = 0, rows: int | None = None):
        base = np.asarray(base)
        if base.dtype != np.complex128:
            raise ContractViolationError(f"expected complex128 data, got {base.dtype}")
        if base.ndim != 2:
            raise ContractViolationError(f"expected a 2-d buffer, got ndim={base.ndim}")
        if not base.flags.f_contiguous:
            raise ContractViolationError("backing buffer must be column-major (Fortran order)")
        if rows is None:
            rows = base.shape[0] - row_offset
        if row_offset < 0 or rows < 0 or row_offset + rows > base.shape[0]:
            raise ContractViolationError(
                f"window [{row_offset}, {row_offset + rows}) out of bounds for "
                f"allocation of height {base.shape[0]}"
            )
        self._base = base
        self._row0 = row_offset
        self.rows = rows

    @classmethod
    def zeros(cls, rows: int, cols: int, capacity_rows: int | None = None) -> "ComplexDense":
        """Allocate a zeroed matrix; leading dimension defaults to ``rows``."""
        cap = rows if capacity_rows is None else capacity_rows
        if cap < rows:
            raise ContractViolationError(f"capacity_rows {cap} < rows {rows}")
        base = np.zeros((cap, cols), dtype=np.complex128, order="F")
        return cls(base, 0, rows)

    @classmethod
    def from_array(cls, a) -> "ComplexDense":
        """Copy an array-like into a fresh compact (ld == rows) matrix."""
        base = np.array(a, dtype=np.complex128, order="F", copy=True)
        if base.ndim != 2:
            raise ContractViolationError("from_array expects a 2-d array")
        return cls(base)

    @property
    def cols(self) -> int:
        return self._base.shape[1]

    @property
    def leading_dimension(self) -> int:
        return max(self._base.shape[0], 1)

    @property
    def array(self) -> np.ndarray:
        """The (rows, cols) numpy view of the window; writable, shares memory."""
        return self._base[self._row0 : self._row0 + self.rows]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def block(self, row0: int, height: int) -> "ComplexDense":
        """Row-block view of rows [row0, row0 + height) of this window."""
        if row0 < 0 or height < 0 or row0 + height > self.rows:
            raise ContractViolationError(
                f"block [{row0}, {row0 + height}) outside window of {self.rows} rows"
            )
        return ComplexDense(self._base, self._row0 + row0, height)

    def full_capacity(self) -> "ComplexDense":
        """View spanning the entire allocation (all leading_dimension rows)."""
        return ComplexDense(self._base)

    def copy_allocation(self) -> "ComplexDense":
        """Deep copy including the unused capacity region."""
        return ComplexDense(self._base.copy(order="F"), self._row0, self.rows)

    def copy_compact(self) -> "ComplexDense":
        """Deep copy with leading dimension compacted to rows."""
        return ComplexDense.from_array(self.array)

    @property
    def allocated_bytes(self) -> int:
        return self._base.nbytes

    def shares_buffer(self, other: "ComplexDense") -> bool:
        return self._base is other._base

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.array).all())

    def __repr__(self) -> str:  # pragma: no cover
        return f"ComplexDense({self.rows}x{self.cols}, ld={self.leading_dimension})"


@dataclass(frozen=True)
class AtomBlockLayout:
    """Per-atom row-block heights and offsets inside a stacked matrix.

    Blocks are stored contiguously from the top; ``capacity_rows`` =
    atom_count * capacity_block_height may exceed the occupied rows, leaving an
    unused region at the bottom of the allocation.
    """

    block_heights: tuple
    capacity_block_height: int = 0

    def __post_init__(self):
        heights = tuple(int(h) for h in self.block_heights)
        object.__setattr__(self, "block_heights", heights)
        if not heights:
            raise ContractViolationError("layout needs at least one atom block")
        if any(h < 1 for h in heights):
            raise ContractViolationError("block heights must be >= 1")
        cap = self.capacity_block_height or max(heights)
        object.__setattr__(self, "capacity_block_height", int(cap))
        if cap < max(heights):
            raise ContractViolationError(
                f"capacity block height {cap} < tallest block {max(heights)}"
            )

    @property
    def atom_count(self) -> int:
        return len(self.block_heights)

    @property
    def offsets(self) -> np.ndarray:
        """Start offsets per atom plus the total as a trailing entry (len N_A + 1)."""
        return np.concatenate(([0], np.cumsum(self.block_heights))).astype(np.int64)

    @property
    def total_rows(self) -> int:
        return int(sum(self.block_heights))

    @property
    def capacity_rows(self) -> int:
        return self.atom_count * self.capacity_block_height


@dataclass
class FlopLedger:
    """Per-kernel-kind counters of real floating-point operations.

    Counts follow the nominal budgets of the blocked formulation (4mn^2 for a
    Hermitian rank-k update, 8mn^2 for rank-2k, 8mnk for a general product,
    ...), not hardware FMA counts.  The Cholesky budget is the integer
    ``4*n**3 // 3`` so that ledger totals stay exact integers.
    """

    hermitian_rank_k: int = 0
    hermitian_rank_2k: int = 0
    general_product: int = 0
    hermitian_product: int = 0
    triangular_product: int = 0
    cholesky: int = 0
    row_scale: int = 0

    def add(self, kind: str, amount: int):
        if amount < 0:
            raise ContractViolationError("FLOP counters only increase")
        setattr(self, kind, getattr(self, kind) + int(amount))

    @property
    def total(self) -> int:
        return sum(getattr(self, f.name) for f in fields(self))

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["total"] = self.total
        return d


def cholesky_flops(n: int) -> int:
    """Integer cubic-term budget of one n x n complex Cholesky factorization."""
    return 4 * n**3 // 3


class HermitianAccumulator:
    """N x N accumulator whose lower triangle (incl. diagonal) is the valid data.

    The strict upper triangle is unspecified until :meth:`mirror_to_full` copies
    the conjugate transpose of the lower triangle into it.
    """

    def __init__(self, n: int):
        self.matrix = ComplexDense.zeros(n, n)

    @property
    def n(self) -> int:
        return self.matrix.rows

    def mirror_to_full(self) -> ComplexDense:
        """Fill the upper triangle from the lower one; zero diagonal imaginary parts."""
        a = self.matrix.array
        n = self.n
        iu = np.triu_indices(n, 1)
        a[iu] = np.conj(a[iu[1], iu[0]])
        d = np.arange(n)
        a[d, d] = a[d, d].real
        if not np.isfinite(a).all():
            raise ContractViolationError("accumulator contains non-finite values")
        return self.matrix


def scale_rows(b: ComplexDense, d, ledger: FlopLedger) -> ComplexDense:
    """In-place row scaling b[i, :] *= d[i] by real factors; counts 2mn FLOPs."""
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1 or d.shape[0] != b.rows:
        raise ContractViolationError(
            f"need one real factor per row: got {d.shape} for {b.rows} rows"
        )
    arr = b.array
    arr *= d[:, None]
    ledger.add("row_scale", 2 * b.rows * b.cols)
    return b


def write_hsm1(path, m: ComplexDense):
    """Write a matrix in the HSM1 binary format (compacted to ld == rows)."""
    a = m.array
    if not np.isfinite(a).all():
        raise ContractViolationError("refusing to serialize non-finite values")
    with open(path, "wb") as fh:
        fh.write(HSM1_MAGIC)
        fh.write(struct.pack("<QQ", m.rows, m.cols))
        fh.write(np.asfortranarray(a).astype("<c16", copy=False).tobytes(order="F"))


def read_hsm1(path) -> ComplexDense:
    """Read a matrix from the HSM1 binary format."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != HSM1_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, not an HSM1 file")
        header = fh.read(16)
        if len(header) != 16:
            raise ValueError(f"{path}: truncated HSM1 header")
        rows, cols = struct.unpack("<QQ", header)
        payload = fh.read()
    expected = 16 * rows * cols
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} "
            f"for a {rows}x{cols} matrix"
        )
    flat = np.frombuffer(payload, dtype="<c16")
    base = np.asfortranarray(
        flat.reshape((rows, cols), order="F").astype(np.complex128)
    )
    if rows == 0 or cols == 0:
        base = np.zeros((rows, cols), dtype=np.complex128, order="F")
    return ComplexDense(base)
