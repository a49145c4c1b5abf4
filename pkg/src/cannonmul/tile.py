"""Dense matrix blocks, the local multiply-accumulate kernel, and the reference oracle.

A tile is one worker's square (or during construction, rectangular) block of a
matrix: contiguous row-major storage, one of three element types.  The
multiply-accumulate kernel is a jitted i-k-j triple loop: the innermost loop
runs over a row of ``b`` and a row of ``c`` with unit stride and no
data-dependent branches, which is the shape LLVM auto-vectorizes into
superword/FMA code.  No manual unrolling, no intrinsics.

``oracle_multiply`` is the independent reference: numpy's einsum in its
non-optimized form, i.e. a plain C triple loop with ascending-k accumulation.
The two paths share no code.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ContractViolation, GridIncompatibility


class ElementType(enum.Enum):
    """Supported element types. Byte widths: 8, 4, 4."""

    FLOAT64 = "f64"
    FLOAT32 = "f32"
    INT32 = "i32"

    @property
    def np_dtype(self) -> np.dtype:
        return _NP_DTYPES[self]

    @property
    def itemsize(self) -> int:
        return self.np_dtype.itemsize

    @classmethod
    def parse(cls, code: str) -> "ElementType":
        try:
            return cls(code)
        except ValueError:
            raise ContractViolation(
                f"unknown element type {code!r}; expected one of f64, f32, i32"
            ) from None

    @classmethod
    def of_array(cls, arr: np.ndarray) -> "ElementType":
        for et, dt in _NP_DTYPES.items():
            if arr.dtype == dt:
                return et
        raise ContractViolation(f"unsupported array dtype {arr.dtype}")


# Explicit little-endian dtypes: tile bytes go on the wire as-is.
_NP_DTYPES = {
    ElementType.FLOAT64: np.dtype("<f8"),
    ElementType.FLOAT32: np.dtype("<f4"),
    ElementType.INT32: np.dtype("<i4"),
}


@dataclass
class DenseTile:
    """A dense row-major matrix block.

    ``array`` is always 2-D, C-contiguous, and owns its data; element (i, j)
    lives at flat index ``i * cols + j``.
    """

    array: np.ndarray

    def __post_init__(self):
        a = self.array
        if a.ndim != 2:
            raise ContractViolation(f"tile must be 2-D, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ContractViolation(f"tile dimensions must be positive, got {a.shape}")
        ElementType.of_array(a)  # rejects unsupported dtypes
        if not a.flags.c_contiguous:
            self.array = np.ascontiguousarray(a)

    @property
    def rows(self) -> int:
        return self.array.shape[0]

    @property
    def cols(self) -> int:
        return self.array.shape[1]

    @property
    def dtype(self) -> ElementType:
        return ElementType.of_array(self.array)

    @property
    def nbytes(self) -> int:
        return self.array.nbytes

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the elements."""
        return self.array.reshape(-1)

    def bytes_view(self) -> memoryview:
        """Writable byte view of the storage (what goes on the wire)."""
        return memoryview(self.array).cast("B")

    @classmethod
    def zeros(cls, rows: int, cols: int, dtype: ElementType) -> "DenseTile":
        return cls(np.zeros((rows, cols), dtype=dtype.np_dtype))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "DenseTile":
        return cls(np.ascontiguousarray(arr))

    def copy(self) -> "DenseTile":
        return DenseTile(self.array.copy())

    def same_shape_zeros(self) -> "DenseTile":
        return DenseTile.zeros(self.rows, self.cols, self.dtype)


@njit(cache=True, nogil=True)
def _mac_kernel(c, a, b):  # pragma: no cover - exercised via local_dot_accumulate
    m, kk = a.shape
    n = b.shape[1]
    for i in range(m):
        for k in range(kk):
            aik = a[i, k]
            # unit-stride over rows of b and c; independent accumulators per j
            for j in range(n):
                c[i, j] += aik * b[k, j]


def _check_mac_contract(c: DenseTile, a: DenseTile, b: DenseTile):
    if a.cols != b.rows:
        raise ContractViolation(
            f"inner dimensions disagree: a is {a.rows}x{a.cols}, b is {b.rows}x{b.cols}"
        )
    if c.rows != a.rows or c.cols != b.cols:
        raise ContractViolation(
            f"output shape {c.rows}x{c.cols} does not match product shape {a.rows}x{b.cols}"
        )
    if not (a.dtype == b.dtype == c.dtype):
        raise ContractViolation(
            f"mixed element types: a={a.dtype.value} b={b.dtype.value} c={c.dtype.value}"
        )


def local_dot_accumulate(c: DenseTile, a: DenseTile, b: DenseTile) -> None:
    """c += a @ b, accumulating onto the existing contents of ``c``.

    int32 accumulation wraps modulo 2**32 (no widening).
    """
    _check_mac_contract(c, a, b)
    if a.array is c.array or b.array is c.array:
        raise ContractViolation("output tile must not alias an input tile")
    _mac_kernel(c.array, a.array, b.array)


def oracle_multiply(a: DenseTile, b: DenseTile) -> DenseTile:
    """Sequential reference product, O(n^3), canonical ascending-k accumulation.

    Deterministic for fixed inputs; independent of the jitted kernel.
    """
    if a.cols != b.rows:
        raise ContractViolation(
            f"inner dimensions disagree: a is {a.rows}x{a.cols}, b is {b.rows}x{b.cols}"
        )
    if a.dtype != b.dtype:
        raise ContractViolation(
            f"mixed element types: a={a.dtype.value} b={b.dtype.value}"
        )
    out = np.einsum("ik,kj->ij", a.array, b.array, optimize=False)
    return DenseTile(np.ascontiguousarray(out))


def split_into_blocks(m: DenseTile, q: int) -> list[list[DenseTile]]:
    """Cut a square matrix into a q x q grid of contiguous square blocks.

    Block (i, j) is the (n/q)x(n/q) submatrix whose top-left corner is
    (i*n/q, j*n/q).  Raises GridIncompatibility when q does not divide n.
    """
    if m.rows != m.cols:
        raise ContractViolation(f"matrix must be square, got {m.rows}x{m.cols}")
    if q < 1:
        raise ContractViolation(f"grid side must be >= 1, got {q}")
    n = m.rows
    if n % q != 0:
        raise GridIncompatibility(n, q)
    t = n // q
    return [
        [
            DenseTile(np.ascontiguousarray(m.array[i * t:(i + 1) * t, j * t:(j + 1) * t]))
            for j in range(q)
        ]
        for i in range(q)
    ]


def assemble_from_blocks(blocks: list[list[DenseTile]]) -> DenseTile:
    """Exact inverse of split_into_blocks."""
    q = len(blocks)
    if q < 1 or any(len(row) != q for row in blocks):
        raise ContractViolation("blocks must form a square q x q grid")
    first = blocks[0][0]
    t, dtype = first.rows, first.dtype
    for row in blocks:
        for blk in row:
            if blk.rows != t or blk.cols != t:
                raise ContractViolation(
                    f"ragged block sizes: expected {t}x{t}, got {blk.rows}x{blk.cols}"
                )
            if blk.dtype != dtype:
                raise ContractViolation("blocks disagree on element type")
    out = np.block([[blk.array for blk in row] for row in blocks])
    return DenseTile(np.ascontiguousarray(out))


def pad_to_grid(m: DenseTile, q: int) -> DenseTile:
    """Zero-pad a square matrix up to the next multiple of q (opt-in helper).

    Padding changes flop counts, so it is never applied implicitly.
    """
    if m.rows != m.cols:
        raise ContractViolation(f"matrix must be square, got {m.rows}x{m.cols}")
    n = m.rows
    if n % q == 0:
        return m
    target = ((n + q - 1) // q) * q
    out = np.zeros((target, target), dtype=m.array.dtype)
    out[:n, :n] = m.array
    return DenseTile(out)
