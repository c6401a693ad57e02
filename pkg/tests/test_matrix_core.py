"""Storage types, layouts, the HSM1 format, row scaling, and mirroring."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from hsdla import (
    AtomBlockLayout,
    ComplexDense,
    ContractViolationError,
    FlopLedger,
    HermitianAccumulator,
    read_hsm1,
    scale_rows,
    write_hsm1,
)
from hsdla.matrix import HSM1_MAGIC

from conftest import rand_complex


def test_zeros_defaults_leading_dimension_to_rows():
    m = ComplexDense.zeros(5, 3)
    assert m.shape == (5, 3)
    assert m.leading_dimension == 5
    assert m.array.flags.f_contiguous


def test_capacity_allocation_and_block_views_share_memory():
    m = ComplexDense.zeros(7, 4, capacity_rows=12)
    assert m.leading_dimension == 12
    blk = m.block(2, 3)
    blk.array[:] = 1.0 + 2.0j
    assert_array_equal(m.array[2:5], np.full((3, 4), 1.0 + 2.0j))
    assert blk.shares_buffer(m)
    assert m.full_capacity().rows == 12


def test_block_bounds_checked():
    m = ComplexDense.zeros(4, 2)
    with pytest.raises(ContractViolationError):
        m.block(3, 2)
    with pytest.raises(ContractViolationError):
        ComplexDense.zeros(5, 2, capacity_rows=3)


def test_from_array_copies():
    src = np.ones((2, 2), dtype=complex)
    m = ComplexDense.from_array(src)
    src[0, 0] = 7.0
    assert m.array[0, 0] == 1.0


def test_column_major_element_order():
    m = ComplexDense.from_array([[1 + 0j, 3 + 0j], [2 + 0j, 4 + 0j]])
    flat = np.asarray(m.array).ravel(order="F")
    assert_array_equal(flat, [1, 2, 3, 4])


def test_layout_offsets_and_capacity():
    lay = AtomBlockLayout((4, 9, 1), 9)
    assert lay.atom_count == 3
    assert_array_equal(lay.offsets, [0, 4, 13, 14])
    assert lay.total_rows == 14
    assert lay.capacity_rows == 27
    for a in range(3):
        assert lay.offsets[a + 1] - lay.offsets[a] == lay.block_heights[a]
    assert lay.total_rows <= lay.capacity_rows


def test_layout_rejects_bad_heights():
    with pytest.raises(ContractViolationError):
        AtomBlockLayout((0, 3))
    with pytest.raises(ContractViolationError):
        AtomBlockLayout((4, 9), 4)  # capacity below tallest block
    with pytest.raises(ContractViolationError):
        AtomBlockLayout(())


# -- scale_rows -------------------------------------------------------------

def test_scale_rows_ones_is_identity():
    rng = np.random.default_rng(0)
    b = ComplexDense.from_array(rand_complex(rng, 4, 3))
    before = b.array.copy()
    led = FlopLedger()
    scale_rows(b, np.ones(4), led)
    assert_array_equal(b.array, before)
    assert led.row_scale == 2 * 4 * 3


def test_scale_rows_zeros_annihilates():
    rng = np.random.default_rng(1)
    b = ComplexDense.from_array(rand_complex(rng, 3, 5))
    scale_rows(b, np.zeros(3), FlopLedger())
    assert_array_equal(b.array, np.zeros((3, 5), dtype=complex))


def test_scale_rows_matches_per_element_multiply():
    rng = np.random.default_rng(4)
    vals = rand_complex(rng, 4, 3)
    b = ComplexDense.from_array(vals)
    d = np.array([2.0, 0.5, 1.0, 3.0])
    scale_rows(b, d, FlopLedger())
    expected = np.array([[vals[i, j] * d[i] for j in range(3)] for i in range(4)])
    assert_array_equal(b.array, expected)  # real scaling is exact per element


def test_scale_rows_length_mismatch():
    b = ComplexDense.zeros(3, 2)
    with pytest.raises(ContractViolationError):
        scale_rows(b, np.ones(4), FlopLedger())


# -- mirror_to_full -----------------------------------------------------------

def test_mirror_one_by_one():
    acc = HermitianAccumulator(1)
    acc.matrix.array[0, 0] = 3.0
    full = acc.mirror_to_full()
    assert full.array[0, 0] == 3.0 + 0.0j


def test_mirror_two_by_two_definition():
    acc = HermitianAccumulator(2)
    acc.matrix.array[0, 0] = 1.0
    acc.matrix.array[1, 0] = 2.0 - 1.0j
    acc.matrix.array[1, 1] = 4.0
    acc.matrix.array[0, 1] = np.nan  # unspecified until mirrored
    full = acc.mirror_to_full().array
    assert_array_equal(full, np.array([[1.0, 2.0 + 1.0j], [2.0 - 1.0j, 4.0]]))


def test_mirror_is_exactly_hermitian_and_zeroes_diagonal_imag():
    rng = np.random.default_rng(9)
    acc = HermitianAccumulator(6)
    acc.matrix.array[:] = rand_complex(rng, 6, 6)
    full = acc.mirror_to_full().array
    assert_array_equal(full, full.conj().T)
    assert_array_equal(full.diagonal().imag, np.zeros(6))


# -- FlopLedger ----------------------------------------------------------------

def test_ledger_totals_and_monotonicity():
    led = FlopLedger()
    led.add("hermitian_rank_k", 10)
    led.add("cholesky", 5)
    assert led.total == 15
    assert led.as_dict()["total"] == 15
    with pytest.raises(ContractViolationError):
        led.add("row_scale", -1)


# -- HSM1 format ----------------------------------------------------------------

def test_hsm1_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    m = ComplexDense.from_array(rand_complex(rng, 5, 7))
    path = tmp_path / "m.hsm1"
    write_hsm1(path, m)
    back = read_hsm1(path)
    assert back.shape == (5, 7)
    assert_array_equal(back.array, m.array)
    assert back.leading_dimension == 5  # always compacted on write


def test_hsm1_byte_layout(tmp_path):
    m = ComplexDense.from_array(np.array([[1.0 + 2.0j, 3.0 + 4.0j]]))
    path = tmp_path / "m.hsm1"
    write_hsm1(path, m)
    raw = path.read_bytes()
    assert raw[:8] == HSM1_MAGIC == b"HSDLAM1\x00"
    assert int.from_bytes(raw[8:16], "little") == 1
    assert int.from_bytes(raw[16:24], "little") == 2
    vals = np.frombuffer(raw[24:], dtype="<f8")
    assert_array_equal(vals, [1.0, 2.0, 3.0, 4.0])  # (re, im) pairs column-major
    assert len(raw) == 24 + 16 * 1 * 2


def test_hsm1_column_major_payload(tmp_path):
    m = ComplexDense.from_array(np.array([[1, 3], [2, 4]], dtype=complex))
    path = tmp_path / "cm.hsm1"
    write_hsm1(path, m)
    vals = np.frombuffer(path.read_bytes()[24:], dtype="<c16")
    assert_array_equal(vals, [1, 2, 3, 4])


def test_hsm1_strided_view_compacted(tmp_path):
    big = ComplexDense.zeros(10, 3, capacity_rows=10)
    rng = np.random.default_rng(5)
    big.array[:] = rand_complex(rng, 10, 3)
    view = big.block(2, 4)
    path = tmp_path / "v.hsm1"
    write_hsm1(path, view)
    back = read_hsm1(path)
    assert_array_equal(back.array, view.array)


def test_hsm1_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.hsm1"
    path.write_bytes(b"NOTHSM1\x00" + b"\x00" * 32)
    with pytest.raises(ValueError, match="magic"):
        read_hsm1(path)


def test_hsm1_rejects_truncated_payload(tmp_path):
    path = tmp_path / "trunc.hsm1"
    good = ComplexDense.zeros(3, 3)
    write_hsm1(path, good)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(ValueError, match="payload"):
        read_hsm1(path)


def test_hsm1_rejects_non_finite(tmp_path):
    m = ComplexDense.zeros(2, 2)
    m.array[0, 0] = np.inf
    with pytest.raises(ContractViolationError):
        write_hsm1(tmp_path / "x.hsm1", m)
