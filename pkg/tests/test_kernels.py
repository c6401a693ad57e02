"""Kernel contract tests, run identically on both backends.

Every kernel is checked against a plain-Python entrywise oracle, the spec'd
trivial cases, NaN poison in strict upper triangles, and the closed-form FLOP
accounting.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from hsdla import (
    ComplexDense,
    ContractViolationError,
    FlopLedger,
    HermitianAccumulator,
    NotHPDError,
    cholesky_flops,
    get_backend,
)

from conftest import (
    gemm_oracle,
    her2k_oracle,
    herk_oracle,
    hermitian_from_lower,
    poison_upper,
    rand_complex,
    rel_fro,
)


def tril_of(acc):
    return np.tril(acc.matrix.array)


# -- hermitian_rank_k_update ---------------------------------------------------

def test_herk_single_row_rank_one(backend):
    c = HermitianAccumulator(2)
    a = ComplexDense.from_array(np.array([[1.0 + 0j, 1.0j]]))
    led = FlopLedger()
    backend.hermitian_rank_k_update(c, a, led)
    arr = c.matrix.array
    assert arr[0, 0] == 1.0
    assert arr[1, 0] == -1.0j  # conj(i) * 1
    assert arr[1, 1] == 1.0
    assert led.hermitian_rank_k == 4 * 1 * 2 * 2


def valid_lower(rng, n):
    """A legal accumulator state: lower-stored Hermitian data, real diagonal."""
    vals = np.tril(rand_complex(rng, n, n))
    np.fill_diagonal(vals, vals.diagonal().real)
    return vals


def test_herk_zero_update_leaves_c(backend):
    rng = np.random.default_rng(2)
    c = HermitianAccumulator(3)
    c.matrix.array[:] = valid_lower(rng, 3)
    before = c.matrix.array.copy()
    backend.hermitian_rank_k_update(c, ComplexDense.zeros(4, 3), FlopLedger())
    assert_array_equal(c.matrix.array, before)


def test_herk_desk_scale_vs_entrywise_oracle(backend):
    rng = np.random.default_rng(1)
    a_vals = rand_complex(rng, 98, 64)
    c = HermitianAccumulator(64)
    backend.hermitian_rank_k_update(c, ComplexDense.from_array(a_vals), FlopLedger())
    expected = herk_oracle(a_vals)
    norm2 = np.linalg.norm(a_vals) ** 2
    err = np.max(np.abs(tril_of(c) - np.tril(expected)))
    assert err <= 1e-12 * norm2


def test_herk_never_reads_strict_upper_of_c(backend):
    rng = np.random.default_rng(3)
    a_vals = rand_complex(rng, 6, 5)
    c = HermitianAccumulator(5)
    poison_upper(c.matrix)
    backend.hermitian_rank_k_update(c, ComplexDense.from_array(a_vals), FlopLedger())
    assert_allclose(tril_of(c), np.tril(herk_oracle(a_vals)), atol=1e-13)


def test_herk_shape_mismatch_reports_both_shapes(backend):
    with pytest.raises(ContractViolationError, match="3x3.*2x4|rank-k"):
        backend.hermitian_rank_k_update(
            HermitianAccumulator(3), ComplexDense.zeros(2, 4), FlopLedger()
        )


# -- hermitian_rank_2k_update ----------------------------------------------------

def test_her2k_x_equals_b_doubles_rank_k(backend):
    rng = np.random.default_rng(7)
    x_vals = rand_complex(rng, 5, 4)
    x = ComplexDense.from_array(x_vals)
    c1 = HermitianAccumulator(4)
    backend.hermitian_rank_2k_update(c1, x, x, FlopLedger())
    c2 = HermitianAccumulator(4)
    backend.hermitian_rank_k_update(c2, x, FlopLedger())
    assert_allclose(tril_of(c1), 2.0 * tril_of(c2), rtol=1e-13)


def test_her2k_zero_x_leaves_c(backend):
    rng = np.random.default_rng(8)
    c = HermitianAccumulator(3)
    c.matrix.array[:] = valid_lower(rng, 3)
    before = c.matrix.array.copy()
    b = ComplexDense.from_array(rand_complex(rng, 4, 3))
    backend.hermitian_rank_2k_update(c, ComplexDense.zeros(4, 3), b, FlopLedger())
    assert_array_equal(c.matrix.array, before)


def test_her2k_random_vs_oracle(backend):
    rng = np.random.default_rng(3)
    x_vals = rand_complex(rng, 12, 8)
    b_vals = rand_complex(rng, 12, 8)
    c = HermitianAccumulator(8)
    led = FlopLedger()
    backend.hermitian_rank_2k_update(
        c, ComplexDense.from_array(x_vals), ComplexDense.from_array(b_vals), led
    )
    expected = np.tril(her2k_oracle(x_vals, b_vals))
    assert rel_fro(tril_of(c), expected) <= 1e-12
    assert led.hermitian_rank_2k == 8 * 12 * 8 * 8


def test_her2k_shape_mismatch(backend):
    with pytest.raises(ContractViolationError):
        backend.hermitian_rank_2k_update(
            HermitianAccumulator(3), ComplexDense.zeros(4, 3),
            ComplexDense.zeros(5, 3), FlopLedger()
        )


# -- general_product ---------------------------------------------------------------

def test_gemm_identity_copies_b(backend):
    rng = np.random.default_rng(11)
    b_vals = rand_complex(rng, 3, 5)
    c = ComplexDense.from_array(rand_complex(rng, 3, 5))
    backend.general_product(c, ComplexDense.from_array(np.eye(3, dtype=complex)),
                            ComplexDense.from_array(b_vals),
                            conj_transpose_a=False, alpha=1.0, beta=0.0,
                            ledger=FlopLedger())
    assert_allclose(c.array, b_vals, rtol=1e-15)


def test_gemm_alpha_zero_beta_one_keeps_c(backend):
    rng = np.random.default_rng(12)
    c_vals = rand_complex(rng, 2, 3)
    c = ComplexDense.from_array(c_vals)
    backend.general_product(c, ComplexDense.from_array(rand_complex(rng, 2, 4)),
                            ComplexDense.from_array(rand_complex(rng, 4, 3)),
                            conj_transpose_a=False, alpha=0.0, beta=1.0,
                            ledger=FlopLedger())
    assert_allclose(c.array, c_vals, rtol=1e-15)


def test_gemm_random_vs_oracle(backend):
    rng = np.random.default_rng(5)
    a_vals = rand_complex(rng, 4, 3)
    b_vals = rand_complex(rng, 3, 5)
    c = ComplexDense.zeros(4, 5)
    led = FlopLedger()
    backend.general_product(c, ComplexDense.from_array(a_vals),
                            ComplexDense.from_array(b_vals),
                            conj_transpose_a=False, alpha=1.0, beta=0.0, ledger=led)
    assert rel_fro(c.array, gemm_oracle(a_vals, b_vals)) <= 1e-13
    assert led.general_product == 8 * 4 * 5 * 3


def test_gemm_conj_transpose_and_accumulate(backend):
    rng = np.random.default_rng(6)
    a_vals = rand_complex(rng, 4, 2)
    b_vals = rand_complex(rng, 4, 3)
    c_vals = rand_complex(rng, 2, 3)
    c = ComplexDense.from_array(c_vals)
    backend.general_product(c, ComplexDense.from_array(a_vals),
                            ComplexDense.from_array(b_vals),
                            conj_transpose_a=True, alpha=2.0 + 1.0j, beta=0.5,
                            ledger=FlopLedger())
    expected = (2.0 + 1.0j) * gemm_oracle(a_vals.conj().T, b_vals) + 0.5 * c_vals
    assert rel_fro(c.array, expected) <= 1e-13


def test_gemm_shape_mismatch(backend):
    with pytest.raises(ContractViolationError):
        backend.general_product(ComplexDense.zeros(2, 2), ComplexDense.zeros(2, 3),
                                ComplexDense.zeros(4, 2), conj_transpose_a=False,
                                alpha=1.0, beta=0.0, ledger=FlopLedger())


# -- hermitian_product ----------------------------------------------------------------

def test_hemm_identity_t(backend):
    rng = np.random.default_rng(13)
    a_vals = rand_complex(rng, 4, 6)
    x = ComplexDense.zeros(4, 6)
    backend.hermitian_product(x, ComplexDense.from_array(np.eye(4, dtype=complex)),
                              ComplexDense.from_array(a_vals), accumulate=False,
                              alpha=1.0, ledger=FlopLedger())
    assert_allclose(x.array, a_vals, rtol=1e-15)


def test_hemm_real_diagonal_scales_single_column(backend):
    d = np.array([2.0, -1.0, 0.5])
    a_vals = np.array([[1.0 + 1.0j], [2.0 - 1.0j], [3.0 + 0.5j]])
    x = ComplexDense.zeros(3, 1)
    backend.hermitian_product(x, ComplexDense.from_array(np.diag(d)),
                              ComplexDense.from_array(a_vals), accumulate=False,
                              alpha=1.0, ledger=FlopLedger())
    assert_allclose(x.array, d[:, None] * a_vals, rtol=1e-15)


def test_hemm_reads_only_lower_triangle(backend):
    rng = np.random.default_rng(9)
    t_full = hermitian_from_lower(rand_complex(rng, 5, 5))
    a_vals = rand_complex(rng, 5, 7)
    t_stored = ComplexDense.from_array(t_full)
    poison_upper(t_stored)
    x = ComplexDense.zeros(5, 7)
    led = FlopLedger()
    backend.hermitian_product(x, t_stored, ComplexDense.from_array(a_vals),
                              accumulate=False, alpha=1.0, ledger=led)
    assert rel_fro(x.array, gemm_oracle(t_full, a_vals)) <= 1e-13
    assert led.hermitian_product == 8 * 5 * 5 * 7


def test_hemm_accumulate_and_alpha(backend):
    rng = np.random.default_rng(10)
    t_full = hermitian_from_lower(rand_complex(rng, 3, 3))
    a_vals = rand_complex(rng, 3, 2)
    x_vals = rand_complex(rng, 3, 2)
    x = ComplexDense.from_array(x_vals)
    backend.hermitian_product(x, ComplexDense.from_array(t_full),
                              ComplexDense.from_array(a_vals), accumulate=True,
                              alpha=0.5, ledger=FlopLedger())
    assert rel_fro(x.array, 0.5 * t_full @ a_vals + x_vals) <= 1e-13


# -- triangular_product ----------------------------------------------------------------

def test_trmm_identity(backend):
    rng = np.random.default_rng(14)
    a_vals = rand_complex(rng, 3, 4)
    y = ComplexDense.zeros(3, 4)
    backend.triangular_product(y, ComplexDense.from_array(np.eye(3, dtype=complex)),
                               ComplexDense.from_array(a_vals),
                               conj_transpose_c=False, ledger=FlopLedger())
    assert_allclose(y.array, a_vals, rtol=1e-15)


def test_trmm_one_by_one_conjugates(backend):
    c00 = 2.0 - 3.0j
    a_vals = np.array([[1.0 + 1.0j, -2.0j]])
    y = ComplexDense.zeros(1, 2)
    backend.triangular_product(y, ComplexDense.from_array([[c00]]),
                               ComplexDense.from_array(a_vals),
                               conj_transpose_c=True, ledger=FlopLedger())
    assert_allclose(y.array, np.conj(c00) * a_vals, rtol=1e-15)


def test_trmm_random_vs_oracle_ignores_strict_upper(backend):
    rng = np.random.default_rng(2)
    c_low = np.tril(rand_complex(rng, 6, 6))
    a_vals = rand_complex(rng, 6, 4)
    stored = ComplexDense.from_array(c_low)
    poison_upper(stored)
    for conj_c in (False, True):
        y = ComplexDense.zeros(6, 4)
        led = FlopLedger()
        backend.triangular_product(y, stored, ComplexDense.from_array(a_vals),
                                   conj_transpose_c=conj_c, ledger=led)
        op = c_low.conj().T if conj_c else c_low
        assert rel_fro(y.array, gemm_oracle(op, a_vals)) <= 1e-13
        assert led.triangular_product == 4 * 6 * 6 * 4


# -- cholesky_factor ----------------------------------------------------------------

def test_cholesky_identity(backend):
    led = FlopLedger()
    c = backend.cholesky_factor(ComplexDense.from_array(np.eye(4, dtype=complex)), led)
    assert_array_equal(c.array, np.eye(4, dtype=complex))
    assert led.cholesky == cholesky_flops(4) == 4 * 64 // 3


def test_cholesky_negative_diagonal_fails_at_pivot_zero(backend):
    with pytest.raises(NotHPDError) as info:
        backend.cholesky_factor(ComplexDense.from_array([[-1.0 + 0j]]), FlopLedger())
    assert info.value.pivot == 0


def test_cholesky_reports_interior_pivot(backend):
    t = np.diag([1.0, 2.0, -3.0, 4.0]).astype(complex)
    with pytest.raises(NotHPDError) as info:
        backend.cholesky_factor(ComplexDense.from_array(t), FlopLedger())
    assert info.value.pivot == 2


def test_cholesky_reconstruction(backend):
    rng = np.random.default_rng(11)
    g = rand_complex(rng, 5, 5)
    t_vals = g @ g.conj().T
    t = ComplexDense.from_array(t_vals)
    led = FlopLedger()
    c = backend.cholesky_factor(t, led)
    assert rel_fro(c.array @ c.array.conj().T, t_vals) <= 1e-13
    assert np.allclose(np.triu(c.array, 1), 0)
    assert led.cholesky == cholesky_flops(5)


def test_cholesky_failure_preserves_input(backend):
    rng = np.random.default_rng(15)
    bad = hermitian_from_lower(rand_complex(rng, 4, 4)) - 10 * np.eye(4)
    t = ComplexDense.from_array(bad)
    before = t.array.copy()
    with pytest.raises(NotHPDError):
        backend.cholesky_factor(t, FlopLedger())
    assert_array_equal(t.array, before)


def test_cholesky_failure_charges_no_flops(backend):
    led = FlopLedger()
    with pytest.raises(NotHPDError):
        backend.cholesky_factor(ComplexDense.from_array(-np.eye(3, dtype=complex)), led)
    assert led.cholesky == 0


def test_cholesky_nan_input_is_contract_violation_not_nothpd(backend):
    t = np.eye(3, dtype=complex)
    t[1, 0] = np.nan
    with pytest.raises(ContractViolationError):
        backend.cholesky_factor(ComplexDense.from_array(t), FlopLedger())


def test_cholesky_ignores_poisoned_upper(backend):
    rng = np.random.default_rng(16)
    g = rand_complex(rng, 4, 4)
    t_vals = g @ g.conj().T + np.eye(4)
    t = ComplexDense.from_array(t_vals)
    poison_upper(t)
    c = backend.cholesky_factor(t, FlopLedger())
    assert rel_fro(c.array @ c.array.conj().T, t_vals) <= 1e-13


def test_cholesky_perturbation_stability(backend):
    rng = np.random.default_rng(17)
    g = rand_complex(rng, 6, 6)
    t_vals = g @ g.conj().T + np.eye(6)
    lam_min = np.linalg.eigvalsh(t_vals)[0]
    pert = hermitian_from_lower(rand_complex(rng, 6, 6))
    pert *= 1e-3 * lam_min / np.linalg.norm(pert)
    c = backend.cholesky_factor(ComplexDense.from_array(t_vals + pert), FlopLedger())
    assert rel_fro(c.array @ c.array.conj().T, t_vals + pert) <= 1e-12


# -- scripted FLOP accounting ------------------------------------------------------

def test_ledger_matches_closed_form_for_scripted_sequence(backend):
    rng = np.random.default_rng(20)
    led = FlopLedger()
    backend.hermitian_rank_k_update(
        HermitianAccumulator(64), ComplexDense.from_array(rand_complex(rng, 98, 64)), led)
    backend.hermitian_rank_2k_update(
        HermitianAccumulator(8), ComplexDense.from_array(rand_complex(rng, 12, 8)),
        ComplexDense.from_array(rand_complex(rng, 12, 8)), led)
    backend.general_product(
        ComplexDense.zeros(4, 5), ComplexDense.from_array(rand_complex(rng, 4, 3)),
        ComplexDense.from_array(rand_complex(rng, 3, 5)),
        conj_transpose_a=False, alpha=1.0, beta=0.0, ledger=led)
    backend.hermitian_product(
        ComplexDense.zeros(5, 7),
        ComplexDense.from_array(hermitian_from_lower(rand_complex(rng, 5, 5))),
        ComplexDense.from_array(rand_complex(rng, 5, 7)),
        accumulate=False, alpha=1.0, ledger=led)
    backend.triangular_product(
        ComplexDense.zeros(6, 4), ComplexDense.from_array(np.tril(rand_complex(rng, 6, 6))),
        ComplexDense.from_array(rand_complex(rng, 6, 4)),
        conj_transpose_c=False, ledger=led)
    g = rand_complex(rng, 5, 5)
    backend.cholesky_factor(ComplexDense.from_array(g @ g.conj().T + np.eye(5)), led)
    scale = ComplexDense.from_array(rand_complex(rng, 4, 3))
    from hsdla import scale_rows
    scale_rows(scale, np.ones(4), led)

    assert led.hermitian_rank_k == 4 * 98 * 64 * 64
    assert led.hermitian_rank_2k == 8 * 12 * 8 * 8
    assert led.general_product == 8 * 4 * 5 * 3
    assert led.hermitian_product == 8 * 5 * 5 * 7
    assert led.triangular_product == 4 * 6 * 6 * 4
    assert led.cholesky == 4 * 125 // 3
    assert led.row_scale == 2 * 4 * 3
    assert led.total == sum([4 * 98 * 64 * 64, 8 * 12 * 8 * 8, 8 * 4 * 5 * 3,
                             8 * 5 * 5 * 7, 4 * 6 * 6 * 4, 4 * 125 // 3, 2 * 4 * 3])


# -- property: kernels match oracles on random shapes -------------------------------

@settings(max_examples=25, deadline=None)
@given(m=st.integers(1, 32), n=st.integers(1, 32), seed=st.integers(0, 10_000))
def test_property_herk_matches_oracle_both_backends(m, n, seed):
    rng = np.random.default_rng(seed)
    a_vals = rand_complex(rng, m, n)
    for name in ("reference", "optimized"):
        be = get_backend(name, threads=1)
        c = HermitianAccumulator(n)
        be.hermitian_rank_k_update(c, ComplexDense.from_array(a_vals), FlopLedger())
        expected = np.tril(a_vals.conj().T @ a_vals)
        assert rel_fro(np.tril(c.matrix.array), expected) <= 1e-12


@settings(max_examples=20, deadline=None)
@given(m=st.integers(1, 32), n=st.integers(1, 24), k=st.integers(1, 24),
       seed=st.integers(0, 10_000))
def test_property_gemm_matches_oracle_both_backends(m, n, k, seed):
    rng = np.random.default_rng(seed)
    a_vals = rand_complex(rng, m, k)
    b_vals = rand_complex(rng, k, n)
    for name in ("reference", "optimized"):
        be = get_backend(name, threads=1)
        c = ComplexDense.zeros(m, n)
        be.general_product(c, ComplexDense.from_array(a_vals),
                           ComplexDense.from_array(b_vals),
                           conj_transpose_a=False, alpha=1.0, beta=0.0,
                           ledger=FlopLedger())
        assert rel_fro(c.array, a_vals @ b_vals) <= 1e-12


def test_backends_agree_on_strided_views(backend):
    # Kernel calls on non-contiguous row-block views must still land in the
    # caller's buffer (the optimized backend works through copies here).
    rng = np.random.default_rng(21)
    big = ComplexDense.zeros(10, 4, capacity_rows=16)
    big.array[:] = rand_complex(rng, 10, 4)
    view = big.block(3, 5)
    c = HermitianAccumulator(4)
    backend.hermitian_rank_k_update(c, view, FlopLedger())
    expected = np.tril(view.array.conj().T @ view.array)
    assert rel_fro(np.tril(c.matrix.array), expected) <= 1e-12
