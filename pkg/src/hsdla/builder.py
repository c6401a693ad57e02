"""Blocked assembly of the Hamiltonian and overlap matrices.

The overlap S and the three Hamiltonian contributions are reduced to a handful
of large level-3 updates on stacked per-atom coefficient matrices:

* S:  one rank-k update per coefficient family (B rows pre-scaled in place),
* H (AB+BA+BB):  per-atom Z = T_BA A + 1/2 T_BB B, then a single rank-2k
  update of the compacted Z/B stacks,
* H (AA):  per-atom Cholesky attempt on T_AA decides between a triangular
  product feeding one rank-k update (HPD) and a Hermitian product feeding one
  general product (non-HPD), with the two stacks sharing a single buffer
  grown from opposite ends.

A build owns its buffers exclusively; the orchestration itself is sequential
and parallelism lives inside the kernels.  Two builds on disjoint data may run
concurrently.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractViolationError, InternalError, NotHPDError
from .kernels import KernelBackend, get_backend
from .matrix import (
    AtomBlockLayout,
    ComplexDense,
    FlopLedger,
    HermitianAccumulator,
    cholesky_flops,
    scale_rows,
)


@dataclass
class StackedCoefficients:
    """Per-atom coefficient blocks stacked into two tall matrices.

    Row block ``a`` of ``A_star``/``B_star`` holds that atom's coefficients;
    ``udot_norms`` carries one real scale per occupied row, constant within
    each (l, atom) group of 2l+1 rows.
    """

    A_star: ComplexDense
    B_star: ComplexDense
    layout: AtomBlockLayout
    udot_norms: np.ndarray

    def __post_init__(self):
        r = self.layout.total_rows
        if self.A_star.rows != r or self.B_star.rows != r:
            raise ContractViolationError(
                f"stacked matrices must expose {r} rows, got "
                f"{self.A_star.rows} and {self.B_star.rows}"
            )
        if self.A_star.cols != self.B_star.cols:
            raise ContractViolationError("A_star and B_star need equal column counts")
        self.udot_norms = np.asarray(self.udot_norms, dtype=np.float64)
        if self.udot_norms.shape != (r,):
            raise ContractViolationError(
                f"udot_norms must have one entry per row ({r}), got {self.udot_norms.shape}"
            )

    @property
    def n_basis(self) -> int:
        return self.A_star.cols

    def copy(self) -> "StackedCoefficients":
        return StackedCoefficients(
            self.A_star.copy_allocation(),
            self.B_star.copy_allocation(),
            self.layout,
            self.udot_norms.copy(),
        )


@dataclass
class TMatrixSet:
    """Per-atom coupling matrices T_AA (Hermitian), T_AB, T_BB (Hermitian).

    T_BA is never stored: everywhere downstream it is taken to be the
    conjugate transpose of T_AB.  Each matrix is dense inside its top-left
    (l_nonsph+1)^2 block and diagonal outside it.
    """

    t_aa: list
    t_ab: list
    t_bb: list
    l_sph: list
    l_nonsph: list

    def __post_init__(self):
        n = len(self.t_aa)
        if not (len(self.t_ab) == len(self.t_bb) == len(self.l_sph) == len(self.l_nonsph) == n):
            raise ContractViolationError("per-atom lists must have equal lengths")
        for a in range(n):
            m = self.t_aa[a].rows
            for t in (self.t_aa[a], self.t_ab[a], self.t_bb[a]):
                if t.shape != (m, m):
                    raise ContractViolationError(
                        f"atom {a}: all T blocks must be {m}x{m}, got {t.shape}"
                    )

    @property
    def atom_count(self) -> int:
        return len(self.t_aa)

    def block_size(self, a: int) -> int:
        return self.t_aa[a].rows

    def hermitian_residual(self) -> float:
        """Worst relative Hermitian residual over the T_AA and T_BB blocks."""
        worst = 0.0
        for t in (*self.t_aa, *self.t_bb):
            m = t.array
            denom = max(np.linalg.norm(m), np.finfo(float).tiny)
            worst = max(worst, np.linalg.norm(m - m.conj().T) / denom)
        return worst

    def validate_structure(self, rtol: float = 1e-12):
        """Check Hermitian-ness and the dense-block + diagonal-tail zero pattern."""
        res = self.hermitian_residual()
        if res > rtol:
            raise ContractViolationError(f"T_AA/T_BB Hermitian residual {res:.2e} > {rtol}")
        for a in range(self.atom_count):
            dense = (self.l_nonsph[a] + 1) ** 2
            for t in (self.t_aa[a], self.t_ab[a], self.t_bb[a]):
                m = t.array
                outside = m.copy()
                outside[:dense, :dense] = 0
                np.fill_diagonal(outside, 0)
                if np.any(outside != 0):
                    raise ContractViolationError(
                        f"atom {a}: nonzero entry outside dense block and diagonal"
                    )


@dataclass
class BuildConfig:
    backup: bool = True
    force_general_path: bool = False
    thread_count: int = 1
    backend: str = "optimized"

    def __post_init__(self):
        if self.thread_count < 1:
            raise ConfigurationError("thread_count must be >= 1")


@dataclass
class BuildReport:
    """Timings, FLOP counters, branch statistics, and memory figures of one build."""

    ledger: FlopLedger = field(default_factory=FlopLedger)
    timings: dict = field(default_factory=dict)
    hpd_atom_count: int = 0
    non_hpd_atom_count: int = 0
    hpd_mask: list = field(default_factory=list)
    predicted_bytes: int = 0
    peak_observed_bytes: int = 0
    thread_count: int = 1

    def to_json_dict(self) -> dict:
        out = {}
        for kind, count in self.ledger.as_dict().items():
            out[f"flops_{kind}"] = count
        for phase in ("setup", "S", "H_ABBA_BB", "H_AA"):
            out[f"time_{phase}_s"] = self.timings.get(phase, 0.0)
        out["hpd_atom_count"] = self.hpd_atom_count
        out["non_hpd_atom_count"] = self.non_hpd_atom_count
        out["hpd_mask"] = [bool(x) for x in self.hpd_mask]
        out["predicted_bytes"] = self.predicted_bytes
        out["peak_observed_bytes"] = self.peak_observed_bytes
        out["thread_count"] = self.thread_count
        return out


def _t_sizes(coeffs: StackedCoefficients, tmats: TMatrixSet) -> list:
    layout = coeffs.layout
    if tmats.atom_count != layout.atom_count:
        raise ContractViolationError(
            f"{tmats.atom_count} T blocks for {layout.atom_count} atom blocks"
        )
    sizes = []
    for a in range(layout.atom_count):
        m = tmats.block_size(a)
        if m > layout.block_heights[a]:
            raise ContractViolationError(
                f"atom {a}: T block size {m} exceeds coefficient block height "
                f"{layout.block_heights[a]}"
            )
        sizes.append(m)
    return sizes


def build_S(coeffs: StackedCoefficients, ledger: FlopLedger,
            backend: KernelBackend) -> HermitianAccumulator:
    """Accumulate the overlap matrix onto a fresh lower-triangular accumulator.

    Side effect: B_star is overwritten in place with its row-scaled version.
    """
    s = HermitianAccumulator(coeffs.n_basis)
    backend.hermitian_rank_k_update(s, coeffs.A_star, ledger)
    scale_rows(coeffs.B_star, coeffs.udot_norms, ledger)
    backend.hermitian_rank_k_update(s, coeffs.B_star, ledger)
    return s


def build_H_ABBA_BB(coeffs: StackedCoefficients, tmats: TMatrixSet,
                    h: HermitianAccumulator, ledger: FlopLedger,
                    backend: KernelBackend) -> HermitianAccumulator:
    """Accumulate the AB+BA and BB contributions via one rank-2k update.

    Consumes the coefficients: per-atom Z blocks are compacted into A_star's
    storage and the matching rows of B_star are compacted alongside them, so
    both stacks are garbage afterwards.
    """
    layout = coeffs.layout
    sizes = _t_sizes(coeffs, tmats)
    n = coeffs.n_basis
    if h.n != n:
        raise ContractViolationError(f"H is {h.n}x{h.n}, coefficients have {n} columns")

    a_star, b_star = coeffs.A_star, coeffs.B_star
    offsets = layout.offsets
    z_buf = ComplexDense.zeros(max(sizes), n)
    zoff = 0
    for a in range(layout.atom_count):
        m = sizes[a]
        off = int(offsets[a])
        a_blk = a_star.block(off, m)
        b_blk = b_star.block(off, m)
        z = z_buf.block(0, m)
        backend.general_product(z, tmats.t_ab[a], a_blk, conj_transpose_a=True,
                                alpha=1.0, beta=0.0, ledger=ledger)
        backend.hermitian_product(z, tmats.t_bb[a], b_blk, accumulate=True,
                                  alpha=0.5, ledger=ledger)
        # Compacted destination may overlap the source rows; stage through copies.
        b_rows = b_blk.array.copy()
        a_star.block(zoff, m).array[:] = z.array
        b_star.block(zoff, m).array[:] = b_rows
        zoff += m
    backend.hermitian_rank_2k_update(h, a_star.block(0, zoff), b_star.block(0, zoff),
                                     ledger)
    return h


def build_H_AA(coeffs: StackedCoefficients, tmats: TMatrixSet,
               h: HermitianAccumulator, config: BuildConfig, ledger: FlopLedger,
               report: BuildReport, backend: KernelBackend,
               xy_buffer: ComplexDense | None = None) -> HermitianAccumulator:
    """Accumulate the AA contribution with per-atom dynamic HPD dispatch.

    HPD atoms contribute Y = C^H A blocks stacked from the bottom of the
    shared scratch buffer; non-HPD atoms contribute X = T_AA A blocks stacked
    from the top, with the matching A rows re-stacked from the top of A_star
    (overwriting already-consumed blocks).  One general product and one rank-k
    update finish the phase.
    """
    layout = coeffs.layout
    sizes = _t_sizes(coeffs, tmats)
    n = coeffs.n_basis
    if xy_buffer is None:
        xy_buffer = ComplexDense.zeros(layout.capacity_rows, n)
    if xy_buffer.rows < layout.total_rows or xy_buffer.cols != n:
        raise ContractViolationError(
            f"scratch buffer {xy_buffer.shape} too small for "
            f"{layout.total_rows} rows x {n} cols"
        )

    a_star = coeffs.A_star
    offsets = layout.offsets
    x_top = 0
    y_bot = xy_buffer.rows
    hpd_mask = []
    for a in range(layout.atom_count):
        m = sizes[a]
        off = int(offsets[a])
        a_blk = a_star.block(off, m)
        factor = None
        if not config.force_general_path:
            try:
                factor = backend.cholesky_factor(tmats.t_aa[a], ledger)
            except NotHPDError:
                factor = None
        if factor is None:
            x = xy_buffer.block(x_top, m)
            backend.hermitian_product(x, tmats.t_aa[a], a_blk, accumulate=False,
                                      alpha=1.0, ledger=ledger)
            a_rows = a_blk.array.copy()
            a_star.block(x_top, m).array[:] = a_rows
            x_top += m
            hpd_mask.append(False)
        else:
            y_bot -= m
            y = xy_buffer.block(y_bot, m)
            backend.triangular_product(y, factor, a_blk, conj_transpose_c=True,
                                       ledger=ledger)
            hpd_mask.append(True)
        if x_top > y_bot:
            raise InternalError("top and bottom stacks collided")  # unreachable
    if x_top:
        backend.general_product(h.matrix, a_star.block(0, x_top),
                                xy_buffer.block(0, x_top), conj_transpose_a=True,
                                alpha=1.0, beta=1.0, ledger=ledger)
    if y_bot < xy_buffer.rows:
        backend.hermitian_rank_k_update(h, xy_buffer.block(y_bot, xy_buffer.rows - y_bot),
                                        ledger)
    report.hpd_atom_count += sum(hpd_mask)
    report.non_hpd_atom_count += len(hpd_mask) - sum(hpd_mask)
    report.hpd_mask.extend(hpd_mask)
    return h


def estimate_memory(n_atoms: int, n_l: int, n_g: int, backup: bool) -> int:
    """Peak bytes of the composed build for uniform block height n_l.

    With backup the two stacked buffers are duplicated while the first
    Hamiltonian phase runs; without it only the two stacks plus H and S are
    ever live.  Exact integer arithmetic.
    """
    if min(n_atoms, n_l, n_g) < 1:
        raise ContractViolationError("all size parameters must be >= 1")
    stacks = 32 * n_atoms * n_l * n_g
    total = stacks + 32 * n_g * n_g
    if backup:
        total += max(stacks - 16 * n_g * n_g, 0)
    if total >= 2**64:
        raise OverflowError(f"memory estimate {total} exceeds 64-bit byte counts")
    return total


def predict_flops(n_atoms: int, block_heights, n_g: int, hpd_mask) -> FlopLedger:
    """Closed-form FLOP totals of one composed build.

    Assumes every T block matches its coefficient block height, which is how
    all generators in this package produce instances.
    """
    heights = [int(h) for h in block_heights]
    if len(heights) != n_atoms:
        raise ContractViolationError(f"{len(heights)} heights for {n_atoms} atoms")
    mask = [bool(b) for b in hpd_mask]
    if len(mask) != n_atoms:
        raise ContractViolationError(f"hpd mask length {len(mask)} != {n_atoms}")
    led = FlopLedger()
    r_total = sum(heights)
    ng2 = n_g * n_g
    # S phase: two rank-k updates plus the row scaling.
    led.add("hermitian_rank_k", 8 * r_total * ng2)
    led.add("row_scale", 2 * r_total * n_g)
    # H AB+BA+BB phase: per-atom general + Hermitian product, one rank-2k.
    for h in heights:
        led.add("general_product", 8 * h * h * n_g)
        led.add("hermitian_product", 8 * h * h * n_g)
    led.add("hermitian_rank_2k", 8 * r_total * ng2)
    # H AA phase: branch-dependent per-atom work plus the two large updates.
    r_hpd = sum(h for h, b in zip(heights, mask) if b)
    r_gen = r_total - r_hpd
    for h, is_hpd in zip(heights, mask):
        if is_hpd:
            led.add("cholesky", cholesky_flops(h))
            led.add("triangular_product", 4 * h * h * n_g)
        else:
            led.add("hermitian_product", 8 * h * h * n_g)
    led.add("general_product", 8 * r_gen * ng2)
    led.add("hermitian_rank_k", 4 * r_hpd * ng2)
    return led


def large_update_fraction(n_atoms: int, block_heights, n_g: int, hpd_mask) -> float:
    """Fraction of predicted FLOPs spent in the O(N_G^2) stacked updates."""
    led = predict_flops(n_atoms, block_heights, n_g, hpd_mask)
    heights = [int(h) for h in block_heights]
    r_total = sum(heights)
    r_hpd = sum(h for h, b in zip(heights, hpd_mask) if b)
    r_gen = r_total - r_hpd
    ng2 = n_g * n_g
    large = (8 * r_total * ng2          # S: two rank-k updates
             + 8 * r_total * ng2        # rank-2k
             + 8 * r_gen * ng2          # general product on the non-HPD stack
             + 4 * r_hpd * ng2)         # rank-k on the HPD stack
    return large / led.total


class _PeakTracker:
    """Running watermark over the explicitly managed large buffers."""

    def __init__(self):
        self.current = 0
        self.peak = 0

    def alloc(self, nbytes: int):
        self.current += nbytes
        self.peak = max(self.peak, self.current)

    def free(self, nbytes: int):
        self.current -= nbytes


def build_all(coeffs: StackedCoefficients, tmats: TMatrixSet, config: BuildConfig,
              regenerate=None):
    """Run the composed build and return (H, S, report) with H, S mirrored to full.

    Phase order: back up (or note how to re-create) the coefficient stacks,
    accumulate the AB+BA+BB Hamiltonian part, restore or re-create the stacks,
    build S, then finish with the AA part reusing B_star's allocation as the
    shared X/Y scratch.  Results are bitwise independent of the backup flag
    when ``regenerate`` reproduces the original coefficients exactly.

    ``regenerate(coeffs)`` must refill ``coeffs.A_star``/``coeffs.B_star`` in
    place; it is required when ``config.backup`` is false.  The coefficient
    stacks are consumed either way.
    """
    if not config.backup and regenerate is None:
        raise ConfigurationError("backup=False requires a regeneration callback")
    backend = get_backend(config.backend, config.thread_count)
    ledger = FlopLedger()
    report = BuildReport(ledger=ledger, thread_count=backend.threads)
    layout = coeffs.layout
    n = coeffs.n_basis
    report.predicted_bytes = estimate_memory(
        layout.atom_count, layout.capacity_block_height, n, config.backup
    )
    mem = _PeakTracker()
    mem.alloc(coeffs.A_star.allocated_bytes + coeffs.B_star.allocated_bytes)

    t0 = time.perf_counter()
    backup_a = backup_b = None
    if config.backup:
        backup_a = coeffs.A_star.copy_allocation()
        backup_b = coeffs.B_star.copy_allocation()
        mem.alloc(backup_a.allocated_bytes + backup_b.allocated_bytes)
    h = HermitianAccumulator(n)
    mem.alloc(h.matrix.allocated_bytes)
    setup_time = time.perf_counter() - t0

    t0 = time.perf_counter()
    build_H_ABBA_BB(coeffs, tmats, h, ledger, backend)
    report.timings["H_ABBA_BB"] = time.perf_counter() - t0

    # Restore or re-create the consumed stacks; counted as setup, not kernels.
    t0 = time.perf_counter()
    if config.backup:
        freed = coeffs.A_star.allocated_bytes + coeffs.B_star.allocated_bytes
        coeffs.A_star = backup_a
        coeffs.B_star = backup_b
        backup_a = backup_b = None
        mem.free(freed)
    else:
        regenerate(coeffs)
        if coeffs.A_star.rows != layout.total_rows or coeffs.A_star.cols != n:
            raise ContractViolationError("regeneration callback changed the stack shape")
    setup_time += time.perf_counter() - t0

    t0 = time.perf_counter()
    mem.alloc(16 * n * n)
    s = build_S(coeffs, ledger, backend)
    report.timings["S"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    xy = coeffs.B_star.full_capacity()  # B rows already consumed by build_S
    build_H_AA(coeffs, tmats, h, config, ledger, report, backend, xy_buffer=xy)
    report.timings["H_AA"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    h_full = h.mirror_to_full()
    s_full = s.mirror_to_full()
    setup_time += time.perf_counter() - t0
    report.timings["setup"] = setup_time
    report.peak_observed_bytes = mem.peak
    return h_full, s_full, report
