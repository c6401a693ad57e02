"""Physically structured input generation.

Builds matching coefficients from tabulated radial boundary values, assembles
coupling matrices from Gaunt coefficients and synthetic radial integrals, and
provides fully synthetic fallback generators for coefficients and coupling
matrices.  All generators are deterministic functions of their seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .builder import StackedCoefficients, TMatrixSet
from .errors import ConfigurationError, ContractViolationError
from .matrix import AtomBlockLayout, ComplexDense
from .oracle import ReducedOverlapInputs
from .special import (
    gaunt_tensor,
    lm_index,
    spherical_bessel_all,
    spherical_harmonics_all,
)

# Diagonal tail of T_BB carries the energy parameter times this power of the
# udot norm.  Kept as a single constant: the source formula is ambiguous
# between the first and second power, and this makes either reading a
# one-line change.
BB_DIAG_NORM_POWER = 1

_MIN_WRONSKIAN = 1e-8


@dataclass
class RadialBoundaryData:
    """Boundary values of the radial solutions for one atom, indexed by l."""

    u: np.ndarray
    u_prime: np.ndarray
    udot: np.ndarray
    udot_prime: np.ndarray
    energy: np.ndarray
    udot_norm: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=np.float64) for a in
                  (self.u, self.u_prime, self.udot, self.udot_prime,
                   self.energy, self.udot_norm)]
        self.u, self.u_prime, self.udot, self.udot_prime, self.energy, self.udot_norm = arrays
        n = self.u.shape[0]
        if any(a.shape != (n,) for a in arrays):
            raise ContractViolationError("radial value arrays must share one length")
        if np.any(self.udot_norm < 0):
            raise ContractViolationError("udot norms must be non-negative")
        if np.any(np.abs(self.wronskian) < _MIN_WRONSKIAN):
            raise ContractViolationError(
                f"|Wronskian| below {_MIN_WRONSKIAN}: radial values too degenerate"
            )

    @property
    def wronskian(self) -> np.ndarray:
        return self.udot * self.u_prime - self.u * self.udot_prime

    @property
    def l_max(self) -> int:
        return self.u.shape[0] - 1

    def to_json_dict(self) -> dict:
        return {
            "u": self.u.tolist(),
            "u_prime": self.u_prime.tolist(),
            "udot": self.udot.tolist(),
            "udot_prime": self.udot_prime.tolist(),
            "energy": self.energy.tolist(),
            "udot_norm": self.udot_norm.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RadialBoundaryData":
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})


@dataclass
class SystemSpec:
    """Geometry, cutoffs, basis vectors, and radial data of one synthetic system."""

    positions: np.ndarray
    rotations: np.ndarray
    mt_radius: np.ndarray
    l_sph: np.ndarray
    l_nonsph: np.ndarray
    k_point: np.ndarray
    k_vectors: np.ndarray
    omega: float
    radial: list

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.mt_radius = np.asarray(self.mt_radius, dtype=np.float64)
        self.l_sph = np.asarray(self.l_sph, dtype=np.int64)
        self.l_nonsph = np.asarray(self.l_nonsph, dtype=np.int64)
        self.k_point = np.asarray(self.k_point, dtype=np.float64)
        self.k_vectors = np.asarray(self.k_vectors, dtype=np.float64)
        n = self.n_atoms
        if self.k_vectors.ndim != 2 or self.k_vectors.shape[1] != 3 or self.n_basis < 1:
            raise ContractViolationError("need at least one K-vector of dimension 3")
        if self.omega <= 0:
            raise ContractViolationError("cell volume must be positive")
        if np.any(self.l_nonsph > self.l_sph):
            raise ConfigurationError("l_nonsph must not exceed l_sph")
        if np.any(self.mt_radius <= 0):
            raise ContractViolationError("muffin-tin radii must be positive")
        if self.rotations.shape != (n, 3, 3):
            raise ContractViolationError("need one 3x3 rotation per atom")
        for a in range(n):
            r = self.rotations[a]
            if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-12:
                raise ContractViolationError(f"rotation {a} is not orthogonal")
            if abs(abs(np.linalg.det(r)) - 1.0) > 1e-12:
                raise ContractViolationError(f"rotation {a} has |det| != 1")
        if len(self.radial) != n:
            raise ContractViolationError("need radial data per atom")
        for a, rad in enumerate(self.radial):
            if rad.l_max < self.l_sph[a]:
                raise ContractViolationError(f"atom {a}: radial data stops below l_sph")

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    @property
    def n_basis(self) -> int:
        return self.k_vectors.shape[0]

    def layout(self) -> AtomBlockLayout:
        heights = tuple(int((l + 1) ** 2) for l in self.l_sph)
        return AtomBlockLayout(heights, int((self.l_sph.max() + 1) ** 2))

    def to_json_dict(self) -> dict:
        return {
            "positions": self.positions.tolist(),
            "rotations": self.rotations.tolist(),
            "mt_radius": self.mt_radius.tolist(),
            "l_sph": self.l_sph.tolist(),
            "l_nonsph": self.l_nonsph.tolist(),
            "k_point": self.k_point.tolist(),
            "k_vectors": self.k_vectors.tolist(),
            "omega": self.omega,
            "radial": [r.to_json_dict() for r in self.radial],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, d: dict) -> "SystemSpec":
        d = dict(d)
        d["radial"] = [RadialBoundaryData.from_json_dict(r) for r in d["radial"]]
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "SystemSpec":
        return cls.from_json_dict(json.loads(text))


def _unit_directions(k_vectors: np.ndarray):
    """Unit vectors of each K, with the zero vector mapped to +z by convention."""
    norms = np.linalg.norm(k_vectors, axis=1)
    unit = np.zeros_like(k_vectors)
    nz = norms > 0
    unit[nz] = k_vectors[nz] / norms[nz, None]
    unit[~nz] = (0.0, 0.0, 1.0)
    return norms, unit


def match_factors(spec: SystemSpec, atom: int):
    """Real radial match factors (f_A, f_B) of shape (l_sph+1, N_G) for one atom.

    f_A multiplies u in the boundary matching, f_B multiplies udot; both are
    the Bessel/boundary-value brackets without the common prefactor.
    """
    rad = spec.radial[atom]
    l_top = int(spec.l_sph[atom])
    r_mt = float(spec.mt_radius[atom])
    norms, _ = _unit_directions(spec.k_vectors)
    n_g = spec.n_basis
    f_a = np.zeros((l_top + 1, n_g))
    f_b = np.zeros((l_top + 1, n_g))
    for t in range(n_g):
        kt = norms[t]
        j, jp = spherical_bessel_all(l_top, r_mt * kt)
        sl = slice(0, l_top + 1)
        f_a[:, t] = rad.udot[sl] * kt * jp - rad.udot_prime[sl] * j
        f_b[:, t] = -rad.u[sl] * kt * jp + rad.u_prime[sl] * j
    return f_a, f_b


def compute_AB(spec: SystemSpec) -> StackedCoefficients:
    """Matching coefficients stacked per atom, rows grouped by (l, m).

    The common prefactor is 4*pi / (sqrt(omega) * W_l) * i^l * exp(i K.x_a)
    * conj(Y_{l,m}) evaluated on the atom-frame direction of each K-vector.
    """
    layout = spec.layout()
    n_g = spec.n_basis
    a_star = ComplexDense.zeros(layout.total_rows, n_g,
                                capacity_rows=layout.capacity_rows)
    b_star = ComplexDense.zeros(layout.total_rows, n_g,
                                capacity_rows=layout.capacity_rows)
    udot_norms = np.zeros(layout.total_rows)
    _, unit = _unit_directions(spec.k_vectors)
    offsets = layout.offsets
    for a in range(spec.n_atoms):
        rad = spec.radial[a]
        l_top = int(spec.l_sph[a])
        w = rad.wronskian
        local = unit @ spec.rotations[a].T
        local /= np.linalg.norm(local, axis=1)[:, None]
        y = spherical_harmonics_all(l_top, local)  # ((l_top+1)^2, N_G)
        phase = np.exp(1j * (spec.k_vectors @ spec.positions[a]))
        f_a, f_b = match_factors(spec, a)
        off = int(offsets[a])
        for l in range(l_top + 1):
            pref_l = (4.0 * np.pi / (np.sqrt(spec.omega) * w[l])) * (1j**l) * phase
            rows = slice(off + l * l, off + (l + 1) ** 2)
            y_rows = np.conj(y[l * l : (l + 1) ** 2])
            a_star.array[rows] = y_rows * (pref_l * f_a[l])[None, :]
            b_star.array[rows] = y_rows * (pref_l * f_b[l])[None, :]
            udot_norms[off + l * l : off + (l + 1) ** 2] = rad.udot_norm[l]
    return StackedCoefficients(a_star, b_star, layout, udot_norms)


def reduced_overlap_inputs(spec: SystemSpec) -> ReducedOverlapInputs:
    """Factored inputs for the Legendre-reduced A-side overlap."""
    f = []
    w = []
    for a in range(spec.n_atoms):
        f_a, _ = match_factors(spec, a)
        f.append(f_a)
        w.append(spec.radial[a].wronskian[: int(spec.l_sph[a]) + 1])
    return ReducedOverlapInputs(
        f=f,
        wronskians=w,
        positions=spec.positions,
        k_vectors=spec.k_vectors,
        omega=spec.omega,
    )


@dataclass
class RadialIntegrals:
    """Synthetic radial integrals for one atom's coupling-matrix assembly.

    Arrays are indexed (l', l, L'') with the compound potential index L''
    running over (l'', m'') up to l_nonsph.  The uu and dd families must
    satisfy c[l', l, (l'', m'')] = (-1)^m'' conj(c[l, l', (l'', -m'')]) so the
    assembled T_AA/T_BB come out Hermitian; du must be the analogous partner
    of ud so the BA block equals the conjugate transpose of the AB block.
    """

    c_uu: np.ndarray
    c_dd: np.ndarray
    c_ud: np.ndarray
    c_du: np.ndarray

    @property
    def l_nonsph(self) -> int:
        return self.c_uu.shape[0] - 1


def _pairing(c: np.ndarray) -> np.ndarray:
    """The Hermitian-compatibility involution on (l', l, L'') coefficient arrays."""
    n_pot = c.shape[2]
    l_pot = int(np.sqrt(n_pot)) - 1
    perm = np.zeros(n_pot, dtype=np.int64)
    sign = np.zeros(n_pot)
    for l in range(l_pot + 1):
        for m in range(-l, l + 1):
            perm[lm_index(l, m)] = lm_index(l, -m)
            sign[lm_index(l, m)] = (-1.0) ** m
    return sign[None, None, :] * np.conj(c.transpose(1, 0, 2)[:, :, perm])


def synth_radial_integrals(seed: int, l_nonsph: int, scale: float = 0.5) -> RadialIntegrals:
    """Random radial integrals satisfying the Hermitian-compatibility pairing."""
    rng = np.random.default_rng(seed)
    n_l = l_nonsph + 1
    n_pot = n_l * n_l

    def draw():
        return scale * (rng.standard_normal((n_l, n_l, n_pot))
                        + 1j * rng.standard_normal((n_l, n_l, n_pot)))

    x_uu, x_dd, c_ud = draw(), draw(), draw()
    return RadialIntegrals(
        c_uu=0.5 * (x_uu + _pairing(x_uu)),
        c_dd=0.5 * (x_dd + _pairing(x_dd)),
        c_ud=c_ud,
        c_du=_pairing(c_ud),
    )


def assemble_T(spec: SystemSpec, radial_integrals: list) -> TMatrixSet:
    """Assemble per-atom coupling matrices from Gaunt sums plus diagonal terms.

    The Gaunt part fills the dense (l_nonsph+1)^2 block; the diagonal carries
    the energy parameters (AA), energy times udot norm (BB), and ones (AB).
    The BA block is never materialized.
    """
    if len(radial_integrals) != spec.n_atoms:
        raise ContractViolationError("need radial integrals per atom")
    t_aa, t_ab, t_bb = [], [], []
    for a in range(spec.n_atoms):
        ri = radial_integrals[a]
        l_n = int(spec.l_nonsph[a])
        l_s = int(spec.l_sph[a])
        if ri.l_nonsph != l_n:
            raise ContractViolationError(
                f"atom {a}: integrals cover l_nonsph={ri.l_nonsph}, spec says {l_n}"
            )
        for name, c in (("uu", ri.c_uu), ("dd", ri.c_dd)):
            if np.max(np.abs(c - _pairing(c))) > 1e-12:
                raise ContractViolationError(
                    f"atom {a}: {name} integrals violate the Hermitian pairing"
                )
        if np.max(np.abs(ri.c_du - _pairing(ri.c_ud))) > 1e-12:
            raise ContractViolationError(
                f"atom {a}: du integrals are not the conjugate partner of ud"
            )

        n_dense = (l_n + 1) ** 2
        n_full = (l_s + 1) ** 2
        g = gaunt_tensor(l_n, l_n)  # (n_dense, n_dense, n_dense)
        l_of = np.array([l for l in range(l_n + 1) for _ in range(2 * l + 1)])
        rad = spec.radial[a]

        def dense_block(c):
            expanded = c[np.ix_(l_of, l_of)]  # (n_dense, n_dense, n_pot)
            return np.einsum("pqk,pqk->pq", expanded, g)

        aa = np.zeros((n_full, n_full), dtype=np.complex128)
        ab = np.zeros_like(aa)
        bb = np.zeros_like(aa)
        aa[:n_dense, :n_dense] = dense_block(ri.c_uu)
        ab[:n_dense, :n_dense] = dense_block(ri.c_ud)
        bb[:n_dense, :n_dense] = dense_block(ri.c_dd)
        diag_l = np.array([l for l in range(l_s + 1) for _ in range(2 * l + 1)])
        aa[np.arange(n_full), np.arange(n_full)] += rad.energy[diag_l]
        bb[np.arange(n_full), np.arange(n_full)] += (
            rad.energy[diag_l] * rad.udot_norm[diag_l] ** BB_DIAG_NORM_POWER
        )
        ab[np.arange(n_full), np.arange(n_full)] += 1.0
        t_aa.append(ComplexDense.from_array(aa))
        t_ab.append(ComplexDense.from_array(ab))
        t_bb.append(ComplexDense.from_array(bb))
    return TMatrixSet(
        t_aa=t_aa, t_ab=t_ab, t_bb=t_bb,
        l_sph=[int(x) for x in spec.l_sph],
        l_nonsph=[int(x) for x in spec.l_nonsph],
    )


def _random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def synth_system(seed: int, n_atoms: int, l_sph, l_nonsph,
                 basis_factor: float = 55.0,
                 mt_kmax_range: tuple = (2.5, 3.5)) -> SystemSpec:
    """Deterministic pseudo-random system in a unit cube cell.

    K-vectors are the shifted reciprocal-lattice points inside the sphere
    whose continuum volume holds ``basis_factor * n_atoms`` points, so the
    basis size lands within a few percent of that target.  Muffin-tin radii
    are drawn so that r_MT * K_max stays inside ``mt_kmax_range``, keeping
    boundary-matching truncation errors small at the supported cutoffs.
    """
    if n_atoms < 1:
        raise ConfigurationError("need at least one atom")
    if not 50.0 <= basis_factor <= 80.0:
        raise ConfigurationError(f"basis_factor must lie in [50, 80], got {basis_factor}")
    l_sph = np.broadcast_to(np.asarray(l_sph, dtype=np.int64), (n_atoms,)).copy()
    l_nonsph = np.broadcast_to(np.asarray(l_nonsph, dtype=np.int64), (n_atoms,)).copy()
    if np.any(l_nonsph > l_sph):
        raise ConfigurationError("l_nonsph must not exceed l_sph")
    if np.any(l_sph < 0) or np.any(l_nonsph < 0):
        raise ConfigurationError("cutoffs must be non-negative")

    rng = np.random.default_rng(seed)
    omega = 1.0
    positions = rng.uniform(0.0, 1.0, size=(n_atoms, 3))
    rotations = np.stack([_random_rotation(rng) for _ in range(n_atoms)])
    k_point = rng.uniform(-np.pi, np.pi, size=3)

    target = basis_factor * n_atoms
    k_max = (6.0 * np.pi**2 * target) ** (1.0 / 3.0)
    n_max = int(np.ceil((k_max + np.linalg.norm(k_point)) / (2.0 * np.pi))) + 1
    if n_max > 128:
        raise ConfigurationError(f"basis target {target:.0f} needs an unreasonable grid")
    grid = np.arange(-n_max, n_max + 1)
    triples = np.stack(np.meshgrid(grid, grid, grid, indexing="ij"), axis=-1).reshape(-1, 3)
    kv = k_point[None, :] + 2.0 * np.pi * triples
    norms = np.linalg.norm(kv, axis=1)
    keep = norms <= k_max
    if not np.any(keep):
        raise ConfigurationError("no K-vectors inside the cutoff sphere")
    kv = kv[keep]
    order = np.lexsort((triples[keep][:, 2], triples[keep][:, 1],
                        triples[keep][:, 0], np.linalg.norm(kv, axis=1)))
    k_vectors = kv[order]

    mt_radius = rng.uniform(*mt_kmax_range, size=n_atoms) / k_max
    radial = []
    for a in range(n_atoms):
        n_l = int(l_sph[a]) + 1
        u = rng.uniform(-0.8, 0.8, n_l)
        udot_prime = rng.uniform(-0.8, 0.8, n_l)
        u_prime = rng.uniform(0.6, 1.4, n_l) * rng.choice([-1.0, 1.0], n_l)
        w_target = rng.uniform(0.3, 1.2, n_l) * rng.choice([-1.0, 1.0], n_l)
        udot = (w_target + u * udot_prime) / u_prime
        radial.append(RadialBoundaryData(
            u=u, u_prime=u_prime, udot=udot, udot_prime=udot_prime,
            energy=rng.uniform(-1.0, 1.0, n_l),
            udot_norm=rng.uniform(0.5, 2.0, n_l),
        ))
    return SystemSpec(
        positions=positions, rotations=rotations, mt_radius=mt_radius,
        l_sph=l_sph, l_nonsph=l_nonsph, k_point=k_point, k_vectors=k_vectors,
        omega=omega, radial=radial,
    )


def _fig1_zero_out(m: np.ndarray, n_dense: int):
    """Zero everything outside the dense block except the diagonal."""
    keep_diag = np.diag(np.diag(m))
    m[:, n_dense:] = 0
    m[n_dense:, :] = 0
    idx = np.arange(n_dense, m.shape[0])
    m[idx, idx] = keep_diag[idx, idx]


def synth_T(seed: int, layout: AtomBlockLayout, l_nonsph, hpd_fraction: float) -> TMatrixSet:
    """Random coupling matrices with a controlled count of HPD AA blocks.

    HPD blocks are Gram matrices plus the identity; the rest are shifted
    Hermitian blocks guaranteed to carry a negative eigenvalue.  All blocks
    keep the dense-block + diagonal-tail structure.
    """
    n_a = layout.atom_count
    heights = layout.block_heights
    l_sph = []
    for h in heights:
        l = int(np.sqrt(h)) - 1
        if (l + 1) ** 2 != h:
            raise ContractViolationError("block heights must be (l+1)^2 for synth_T")
        l_sph.append(l)
    l_nonsph = list(np.broadcast_to(np.asarray(l_nonsph, dtype=np.int64), (n_a,)))
    if any(ln > ls for ln, ls in zip(l_nonsph, l_sph)):
        raise ContractViolationError("l_nonsph must not exceed l_sph")
    n_hpd_f = hpd_fraction * n_a
    n_hpd = int(round(n_hpd_f))
    if abs(n_hpd_f - n_hpd) > 1e-9 or not 0 <= n_hpd <= n_a:
        raise ContractViolationError(
            f"hpd_fraction {hpd_fraction} does not give a whole atom count for {n_a} atoms"
        )

    rng = np.random.default_rng(seed)
    hpd_atoms = set(rng.permutation(n_a)[:n_hpd])
    t_aa, t_ab, t_bb = [], [], []
    for a in range(n_a):
        m = heights[a]
        nd = (int(l_nonsph[a]) + 1) ** 2

        def cplx(rows, cols):
            return rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))

        aa = np.zeros((m, m), dtype=np.complex128)
        if a in hpd_atoms:
            g = cplx(nd, nd) / np.sqrt(nd)
            aa[:nd, :nd] = g.conj().T @ g + np.eye(nd)
            tail = rng.uniform(0.5, 2.5, m - nd)
        else:
            x = cplx(nd, nd)
            block = 0.5 * (x + x.conj().T) - 2.0 * np.eye(nd)
            # The shift almost always suffices; push further if unlucky.
            while np.linalg.eigvalsh(block)[0] > -0.5:
                block -= np.eye(nd)
            aa[:nd, :nd] = block
            tail = rng.uniform(0.5, 2.5, m - nd)
        aa[np.arange(nd, m), np.arange(nd, m)] = tail

        x = cplx(nd, nd)
        bb = np.zeros((m, m), dtype=np.complex128)
        bb[:nd, :nd] = 0.5 * (x + x.conj().T)
        bb[np.arange(nd, m), np.arange(nd, m)] = rng.uniform(-1.0, 1.0, m - nd)

        ab = np.zeros((m, m), dtype=np.complex128)
        ab[:nd, :nd] = cplx(nd, nd)
        ab[np.arange(nd, m), np.arange(nd, m)] = (
            rng.standard_normal(m - nd) + 1j * rng.standard_normal(m - nd)
        )

        t_aa.append(ComplexDense.from_array(aa))
        t_ab.append(ComplexDense.from_array(ab))
        t_bb.append(ComplexDense.from_array(bb))
    return TMatrixSet(t_aa=t_aa, t_ab=t_ab, t_bb=t_bb,
                      l_sph=l_sph, l_nonsph=[int(x) for x in l_nonsph])


def synth_coefficients(seed: int, layout: AtomBlockLayout, n_basis: int,
                       udot_range: tuple = (0.5, 2.0)) -> StackedCoefficients:
    """Random full-rank-friendly coefficient stacks with group-constant norms."""
    rng = np.random.default_rng(seed)
    r = layout.total_rows
    a_star = ComplexDense.zeros(r, n_basis, capacity_rows=layout.capacity_rows)
    b_star = ComplexDense.zeros(r, n_basis, capacity_rows=layout.capacity_rows)
    a_star.array[:] = rng.standard_normal((r, n_basis)) + 1j * rng.standard_normal((r, n_basis))
    b_star.array[:] = rng.standard_normal((r, n_basis)) + 1j * rng.standard_normal((r, n_basis))
    norms = np.zeros(r)
    off = 0
    for h in layout.block_heights:
        l_top = int(np.sqrt(h)) - 1
        if (l_top + 1) ** 2 != h:
            raise ContractViolationError("block heights must be (l+1)^2 for synthetic norms")
        for l in range(l_top + 1):
            norms[off + l * l : off + (l + 1) ** 2] = rng.uniform(*udot_range)
        off += h
    return StackedCoefficients(a_star, b_star, layout, norms)
