"""Command-line front end: generate, build, verify, and benchmark.

Exit codes are a stable contract: 0 ok, 1 configuration error, 2 IO/parse
error, 3 internal contract violation, 4 verification failure.  The CLI never
mutates input files; outputs go to the directory given with ``--out`` or to a
run directory named by timestamp and seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .builder import (
    BuildConfig,
    StackedCoefficients,
    TMatrixSet,
    build_all,
    estimate_memory,
    predict_flops,
)
from .errors import ConfigurationError, ContractViolationError, NotHPDError
from .flapw import SystemSpec, compute_AB, synth_coefficients, synth_system, synth_T
from .kernels import get_backend
from .matrix import AtomBlockLayout, ComplexDense, read_hsm1, write_hsm1
from .oracle import compare_matrices, naive_flop_count, naive_H, naive_S

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_CONTRACT = 3
EXIT_VERIFY = 4

VERIFY_TOLERANCE = 1e-11
ORACLE_SIZE_GUARD = 4096


@dataclass
class RunConfig:
    command: str = ""
    seed: int = 0
    atoms: list = field(default_factory=lambda: [2])
    lsph: int = 2
    lnonsph: int = 1
    basis_factor: float = 55.0
    hpd_fraction: float = 0.5
    backup: bool = True
    threads: int = 1
    backend: str = "optimized"
    reps: int = 3
    out: str | None = None
    coeffs: str = "physics"
    force: bool = False
    bundle: str | None = None

    def validate(self):
        if self.reps < 1:
            raise ConfigurationError("--reps must be >= 1")
        if self.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        if self.lnonsph > self.lsph:
            raise ConfigurationError(
                f"--lnonsph ({self.lnonsph}) must not exceed --lsph ({self.lsph})"
            )
        if self.backend not in ("reference", "optimized"):
            raise ConfigurationError(f"unknown backend {self.backend!r}")
        if self.coeffs not in ("physics", "random"):
            raise ConfigurationError(f"--coeffs must be physics or random, not {self.coeffs!r}")
        if not self.atoms or any(a < 1 for a in self.atoms):
            raise ConfigurationError("--atoms needs positive counts")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); config errors are exit 1
        raise ConfigurationError(message)


def _parse_atoms(text: str) -> list:
    return [int(x) for x in str(text).split(",") if x.strip()]


def _build_parser() -> _Parser:
    p = _Parser(prog="hsdla", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    common = dict(formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    def add_shared(sp):
        sp.add_argument("--config", type=str, default=None,
                        help="JSON file with defaults; explicit flags override")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--backend", choices=["reference", "optimized"], default=None)
        sp.add_argument("--out", type=str, default=None)

    g = sub.add_parser("gen", help="generate a system bundle", **common)
    add_shared(g)
    g.add_argument("--atoms", type=_parse_atoms, default=None)
    g.add_argument("--lsph", type=int, default=None)
    g.add_argument("--lnonsph", type=int, default=None)
    g.add_argument("--basis-factor", type=float, default=None, dest="basis_factor")
    g.add_argument("--hpd-fraction", type=float, default=None, dest="hpd_fraction")
    g.add_argument("--coeffs", choices=["physics", "random"], default=None)

    b = sub.add_parser("build", help="build H and S from a bundle", **common)
    add_shared(b)
    b.add_argument("bundle", type=str)
    b.add_argument("--backup", action=argparse.BooleanOptionalAction, default=None)

    v = sub.add_parser("verify", help="cross-check the blocked build against the oracle",
                       **common)
    add_shared(v)
    v.add_argument("bundle", type=str)
    v.add_argument("--backup", action=argparse.BooleanOptionalAction, default=None)
    v.add_argument("--force", action="store_true", default=None,
                   help="run the oracle even beyond the size guard")

    be = sub.add_parser("bench", help="time the oracle against the blocked build", **common)
    add_shared(be)
    be.add_argument("--atoms", type=_parse_atoms, default=None,
                    help="comma-separated atom counts, one benchmark per count")
    be.add_argument("--lsph", type=int, default=None)
    be.add_argument("--lnonsph", type=int, default=None)
    be.add_argument("--basis-factor", type=float, default=None, dest="basis_factor")
    be.add_argument("--hpd-fraction", type=float, default=None, dest="hpd_fraction")
    be.add_argument("--reps", type=int, default=None)
    be.add_argument("--backup", action=argparse.BooleanOptionalAction, default=None)
    be.add_argument("--coeffs", choices=["physics", "random"], default=None)
    return p


def _resolve_config(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=ns.command)
    file_values = {}
    if getattr(ns, "config", None):
        try:
            file_values = json.loads(Path(ns.config).read_text())
        except OSError as e:
            raise ConfigurationError(f"cannot read config file: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file is not valid JSON: {e}") from e
        if not isinstance(file_values, dict):
            raise ConfigurationError("config file must hold a JSON object")
    for key, value in file_values.items():
        if not hasattr(cfg, key):
            raise ConfigurationError(f"unknown config key {key!r}")
        if key == "atoms" and not isinstance(value, list):
            value = _parse_atoms(value)
        setattr(cfg, key, value)
    for key in vars(cfg):
        if hasattr(ns, key) and getattr(ns, key) is not None:
            setattr(cfg, key, getattr(ns, key))
    cfg.command = ns.command
    cfg.validate()
    return cfg


def _run_dir(cfg: RunConfig) -> Path:
    if cfg.out:
        path = Path(cfg.out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path("hsdla-runs") / f"{stamp}-seed{cfg.seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return "sha256:" + h.hexdigest()


# ---------------------------------------------------------------------------
# bundle IO
# ---------------------------------------------------------------------------

def _make_instance(cfg: RunConfig, n_atoms: int):
    """(spec_or_None, coefficients, t_matrices) for one generated instance."""
    spec = None
    if cfg.coeffs == "physics":
        spec = synth_system(cfg.seed, n_atoms, cfg.lsph, cfg.lnonsph,
                            basis_factor=cfg.basis_factor)
        coeffs = compute_AB(spec)
        layout = coeffs.layout
    else:
        heights = tuple((cfg.lsph + 1) ** 2 for _ in range(n_atoms))
        layout = AtomBlockLayout(heights)
        n_basis = max(1, int(round(cfg.basis_factor * n_atoms)))
        coeffs = synth_coefficients(cfg.seed, layout, n_basis)
    tmats = synth_T(cfg.seed + 1, layout, cfg.lnonsph, cfg.hpd_fraction)
    return spec, coeffs, tmats


def _write_bundle(outdir: Path, cfg: RunConfig, spec, coeffs, tmats) -> dict:
    files = {}

    def emit_matrix(name: str, m: ComplexDense):
        write_hsm1(outdir / name, m)
        files[name] = _sha256(outdir / name)

    def emit_text(name: str, text: str):
        (outdir / name).write_text(text)
        files[name] = _sha256(outdir / name)

    if spec is not None:
        emit_text("system.json", spec.to_json())
    layout_doc = {
        "block_heights": list(coeffs.layout.block_heights),
        "capacity_block_height": coeffs.layout.capacity_block_height,
        "udot_norms": coeffs.udot_norms.tolist(),
        "l_sph": list(tmats.l_sph),
        "l_nonsph": list(tmats.l_nonsph),
    }
    emit_text("layout.json", json.dumps(layout_doc, sort_keys=True))
    emit_matrix("A.hsm1", coeffs.A_star)
    emit_matrix("B.hsm1", coeffs.B_star)
    for a in range(tmats.atom_count):
        emit_matrix(f"T_AA_{a:03d}.hsm1", tmats.t_aa[a])
        emit_matrix(f"T_AB_{a:03d}.hsm1", tmats.t_ab[a])
        emit_matrix(f"T_BB_{a:03d}.hsm1", tmats.t_bb[a])
    manifest = {
        "format": "hsdla-bundle-v1",
        "seed": cfg.seed,
        "params": {
            "atoms": coeffs.layout.atom_count,
            "lsph": cfg.lsph,
            "lnonsph": cfg.lnonsph,
            "basis_factor": cfg.basis_factor,
            "hpd_fraction": cfg.hpd_fraction,
            "coeffs": cfg.coeffs,
        },
        "n_basis": coeffs.n_basis,
        "files": files,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return manifest


def _load_bundle(bundle_dir: Path):
    """(spec_or_None, coefficients, t_matrices) read back from disk."""
    manifest_path = bundle_dir / "manifest.json"
    if not manifest_path.is_file():
        raise OSError(f"{bundle_dir} has no manifest.json")
    json.loads(manifest_path.read_text())  # malformed manifest -> parse error
    layout_doc = json.loads((bundle_dir / "layout.json").read_text())
    layout = AtomBlockLayout(tuple(layout_doc["block_heights"]),
                             int(layout_doc["capacity_block_height"]))
    a_compact = read_hsm1(bundle_dir / "A.hsm1")
    b_compact = read_hsm1(bundle_dir / "B.hsm1")
    # Re-embed into capacity-sized allocations for the stacked memory plan.
    a_star = ComplexDense.zeros(a_compact.rows, a_compact.cols,
                                capacity_rows=layout.capacity_rows)
    b_star = ComplexDense.zeros(b_compact.rows, b_compact.cols,
                                capacity_rows=layout.capacity_rows)
    a_star.array[:] = a_compact.array
    b_star.array[:] = b_compact.array
    coeffs = StackedCoefficients(a_star, b_star, layout,
                                 np.asarray(layout_doc["udot_norms"]))
    t_aa, t_ab, t_bb = [], [], []
    for a in range(layout.atom_count):
        t_aa.append(read_hsm1(bundle_dir / f"T_AA_{a:03d}.hsm1"))
        t_ab.append(read_hsm1(bundle_dir / f"T_AB_{a:03d}.hsm1"))
        t_bb.append(read_hsm1(bundle_dir / f"T_BB_{a:03d}.hsm1"))
    tmats = TMatrixSet(t_aa=t_aa, t_ab=t_ab, t_bb=t_bb,
                       l_sph=list(layout_doc["l_sph"]),
                       l_nonsph=list(layout_doc["l_nonsph"]))
    spec = None
    system_path = bundle_dir / "system.json"
    if system_path.is_file():
        spec = SystemSpec.from_json(system_path.read_text())
    return spec, coeffs, tmats


def _regenerator(spec):
    if spec is None:
        return None

    def regen(coeffs):
        fresh = compute_AB(spec)
        coeffs.A_star.array[:] = fresh.A_star.array
        coeffs.B_star.array[:] = fresh.B_star.array

    return regen


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(cfg: RunConfig) -> int:
    if len(cfg.atoms) != 1:
        raise ConfigurationError("gen takes exactly one atom count")
    outdir = _run_dir(cfg)
    spec, coeffs, tmats = _make_instance(cfg, cfg.atoms[0])
    manifest = _write_bundle(outdir, cfg, spec, coeffs, tmats)
    print(f"wrote bundle to {outdir} (N_G = {manifest['n_basis']}, "
          f"{len(manifest['files'])} files)")
    return EXIT_OK


def cmd_build(cfg: RunConfig) -> int:
    spec, coeffs, tmats = _load_bundle(Path(cfg.bundle))
    regen = _regenerator(spec)
    if not cfg.backup and regen is None:
        raise ConfigurationError(
            "backup=false needs a bundle with system.json to re-create coefficients"
        )
    outdir = _run_dir(cfg)
    config = BuildConfig(backup=cfg.backup, thread_count=cfg.threads,
                         backend=cfg.backend)
    h, s, report = build_all(coeffs, tmats, config, regenerate=regen)
    write_hsm1(outdir / "H.hsm1", h)
    write_hsm1(outdir / "S.hsm1", s)
    (outdir / "report.json").write_text(
        json.dumps(report.to_json_dict(), sort_keys=True, indent=1)
    )
    print(f"wrote H.hsm1, S.hsm1, report.json to {outdir} "
          f"({report.ledger.total} FLOPs, {report.hpd_atom_count} HPD atoms)")
    return EXIT_OK


def _verify_metrics(cfg: RunConfig, spec, coeffs, tmats) -> dict:
    config = BuildConfig(backup=cfg.backup, thread_count=cfg.threads,
                         backend=cfg.backend)
    regen = _regenerator(spec)
    if not cfg.backup and regen is None:
        raise ConfigurationError(
            "backup=false needs a bundle with system.json to re-create coefficients"
        )
    h_fast, s_fast, report = build_all(coeffs.copy(), tmats, config, regenerate=regen)
    h_ref = naive_H(coeffs, tmats)
    s_ref = naive_S(coeffs)

    tiny = np.finfo(float).tiny
    def herm_residual(m):
        arr = m.array
        return float(np.linalg.norm(arr - arr.conj().T)
                     / max(np.linalg.norm(arr), tiny))

    metrics = {
        "rel_err_H": compare_matrices(h_fast, h_ref),
        "rel_err_S": compare_matrices(s_fast, s_ref),
        "herm_residual_H_oracle": herm_residual(h_ref),
        "herm_residual_S_oracle": herm_residual(s_ref),
    }
    # Structural HPD guard: the muffin-tin overlap has rank at most twice the
    # stacked row count, so larger bases cannot be positive definite.
    r2 = 2 * coeffs.layout.total_rows
    n_g = coeffs.n_basis
    if np.linalg.norm(s_fast.array) == 0.0:
        metrics["s_hpd"] = "skipped-zero"
    elif r2 < n_g:
        metrics["s_hpd"] = "skipped-rank-deficient"
    else:
        backend = get_backend(cfg.backend, cfg.threads)
        try:
            backend.cholesky_factor(s_fast, ledger=report.ledger)
            metrics["s_hpd"] = "pass"
        except NotHPDError as e:
            metrics["s_hpd"] = f"fail-pivot-{e.pivot}"
    metrics["report"] = report.to_json_dict()
    return metrics


def cmd_verify(cfg: RunConfig) -> int:
    spec, coeffs, tmats = _load_bundle(Path(cfg.bundle))
    n_g = coeffs.n_basis
    if n_g > ORACLE_SIZE_GUARD and not cfg.force:
        raise ConfigurationError(
            f"N_G = {n_g} exceeds the oracle guard ({ORACLE_SIZE_GUARD}); "
            "pass --force to verify anyway"
        )
    metrics = _verify_metrics(cfg, spec, coeffs, tmats)

    failures = []
    for key in ("rel_err_H", "rel_err_S",
                "herm_residual_H_oracle", "herm_residual_S_oracle"):
        value = metrics[key]
        ok = value <= VERIFY_TOLERANCE
        print(f"{key:26s} {value:.3e}  [{'ok' if ok else 'FAIL'}]")
        if not ok:
            failures.append(key)
    hpd = metrics["s_hpd"]
    if hpd == "pass":
        print(f"{'S_cholesky':26s} pass       [ok]")
    elif hpd.startswith("skipped"):
        reason = ("S = 0 is not positive definite" if hpd == "skipped-zero"
                  else "2*sum(N_La) < N_G makes S structurally singular")
        print(f"{'S_cholesky':26s} skipped    [warning: {reason}]")
    else:
        print(f"{'S_cholesky':26s} {hpd}  [FAIL]")
        failures.append("s_hpd")

    if cfg.out:
        outdir = _run_dir(cfg)
        (outdir / "verify.json").write_text(json.dumps(metrics, sort_keys=True, indent=1))
    if failures:
        print(f"verification FAILED: {', '.join(failures)}")
        return EXIT_VERIFY
    print("verification passed")
    return EXIT_OK


def _time_repeated(fn, reps: int) -> list:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return times


def cmd_bench(cfg: RunConfig) -> int:
    outdir = _run_dir(cfg)
    records = []
    rows = []
    for n_atoms in cfg.atoms:
        spec, coeffs, tmats = _make_instance(cfg, n_atoms)
        regen = _regenerator(spec)
        if not cfg.backup and regen is None:
            raise ConfigurationError("backup=false benchmarks need physics coefficients")
        config = BuildConfig(backup=cfg.backup, thread_count=cfg.threads,
                             backend=cfg.backend)
        n_g = coeffs.n_basis
        layout = coeffs.layout

        # Warm-up outside the timed region (JIT compilation, BLAS init).
        naive_S(coeffs)
        naive_H(coeffs, tmats)
        h_fast, s_fast, report = build_all(coeffs.copy(), tmats, config,
                                           regenerate=regen)

        def run_oracle():
            naive_S(coeffs)  # the oracle reads but never mutates its inputs
            naive_H(coeffs, tmats)

        oracle_times = _time_repeated(run_oracle, cfg.reps)

        copies = [coeffs.copy() for _ in range(cfg.reps)]  # consumed by the build
        hsdla_times = []
        for c in copies:
            t0 = time.perf_counter()
            build_all(c, tmats, config, regenerate=regen)
            hsdla_times.append(time.perf_counter() - t0)

        rel_err = max(
            compare_matrices(h_fast, naive_H(coeffs, tmats)),
            compare_matrices(s_fast, naive_S(coeffs)),
        )
        med_o = statistics.median(oracle_times)
        med_h = statistics.median(hsdla_times)
        speedup = med_o / med_h
        oracle_flops = naive_flop_count(coeffs, tmats)
        hsdla_flops = report.ledger.total
        record = {
            "config": {"atoms": n_atoms, "lsph": cfg.lsph, "lnonsph": cfg.lnonsph,
                       "seed": cfg.seed, "backend": cfg.backend,
                       "threads": cfg.threads, "backup": cfg.backup,
                       "hpd_fraction": cfg.hpd_fraction, "reps": cfg.reps,
                       "coeffs": cfg.coeffs},
            "n_basis": n_g,
            "n_l": layout.capacity_block_height,
            "oracle": {"times_s": oracle_times, "median_s": med_o,
                       "min_s": min(oracle_times), "flops": oracle_flops,
                       "gflops_per_s": oracle_flops / med_o / 1e9},
            "hsdla": {"times_s": hsdla_times, "median_s": med_h,
                      "min_s": min(hsdla_times), "flops": hsdla_flops,
                      "gflops_per_s": hsdla_flops / med_h / 1e9},
            "speedup": speedup,
            "rel_err": rel_err,
            "predicted_bytes": estimate_memory(n_atoms, layout.capacity_block_height,
                                               n_g, cfg.backup),
        }
        records.append(record)
        rows.append((n_atoms, layout.capacity_block_height, n_g, "oracle",
                     med_o, oracle_flops, oracle_flops / med_o / 1e9, 1.0, rel_err))
        rows.append((n_atoms, layout.capacity_block_height, n_g, "hsdla",
                     med_h, hsdla_flops, hsdla_flops / med_h / 1e9, speedup, rel_err))
        print(f"N_A={n_atoms:4d} N_L={layout.capacity_block_height:4d} N_G={n_g:5d}  "
              f"oracle {med_o:.4f}s  hsdla {med_h:.4f}s  "
              f"speedup {speedup:5.1f}x  rel_err {rel_err:.2e}")

    (outdir / "bench.json").write_text(json.dumps(records, sort_keys=True, indent=1))
    with open(outdir / "bench.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N_A", "N_L", "N_G", "method", "median_s", "flops",
                         "gflops_per_s", "speedup", "rel_err"])
        writer.writerows(rows)
    print(f"wrote bench.json and bench.csv to {outdir}")
    return EXIT_OK


_COMMANDS = {"gen": cmd_gen, "build": cmd_build, "verify": cmd_verify, "bench": cmd_bench}


def main(argv=None) -> int:
    try:
        ns = _build_parser().parse_args(argv)
        cfg = _resolve_config(ns)
        cfg.bundle = getattr(ns, "bundle", None)
        return _COMMANDS[cfg.command](cfg)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolationError as e:
        print(f"contract violation: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except (OSError, json.JSONDecodeError) as e:
        print(f"IO error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        # Bad magic numbers and malformed payloads surface as ValueError.
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_IO


def console_main():  # pragma: no cover - thin wrapper
    raise SystemExit(main())


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
