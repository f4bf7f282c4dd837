"""Command-line front end: ``run``, ``exact``, ``compare`` and ``selftest``.

Exit codes: 0 success or pass, 1 validation error, 2 numerical abort,
3 comparison failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import parse_config
from .errors import GrassfieldError, NumericalAbort, ValidationError
from .grassmann import algebra_identity_errors
from .models import GridSpec, TwoComponentModel, discretize_two_component
from .observables import evaluate_functionals, momentum_mode_rows
from .oracle import (
    MAX_MODES,
    ExactEvolution,
    NumberSector,
    fock_hamiltonian,
    fock_state,
    number_sector_trace,
    orbital_state,
)
from .propagator import noise_moment_check, run_ensemble

EXIT_OK, EXIT_VALIDATION, EXIT_ABORT, EXIT_COMPARE = 0, 1, 2, 3
COLUMNS = ("observable_id", "t", "re", "im", "stderr_re", "stderr_im", "n_traj", "n_excluded")


def _num(x):
    """Shortest round-tripping text for a float."""
    return repr(float(x))


@dataclass
class ResultTable:
    """Rows ``(observable_id, t, re, im, stderr_re, stderr_im, n_traj, n_excluded)`` plus metadata."""

    rows: list
    metadata: dict = field(default_factory=dict)

    def sorted(self):
        order = {oid: i for i, oid in enumerate(dict.fromkeys(r["observable_id"] for r in self.rows))}
        return sorted(self.rows, key=lambda r: (order[r["observable_id"]], r["t"]))

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in self.sorted():
            writer.writerow([
                r["observable_id"], _num(r["t"]), _num(r["re"]), _num(r["im"]),
                _num(r["stderr_re"]), _num(r["stderr_im"]), int(r["n_traj"]), int(r["n_excluded"]),
            ])
        return buf.getvalue()

    def to_json(self):
        rows = [{k: r[k] for k in COLUMNS} for r in self.sorted()]
        return json.dumps({"metadata": self.metadata, "rows": rows}, indent=2, sort_keys=True) + "\n"

    def lookup(self):
        return {(r["observable_id"], round(float(r["t"]), 12)): r for r in self.rows}

    @classmethod
    def read(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as err:
            raise ValidationError(f"cannot read result table: {err}", str(path)) from None
        if path.suffix == ".json":
            try:
                obj = json.loads(text)
                return cls(list(obj["rows"]), dict(obj.get("metadata", {})))
            except (ValueError, KeyError, TypeError) as err:
                raise ValidationError(f"malformed result table: {err}", str(path)) from None
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValidationError(f"expected CSV columns {list(COLUMNS)}", str(path))
        rows = []
        for rec in reader:
            row = {k: float(rec[k]) for k in COLUMNS[1:6]}
            row.update(observable_id=rec["observable_id"], n_traj=int(rec["n_traj"]), n_excluded=int(rec["n_excluded"]))
            rows.append(row)
        return cls(rows, {})


def _row(oid, t, value, se_re=0.0, se_im=0.0, n=0, excluded=0):
    value = complex(value)
    return {
        "observable_id": oid, "t": float(t), "re": value.real, "im": value.imag,
        "stderr_re": float(se_re), "stderr_im": float(se_im), "n_traj": int(n), "n_excluded": int(excluded),
    }


def stochastic_run(cfg, workers=None, progress=None):
    """Trajectory ensemble of ``cfg`` reduced to the configured observables.

    Returns the :class:`~grassfield.propagator.EnsembleRun` whose per-trajectory
    vectors are indexed ``[checkpoint, observable]``.
    """
    coeffs = cfg.coefficients()
    M0 = cfg.initial_moments()
    funcs = cfg.functionals(M0)

    def reducer(T, Tp):
        return evaluate_functionals(M0, funcs, T, Tp)

    return run_ensemble(
        coeffs, cfg.scheme, cfg.seed, cfg.trajectories, cfg.checkpoints, reducer,
        chunk_size=cfg.chunk_size, workers=workers if workers is not None else cfg.workers,
        divergence_ceiling=cfg.divergence_ceiling, progress=progress,
    )


def tabulate_run(cfg, run, n_chunks=None, partial=False):
    """Result table of an ensemble run, optionally over its first ``n_chunks`` chunks."""
    mean, se_re, se_im, count, excluded = run.combine(n_chunks)
    rows = []
    for k, t in enumerate(cfg.times()):
        for f, req in enumerate(cfg.observables):
            rows.append(_row(req.id, t, mean[k, f], se_re[k, f], se_im[k, f], count, excluded))
    meta = cfg.metadata() | {"kind": "stochastic", "trajectories": cfg.trajectories, "partial": partial}
    return ResultTable(rows, meta)


def stochastic_table(cfg, workers=None, progress=None):
    """Run the trajectory ensemble of ``cfg`` and tabulate every observable at every checkpoint.

    On a divergence abort the raised :class:`NumericalAbort` carries the
    partial table as ``.table``.
    """
    try:
        run = stochastic_run(cfg, workers, progress)
    except NumericalAbort as err:
        err.table = tabulate_run(cfg, err.partial, partial=True)
        raise
    return tabulate_run(cfg, run)


class _FullSpace:
    def __init__(self, n, p):
        self.n = n

    def hamiltonian(self, h, v):
        return fock_hamiltonian(h, v)

    def fock_vector(self, slots):
        return fock_state(self.n, slots)

    def orbital_vector(self, orbitals):
        return orbital_state(self.n, orbitals)


def _exact_space(cfg):
    """Full Fock space up to the dense bound, else the fixed-particle-number sector."""
    if cfg.n_slots <= MAX_MODES:
        return _FullSpace(cfg.n_slots, cfg.order)
    return NumberSector(cfg.n_slots, cfg.order)


def exact_state(cfg, space=None):
    """Initial ket of ``cfg`` over composite grid modes."""
    space = space or _exact_space(cfg)
    if cfg.initial["kind"] == "plane_waves":
        return space.orbital_vector(cfg.initial["orbitals"])
    return sum(amp * space.fock_vector(slots) for slots, amp in cfg.initial["amplitudes"].items())


def exact_table(cfg):
    """Exact-diagonalisation values of every observable at every checkpoint."""
    mh = cfg.mode_hamiltonian()
    space = _exact_space(cfg)
    evo = ExactEvolution(space.hamiltonian(mh.h, mh.v), mh.hbar)
    psi0 = exact_state(cfg, space)
    vectors = []
    for req in cfg.observables:
        if req.kind in ("population", "coherence"):
            vectors.append((space.fock_vector(req.bra), space.fock_vector(req.ket)))
        elif req.kind == "momentum":
            vectors.append((
                space.orbital_vector(momentum_mode_rows(cfg.grid, cfg.n_components, req.bra)),
                space.orbital_vector(momentum_mode_rows(cfg.grid, cfg.n_components, req.ket)),
            ))
        else:
            vectors.append(None)
    rows = []
    for t in cfg.times():
        psi = evo.unitary(t) @ psi0
        for req, vec in zip(cfg.observables, vectors):
            if vec is None:
                # every sector state holds exactly p particles: population sum is the norm
                value = number_sector_trace(np.outer(psi, psi.conj()), cfg.order) if isinstance(space, _FullSpace) \
                    else np.vdot(psi, psi)
            else:
                bra, ket = vec
                value = np.vdot(bra, psi) * np.vdot(psi, ket)
            rows.append(_row(req.id, t, value))
    return ResultTable(rows, cfg.metadata() | {"kind": "exact"})


def _zscore(diff, se, atol):
    if abs(diff) <= atol:
        return 0.0
    return abs(diff) / se if se > 0 else float("inf")


def compare_tables(stochastic, exact, threshold=3.0, force=False, atol=1e-12):
    """Per-row z-scores of ``stochastic`` against ``exact``; returns a report dict.

    ``z = max(|d_re| / se_re, |d_im| / se_im)``; differences within ``atol``
    count as zero.  Raises :class:`ValidationError` on unmatched rows or on
    mismatched model hashes unless ``force`` is set.
    """
    hs, he = stochastic.metadata.get("model_hash"), exact.metadata.get("model_hash")
    if hs and he and hs != he and not force:
        raise ValidationError(f"model hashes differ ({hs} vs {he}); pass --force to compare anyway", "model_hash")
    a, b = stochastic.lookup(), exact.lookup()
    missing = sorted({k[0] for k in a.keys() ^ b.keys()})
    if missing:
        raise ValidationError(f"unmatched observable ids/times: {missing}", "rows")
    rows = []
    for key in sorted(a, key=lambda k: (k[0], k[1])):
        s, e = a[key], b[key]
        z = max(
            _zscore(s["re"] - e["re"], s["stderr_re"], atol),
            _zscore(s["im"] - e["im"], s["stderr_im"], atol),
        )
        rows.append({"observable_id": key[0], "t": key[1], "z": z,
                     "stochastic": [s["re"], s["im"]], "exact": [e["re"], e["im"]]})
    max_z = max((r["z"] for r in rows), default=0.0)
    return {
        "threshold": float(threshold),
        "max_z": max_z,
        "pass": bool(max_z <= threshold),
        "n_rows": len(rows),
        "rows": rows,
        "model_hash": [hs, he],
    }


def report_text(report):
    lines = [f"{'observable':<20} {'t':>10} {'z':>10}"]
    for r in report["rows"]:
        lines.append(f"{r['observable_id']:<20} {r['t']:>10.4f} {r['z']:>10.3f}")
    verdict = "PASS" if report["pass"] else "FAIL"
    lines.append(f"max z = {report['max_z']:.3f} (threshold {report['threshold']:g}): {verdict}")
    return "\n".join(lines) + "\n"


def selftest(n_cases=200, n_samples=20000, seed=0):
    """Algebra identities and per-step noise moments; returns ``(ok, lines)``."""
    lines, ok = [], True
    for n in range(1, 4):
        errs = algebra_identity_errors(n, n_cases, seed + n)
        worst = max(errs.values())
        good = worst <= 1e-12
        ok &= good
        lines.append(f"algebra n={n}: max violation {worst:.2e} {'ok' if good else 'FAIL'}")
    model = TwoComponentModel(1.0, 1.0, np.zeros(2), np.zeros(2))
    coeffs = discretize_two_component(model, GridSpec(2))
    chk = noise_moment_check(coeffs, n_samples, seed, dt=1e-3)
    good = chk.max_z_same <= 5 and chk.max_z_cross <= 5
    ok &= good
    lines.append(
        f"noise moments ({chk.n_samples} samples): same-sector max z {chk.max_z_same:.2f}, "
        f"cross-sector max z {chk.max_z_cross:.2f} {'ok' if good else 'FAIL'}"
    )
    return ok, lines


def _write(table, out_dir, stem, formats):
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if "csv" in formats:
        paths.append(out_dir / f"{stem}.csv")
        paths[-1].write_text(table.to_csv())
    if "json" in formats:
        paths.append(out_dir / f"{stem}.json")
        paths[-1].write_text(table.to_json())
    return paths


def _plot(table, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    by_id = {}
    for r in table.sorted():
        by_id.setdefault(r["observable_id"], []).append(r)
    for oid, rs in by_id.items():
        t = [r["t"] for r in rs]
        y = np.array([r["re"] for r in rs])
        se = np.array([r["stderr_re"] for r in rs])
        ax.errorbar(t, y, yerr=se, label=oid, capsize=2)
    ax.set_xlabel("t")
    ax.set_ylabel("Re estimate")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _load(args):
    try:
        raw = yaml.safe_load(Path(args.config).read_text())
    except OSError as err:
        raise ValidationError(f"cannot read configuration: {err}", args.config) from None
    except yaml.YAMLError as err:
        raise ValidationError(f"malformed configuration: {err}", args.config) from None
    if isinstance(raw, dict):
        if getattr(args, "seed", None) is not None:
            raw.setdefault("ensemble", {})["seed"] = args.seed
        if getattr(args, "trajectories", None) is not None:
            raw.setdefault("ensemble", {})["trajectories"] = args.trajectories
    return parse_config(raw)


def _formats(args, cfg):
    if args.format == "both":
        return ["csv", "json"]
    if args.format:
        return [args.format]
    return cfg.output["formats"]


def _out_dir(args, cfg):
    return Path(args.out_dir) if args.out_dir else Path(cfg.output["dir"])


def cmd_run(args):
    cfg = _load(args)
    progress = None
    if args.progress:
        def progress(done, total):
            print(f"\rchunk {done}/{total}", end="" if done < total else "\n", file=sys.stderr)
    stem = cfg.output["prefix"]
    out_dir = _out_dir(args, cfg)
    try:
        table = stochastic_table(cfg, workers=args.workers, progress=progress)
    except NumericalAbort as err:
        _write(err.table, out_dir, stem + "_partial", _formats(args, cfg))
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_ABORT
    paths = _write(table, out_dir, stem, _formats(args, cfg))
    if args.plot or cfg.output["plot"]:
        _plot(table, out_dir / f"{stem}.png")
        paths.append(out_dir / f"{stem}.png")
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_exact(args):
    cfg = _load(args)
    table = exact_table(cfg)
    out_dir = _out_dir(args, cfg)
    stem = cfg.output["prefix"] + "_exact"
    paths = _write(table, out_dir, stem, _formats(args, cfg))
    if args.plot or cfg.output["plot"]:
        _plot(table, out_dir / f"{stem}.png")
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_compare(args):
    report = compare_tables(
        ResultTable.read(args.stochastic), ResultTable.read(args.exact),
        threshold=args.threshold, force=args.force,
    )
    text = report_text(report)
    print(text, end="")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        (out / "comparison.txt").write_text(text)
    return EXIT_OK if report["pass"] else EXIT_COMPARE


def cmd_selftest(args):
    ok, lines = selftest(args.cases, args.samples, args.seed or 0)
    for line in lines:
        print(line)
    return EXIT_OK if ok else EXIT_COMPARE


def build_parser():
    parser = argparse.ArgumentParser(prog="grassfield", description="Grassmann phase-space simulations of fermions.")
    parser.add_argument("--version", action="version", version=f"grassfield {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="YAML or JSON experiment configuration")
        p.add_argument("--out-dir", help="output directory (overrides output.dir)")
        p.add_argument("--format", choices=("csv", "json", "both"), help="output format(s)")
        p.add_argument("--plot", action="store_true", help="also write a PNG of estimate and error bars vs time")

    p = sub.add_parser("run", help="stochastic trajectory ensemble")
    common(p)
    p.add_argument("--seed", type=int, help="master seed (overrides ensemble.seed)")
    p.add_argument("--trajectories", type=int, help="overrides ensemble.trajectories")
    p.add_argument("--workers", type=int, help="worker threads (default: $GRASSFIELD_WORKERS or 1)")
    p.add_argument("--progress", action="store_true", help="print a chunk counter to stderr")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("exact", help="exact Fock-space evolution (at most 8 modes)")
    common(p)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("compare", help="z-scores of a stochastic table against an exact one")
    p.add_argument("stochastic")
    p.add_argument("exact")
    p.add_argument("--threshold", type=float, default=3.0)
    p.add_argument("--force", action="store_true", help="compare despite differing model hashes")
    p.add_argument("--out-dir", help="write comparison.json and comparison.txt here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("selftest", help="algebra identities and noise-moment checks")
    p.add_argument("--cases", type=int, default=200)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalAbort as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_ABORT
    except GrassfieldError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
