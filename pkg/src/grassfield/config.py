"""Experiment configuration: parsing, validation and construction of run inputs.

A configuration is a YAML (or JSON) mapping with the blocks ``model``,
``grid``, ``initial_state``, ``scheme``, ``ensemble``, ``observables`` and
``output``; see the README for the schema.  Every validation failure names
the offending field as a dotted path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ValidationError
from .models import (
    GridSpec,
    MultiComponentModel,
    TwoComponentModel,
    contact_two_body,
    discretize_multi_component,
    discretize_two_component,
    gaussian_two_body,
    mode_hamiltonian,
)
from .observables import (
    entry_functional,
    fock_state_moments,
    momentum_functional,
    momentum_mode_rows,
    slater_moments,
    trace_functional,
)
from .propagator import StepScheme

OBSERVABLE_KINDS = ("population", "coherence", "momentum", "total_population")


def _get(block, key, path, kind=None, default=..., choices=None):
    if not isinstance(block, dict):
        raise ValidationError("expected a mapping", path)
    if key not in block:
        if default is ...:
            raise ValidationError("required field is missing", f"{path}.{key}")
        return default
    val = block[key]
    where = f"{path}.{key}"
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, (int, float)) or int(val) != val:
            raise ValidationError(f"expected an integer, got {val!r}", where)
        val = int(val)
    elif kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ValidationError(f"expected a number, got {val!r}", where)
        val = float(val)
        if not np.isfinite(val):
            raise ValidationError("must be finite", where)
    elif kind is str and not isinstance(val, str):
        raise ValidationError(f"expected a string, got {val!r}", where)
    elif kind is list and not isinstance(val, list):
        raise ValidationError(f"expected a list, got {val!r}", where)
    if choices is not None and val not in choices:
        raise ValidationError(f"must be one of {list(choices)}, got {val!r}", where)
    return val


def _positive(val, path):
    if not val > 0:
        raise ValidationError(f"must be positive, got {val}", path)
    return val


def potential_samples(spec, grid, mass, path):
    """Grid samples of a potential preset (energy units)."""
    if spec is None:
        return np.zeros(grid.n_points)
    preset = _get(spec, "preset", path, str, choices=("none", "harmonic", "sin2", "table"))
    x = grid.coordinates()
    if preset == "none":
        return np.zeros(grid.n_points)
    if preset == "harmonic":
        omega = _get(spec, "omega", path, float)
        center = _get(spec, "center", path, float, default=0.0)
        return 0.5 * mass * omega**2 * ((x - center) ** 2).sum(axis=1)
    if preset == "sin2":
        depth = _get(spec, "depth", path, float)
        k = _get(spec, "wavevector", path, float)
        return depth * (np.sin(k * x) ** 2).sum(axis=1)
    values = _get(spec, "values", path, list)
    arr = np.asarray(values, dtype=float)
    if arr.shape != (grid.n_points,):
        raise ValidationError(f"expected {grid.n_points} values, got {arr.size}", f"{path}.values")
    return arr


def _slot(item, n_comp, grid, path):
    if not isinstance(item, (list, tuple)) or len(item) != 2:
        raise ValidationError(f"expected [component, point], got {item!r}", path)
    comp, point = item
    if not isinstance(comp, int) or not 0 <= comp < n_comp:
        raise ValidationError(f"component {comp!r} outside 0..{n_comp - 1}", path)
    if not isinstance(point, int) or not 0 <= point < grid.n_points:
        raise ValidationError(f"grid point {point!r} outside 0..{grid.n_points - 1}", path)
    return comp * grid.n_points + point


def _momentum(item, n_comp, grid, path):
    if not isinstance(item, (list, tuple)) or len(item) != 2:
        raise ValidationError(f"expected [component, label], got {item!r}", path)
    comp, label = item
    if not isinstance(comp, int) or not 0 <= comp < n_comp:
        raise ValidationError(f"component {comp!r} outside 0..{n_comp - 1}", path)
    try:
        grid.momentum_index(label)
    except ValidationError as err:
        raise ValidationError(str(err), path) from None
    return (comp, label)


@dataclass(frozen=True)
class ObservableRequest:
    id: str
    kind: str
    bra: tuple = ()
    ket: tuple = ()


@dataclass
class ExperimentConfig:
    """Validated experiment description plus the raw mapping it came from."""

    raw: dict
    model: object
    grid: GridSpec
    noise_form: str
    initial: dict
    scheme: StepScheme
    checkpoints: np.ndarray
    trajectories: int
    seed: int
    divergence_ceiling: float
    chunk_size: int
    workers: int | None
    observables: list
    output: dict

    @property
    def n_components(self):
        return 2 if isinstance(self.model, TwoComponentModel) else self.model.n_components

    @property
    def n_slots(self):
        return self.n_components * self.grid.n_points

    @property
    def order(self):
        return self.initial["order"]

    def times(self):
        return [float(s) * self.scheme.dt for s in self.checkpoints]

    def coefficients(self):
        if isinstance(self.model, TwoComponentModel):
            return discretize_two_component(self.model, self.grid)
        return discretize_multi_component(self.model, self.grid, noise_form=self.noise_form)

    def mode_hamiltonian(self):
        return mode_hamiltonian(self.model, self.grid, max_modes=64)

    def initial_moments(self):
        """Initial moment tensor from the state amplitudes."""
        cv = self.grid.cell_volume
        if self.initial["kind"] == "plane_waves":
            return slater_moments(self.initial["orbitals"], cv, self.grid.n_points)
        return fock_state_moments(self.initial["amplitudes"], self.n_slots, cv, self.grid.n_points)

    def functionals(self, M0):
        out = []
        for req in self.observables:
            if req.kind in ("population", "coherence"):
                out.append(entry_functional(M0, req.bra, req.ket))
            elif req.kind == "momentum":
                out.append(momentum_functional(M0, self.grid, req.bra, req.ket))
            else:
                out.append(trace_functional(M0))
        return out

    def config_hash(self):
        return _hash({k: v for k, v in self.raw.items() if k != "output"} | {"ensemble": _ensemble_for_hash(self.raw)})

    def model_hash(self):
        return _hash({k: self.raw.get(k) for k in ("model", "grid", "initial_state")})

    def metadata(self):
        return {
            "config_hash": self.config_hash(),
            "model_hash": self.model_hash(),
            "version": __version__,
            "seed": self.seed,
            "scheme": self.scheme.variant,
            "dt": self.scheme.dt,
        }


def _ensemble_for_hash(raw):
    ens = dict(raw.get("ensemble", {}))
    ens.pop("workers", None)
    return ens


def _hash(obj):
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _parse_model(block, grid):
    path = "model"
    mtype = _get(block, "type", path, str, choices=("two-component", "multi-component"))
    hbar = _positive(_get(block, "hbar", path, float, default=1.0), f"{path}.hbar")
    mass = _positive(_get(block, "mass", path, float, default=1.0), f"{path}.mass")
    if mtype == "two-component":
        g = _get(block, "coupling", path, float)
        pots = _get(block, "potential", path, default={}) or {}
        up = potential_samples(pots.get("up"), grid, mass, f"{path}.potential.up")
        down = potential_samples(pots.get("down"), grid, mass, f"{path}.potential.down")
        return TwoComponentModel(mass, g, up, down, hbar), "direct"
    n_comp = _get(block, "components", path, int)
    if n_comp < 1:
        raise ValidationError("need at least one component", f"{path}.components")
    one = np.zeros((n_comp, n_comp, grid.n_points))
    pots = _get(block, "potentials", path, list, default=[])
    if pots and len(pots) != n_comp:
        raise ValidationError(f"expected {n_comp} entries, got {len(pots)}", f"{path}.potentials")
    for a, spec in enumerate(pots):
        one[a, a] = potential_samples(spec, grid, mass, f"{path}.potentials[{a}]")
    for i, cpl in enumerate(_get(block, "couplings", path, list, default=[])):
        where = f"{path}.couplings[{i}]"
        pair = _get(cpl, "components", where, list)
        if len(pair) != 2 or not all(isinstance(c, int) and 0 <= c < n_comp for c in pair) or pair[0] == pair[1]:
            raise ValidationError(f"expected two distinct components, got {pair!r}", f"{where}.components")
        val = _get(cpl, "value", where, float)
        one[pair[0], pair[1]] += val
        one[pair[1], pair[0]] += val
    tb = _get(block, "two_body", path, default={"preset": "none"})
    where = f"{path}.two_body"
    preset = _get(tb, "preset", where, str, choices=("none", "contact", "gaussian", "table"))
    if preset == "none":
        two = np.zeros((n_comp,) * 4 + (grid.n_points,) * 2)
    elif preset == "contact":
        two = contact_two_body(n_comp, grid, _get(tb, "coupling", where, float))
    elif preset == "gaussian":
        two = gaussian_two_body(
            n_comp, grid, _get(tb, "strength", where, float),
            _positive(_get(tb, "width", where, float), f"{where}.width"),
        )
    else:
        fname = _get(tb, "file", where, str)
        try:
            two = np.load(fname)
        except OSError as err:
            raise ValidationError(f"cannot read kernel table: {err}", f"{where}.file") from None
    noise_form = _get(block, "noise_form", path, str, default="direct", choices=("direct", "exchange"))
    try:
        model = MultiComponentModel(n_comp, mass, one, two, hbar)
    except ValidationError as err:
        raise ValidationError(str(err), path) from None
    return model, noise_form


def _parse_initial(block, n_comp, grid):
    path = "initial_state"
    if not isinstance(block, dict) or len(block) != 1:
        raise ValidationError("expected exactly one of fock, superposition, plane_waves", path)
    (kind,) = block
    n_slots = n_comp * grid.n_points
    if kind == "fock":
        slots = tuple(_slot(s, n_comp, grid, f"{path}.fock[{i}]") for i, s in enumerate(_get(block, "fock", path, list)))
        if len(set(slots)) < len(slots):
            raise ValidationError("a slot is occupied twice", f"{path}.fock")
        return {"kind": "fock", "amplitudes": {slots: 1.0}, "order": len(slots)}
    if kind == "superposition":
        amps = {}
        for i, term in enumerate(_get(block, "superposition", path, list)):
            where = f"{path}.superposition[{i}]"
            slots = tuple(_slot(s, n_comp, grid, f"{where}.slots[{j}]") for j, s in enumerate(_get(term, "slots", where, list)))
            amp = _get(term, "amplitude", where)
            if isinstance(amp, list) and len(amp) == 2:
                amp = complex(float(amp[0]), float(amp[1]))
            elif isinstance(amp, (int, float)) and not isinstance(amp, bool):
                amp = complex(amp)
            else:
                raise ValidationError(f"expected a number or [re, im], got {amp!r}", f"{where}.amplitude")
            amps[slots] = amps.get(slots, 0) + amp
        if not amps or len({len(k) for k in amps}) != 1:
            raise ValidationError("terms must share one particle number", f"{path}.superposition")
        norm = np.sqrt(sum(abs(a) ** 2 for a in amps.values()))
        if norm == 0:
            raise ValidationError("state has zero norm", f"{path}.superposition")
        return {"kind": "superposition", "amplitudes": {k: v / norm for k, v in amps.items()}, "order": len(next(iter(amps)))}
    if kind == "plane_waves":
        modes = [_momentum(m, n_comp, grid, f"{path}.plane_waves[{i}]") for i, m in enumerate(_get(block, "plane_waves", path, list))]
        orbitals = momentum_mode_rows(grid, n_comp, modes)
        return {"kind": "plane_waves", "orbitals": orbitals, "modes": modes, "order": len(modes)}
    raise ValidationError(f"unknown initial state kind {kind!r}", path)


def _parse_observables(items, n_comp, grid, order):
    out, seen = [], set()
    for i, item in enumerate(items):
        path = f"observables[{i}]"
        oid = _get(item, "id", path, str)
        if oid in seen:
            raise ValidationError(f"duplicate observable id {oid!r}", f"{path}.id")
        seen.add(oid)
        kind = _get(item, "kind", path, str, choices=OBSERVABLE_KINDS)
        if kind == "total_population":
            out.append(ObservableRequest(oid, kind))
            continue
        if kind == "population":
            slots = tuple(_slot(s, n_comp, grid, f"{path}.slots[{j}]") for j, s in enumerate(_get(item, "slots", path, list)))
            bra = ket = slots
        elif kind == "coherence":
            bra = tuple(_slot(s, n_comp, grid, f"{path}.bra[{j}]") for j, s in enumerate(_get(item, "bra", path, list)))
            ket = tuple(_slot(s, n_comp, grid, f"{path}.ket[{j}]") for j, s in enumerate(_get(item, "ket", path, list)))
        else:
            bra = tuple(_momentum(m, n_comp, grid, f"{path}.bra[{j}]") for j, m in enumerate(_get(item, "bra", path, list)))
            ket = tuple(_momentum(m, n_comp, grid, f"{path}.ket[{j}]") for j, m in enumerate(_get(item, "ket", path, list)))
        if len(bra) != order or len(ket) != order:
            raise ValidationError(f"needs {order} slots per side to match the initial state", path)
        out.append(ObservableRequest(oid, kind, bra, ket))
    if not out:
        raise ValidationError("at least one observable is required", "observables")
    return out


def parse_config(raw):
    """Validate a configuration mapping and build an :class:`ExperimentConfig`."""
    if not isinstance(raw, dict):
        raise ValidationError("configuration must be a mapping", "<root>")
    gb = _get(raw, "grid", "<root>")
    try:
        grid = GridSpec(
            _get(gb, "points", "grid", int),
            _get(gb, "spacing", "grid", float, default=1.0),
            _get(gb, "dim", "grid", int, default=1),
        )
    except ValidationError:
        raise
    model, noise_form = _parse_model(_get(raw, "model", "<root>"), grid)
    n_comp = 2 if isinstance(model, TwoComponentModel) else model.n_components
    initial = _parse_initial(_get(raw, "initial_state", "<root>"), n_comp, grid)

    sb = _get(raw, "scheme", "<root>")
    try:
        scheme = StepScheme(
            _get(sb, "variant", "scheme", str, default="euler-maruyama"),
            _positive(_get(sb, "dt", "scheme", float), "scheme.dt"),
            _get(sb, "steps", "scheme", int),
            _get(sb, "dispersion", "scheme", str, default="stencil"),
            _get(sb, "lattice_period", "scheme", int, default=None),
        )
    except ValidationError:
        raise
    except ValueError as err:
        raise ValidationError(str(err), "scheme") from None
    if "checkpoints" in sb:
        cps = _get(sb, "checkpoints", "scheme", list)
        if not all(isinstance(c, int) and not isinstance(c, bool) for c in cps):
            raise ValidationError("checkpoints must be integer step counts", "scheme.checkpoints")
        checkpoints = np.asarray(cps, dtype=np.int64)
        if np.any(np.diff(checkpoints) <= 0) or np.any(checkpoints < 0) or np.any(checkpoints > scheme.steps):
            raise ValidationError("checkpoints must increase strictly within 0..steps", "scheme.checkpoints")
    else:
        every = _get(sb, "checkpoint_every", "scheme", int, default=scheme.steps or 1)
        if every < 1:
            raise ValidationError("must be >= 1", "scheme.checkpoint_every")
        checkpoints = np.unique(np.append(np.arange(0, scheme.steps + 1, every), scheme.steps)).astype(np.int64)

    eb = _get(raw, "ensemble", "<root>")
    trajectories = _get(eb, "trajectories", "ensemble", int)
    if trajectories < 1:
        raise ValidationError(f"must be at least 1, got {trajectories}", "ensemble.trajectories")
    seed = _get(eb, "seed", "ensemble", int)
    if not 0 <= seed < 2**64:
        raise ValidationError("must be an unsigned 64-bit integer", "ensemble.seed")
    ceiling = _get(eb, "divergence_ceiling", "ensemble", float, default=0.01)
    if not 0 <= ceiling <= 1:
        raise ValidationError("must lie in [0, 1]", "ensemble.divergence_ceiling")
    chunk = _get(eb, "chunk_size", "ensemble", int, default=1000)
    if chunk < 1:
        raise ValidationError("must be at least 1", "ensemble.chunk_size")
    workers = _get(eb, "workers", "ensemble", int, default=None)
    if workers is not None and workers < 1:
        raise ValidationError("must be at least 1", "ensemble.workers")

    observables = _parse_observables(_get(raw, "observables", "<root>", list), n_comp, grid, initial["order"])
    ob = raw.get("output") or {}
    if not isinstance(ob, dict):
        raise ValidationError("expected a mapping", "output")
    formats = ob.get("formats", ["csv", "json"])
    if not isinstance(formats, list) or not formats or any(f not in ("csv", "json") for f in formats):
        raise ValidationError("formats must be a non-empty subset of [csv, json]", "output.formats")
    output = {
        "dir": str(ob.get("dir", ".")),
        "prefix": str(ob.get("prefix", "results")),
        "formats": formats,
        "plot": bool(ob.get("plot", False)),
    }
    return ExperimentConfig(
        raw, model, grid, noise_form, initial, scheme, checkpoints, trajectories, seed,
        ceiling, chunk, workers, observables, output,
    )


def load_config(path):
    """Read a YAML/JSON file and validate it."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ValidationError(f"cannot read configuration: {err}", str(path)) from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ValidationError(f"malformed configuration: {err}", str(path)) from None
    return parse_config(raw)
