"""phi^4 model assembly: single solves, coupling sweeps, persistence, export.

A run record captures everything needed to reproduce or audit one
optimization cell (D, m, g, seed): the final state matrices, the energy
breakdown and field moments, the optimization trace summary, and a snapshot
of the configuration.  Records persist as one JSON file each in a directory
keyed by cell and config hash, which makes sweeps resumable and the data
diff-friendly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass

from . import __version__ as _VERSION
from .core import (
    CmpsState,
    DegenerateSteadyState,
    matrix_from_pairs,
    matrix_to_pairs,
    stationary_state,
)
from .observables import ObservableSet, compute_observables
from .ode import StepUnderflow
from .optimizer import (
    LineSearchFailed,
    Numerics,
    OptimizerConfig,
    SingularMetric,
    embed_state,
    optimize,
)

#: reference energy densities at m = 1 (high-bond-dimension upper bounds)
REFERENCE_ENERGIES = {1.0: -0.0393547, 2.0: -0.157214}

NUMERICAL_ERRORS = (DegenerateSteadyState, SingularMetric, LineSearchFailed, StepUnderflow)


class ConfigError(ValueError):
    """Invalid configuration file or sweep specification."""


@dataclass(frozen=True)
class SweepSpec:
    """Couplings x bond dimensions x seeds to optimize, at one mass."""

    couplings: tuple
    dims: tuple
    seeds: tuple = (0, 1, 2)
    mass: float = 1.0
    warm_start: bool = True

    @staticmethod
    def from_dict(model: dict) -> "SweepSpec":
        couplings = _expand_couplings(model.get("couplings", model.get("coupling")))
        dims = model.get("dims", model.get("dim"))
        if dims is None:
            raise ConfigError("model section needs 'dims'")
        dims = tuple(int(d) for d in (dims if isinstance(dims, list) else [dims]))
        if any(d < 1 for d in dims):
            raise ConfigError("bond dimensions must be >= 1")
        seeds = model.get("seeds", [0, 1, 2])
        seeds = tuple(int(s) for s in (seeds if isinstance(seeds, list) else [seeds]))
        mass = float(model.get("mass", 1.0))
        if mass <= 0:
            raise ConfigError("mass must be positive")
        return SweepSpec(
            couplings=couplings,
            dims=tuple(sorted(dims)),
            seeds=seeds,
            mass=mass,
            warm_start=bool(model.get("warm_start", True)),
        )


def _expand_couplings(spec) -> tuple:
    if spec is None:
        raise ConfigError("model section needs 'couplings'")
    if isinstance(spec, (int, float)):
        values = [float(spec)]
    elif isinstance(spec, list):
        values = [float(g) for g in spec]
    elif isinstance(spec, dict):
        try:
            start, stop, step = (float(spec[k]) for k in ("start", "stop", "step"))
        except KeyError as exc:
            raise ConfigError(f"coupling range needs start/stop/step: {exc}")
        if step <= 0:
            raise ConfigError("coupling step must be positive")
        n = int(round((stop - start) / step))
        values = [start + k * step for k in range(n + 1) if start + k * step <= stop + 1e-12]
        refine = spec.get("refine")
        if refine:
            focus = float(refine["focus"])
            halfwidth = float(refine["halfwidth"])
            fstep = float(refine["step"])
            if fstep <= 0:
                raise ConfigError("refinement step must be positive")
            k = 0
            while focus - halfwidth + k * fstep <= focus + halfwidth + 1e-12:
                values.append(focus - halfwidth + k * fstep)
                k += 1
    else:
        raise ConfigError(f"cannot parse couplings: {spec!r}")
    values = sorted({round(v, 12) for v in values})
    if any(v <= 0 for v in values):
        raise ConfigError("couplings must be positive")
    return tuple(values)


@dataclass
class RunRecord:
    """One optimization cell with its observables and provenance."""

    D: int
    m: float
    g: float
    seed: int
    status: str
    energy: float | None
    observables: ObservableSet | None
    grad_norm: float | None
    iterations: int
    termination: str
    wall_time: float
    energy_trace: list
    step_sizes: list
    K: list | None
    R: list | None
    config: dict
    config_hash: str
    artifact_version: str = _VERSION
    started_at: str = ""
    finished_at: str = ""

    @property
    def key(self):
        return (self.D, self.m, self.g, self.seed)

    def state(self) -> CmpsState:
        if self.K is None or self.R is None:
            raise ValueError("record has no stored state")
        return CmpsState(
            K=matrix_from_pairs(self.K, self.D),
            R=matrix_from_pairs(self.R, self.D),
            m=self.m,
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if self.observables is not None:
            out["observables"] = dataclasses.asdict(self.observables)
        return out

    @staticmethod
    def from_dict(data: dict) -> "RunRecord":
        obs = data.get("observables")
        if obs is not None:
            obs = ObservableSet(
                energy_density=obs["energy_density"],
                kinetic_part=obs["kinetic_part"],
                quartic_part=obs["quartic_part"],
                phi_moments=tuple(obs["phi_moments"]),
                vertex_samples=tuple(tuple(v) for v in obs.get("vertex_samples", ())),
            )
        fields = {f.name for f in dataclasses.fields(RunRecord)}
        kwargs = {k: v for k, v in data.items() if k in fields}
        kwargs["observables"] = obs
        return RunRecord(**kwargs)


def config_hash(opt_cfg: OptimizerConfig, numerics: Numerics, spec_extra=None) -> str:
    payload = {
        "optimizer": dataclasses.asdict(opt_cfg),
        "numerics": dataclasses.asdict(numerics),
        "extra": spec_extra,
    }
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


def solve_phi4(
    D: int,
    m: float,
    g: float,
    cfg: OptimizerConfig,
    numerics: Numerics = Numerics(),
    init_state: CmpsState | None = None,
    out_dir: str | None = None,
    config_extra=None,
) -> RunRecord:
    """Optimize one cell and evaluate its observables on the final state.

    Optimizer failures are captured in the record with a failed status
    rather than raised, so sweeps can tolerate bad cells.
    """
    started = _now()
    chash = config_hash(cfg, numerics, spec_extra=config_extra)
    snapshot = {
        "optimizer": dataclasses.asdict(cfg),
        "numerics": dataclasses.asdict(numerics),
        "extra": config_extra,
    }
    try:
        result = optimize(D, m, g, cfg, numerics=numerics, init_state=init_state)
        state = result.state
        obs = compute_observables(
            state, stationary_state(state), g, numerics.grid(m), numerics.ode_tol
        )
        record = RunRecord(
            D=D, m=m, g=g, seed=cfg.seed,
            status="ok",
            energy=obs.energy_density,
            observables=obs,
            grad_norm=result.grad_norms[-1],
            iterations=result.iterations,
            termination=result.termination,
            wall_time=result.wall_time,
            energy_trace=[float(e) for e in result.energies],
            step_sizes=[float(s) for s in result.step_sizes],
            K=matrix_to_pairs(state.K),
            R=matrix_to_pairs(state.R),
            config=snapshot,
            config_hash=chash,
            started_at=started,
            finished_at=_now(),
        )
    except NUMERICAL_ERRORS as exc:
        record = RunRecord(
            D=D, m=m, g=g, seed=cfg.seed,
            status=f"failed:{type(exc).__name__}",
            energy=None, observables=None, grad_norm=None,
            iterations=0, termination=str(exc), wall_time=0.0,
            energy_trace=[], step_sizes=[], K=None, R=None,
            config=snapshot, config_hash=chash,
            started_at=started, finished_at=_now(),
        )
    if out_dir:
        save_record(record, out_dir)
    return record


# -- persistence -------------------------------------------------------------


def record_filename(D, m, g, seed, chash) -> str:
    return f"D{D}_m{m:g}_g{g:.6f}_s{seed}_{chash}.json"


def save_record(record: RunRecord, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(
        out_dir, record_filename(record.D, record.m, record.g, record.seed,
                                 record.config_hash)
    )
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(record.to_dict(), fh, indent=1)
    os.replace(tmp, path)
    return path


def load_record(path: str) -> RunRecord:
    with open(path) as fh:
        return RunRecord.from_dict(json.load(fh))


def load_records(in_dir: str) -> list:
    records = []
    for name in sorted(os.listdir(in_dir)):
        if name.endswith(".json"):
            records.append(load_record(os.path.join(in_dir, name)))
    return records


# -- sweeps -------------------------------------------------------------------


def run_sweep(
    spec: SweepSpec,
    cfg: OptimizerConfig,
    numerics: Numerics = Numerics(),
    out_dir: str | None = None,
    progress=None,
) -> list:
    """One record per (g, D, seed) cell, ascending in D for warm starts.

    Cells already persisted under the same configuration hash are loaded
    instead of recomputed, so interrupted sweeps resume for free.  Failed
    cells are flagged in their records and do not abort the sweep.
    """
    extra = {"warm_start": spec.warm_start}
    records = {}
    for seed in spec.seeds:
        for g in spec.couplings:
            prev_state = None
            for D in spec.dims:
                cell_cfg = dataclasses.replace(cfg, seed=seed)
                cell_hash = config_hash(cell_cfg, numerics, spec_extra=extra)
                existing = None
                if out_dir:
                    path = os.path.join(
                        out_dir, record_filename(D, spec.mass, g, seed, cell_hash)
                    )
                    if os.path.exists(path):
                        existing = load_record(path)
                if existing is not None:
                    record = existing
                else:
                    init = None
                    if spec.warm_start and prev_state is not None:
                        init = embed_state(prev_state, D, cell_cfg)
                    record = solve_phi4(
                        D, spec.mass, g, cell_cfg, numerics,
                        init_state=init, out_dir=out_dir, config_extra=extra,
                    )
                if record.status == "ok":
                    prev_state = record.state()
                records[(D, g, seed)] = record
                if progress:
                    progress(record)
    return [records[k] for k in sorted(records)]


def best_records(records) -> dict:
    """Lowest-energy successful record per (D, m, g) across seeds."""
    best = {}
    for rec in records:
        if rec.status != "ok":
            continue
        key = (rec.D, rec.m, rec.g)
        if key not in best or rec.energy < best[key].energy:
            best[key] = rec
    return best


# -- export -------------------------------------------------------------------

_CSV_COLUMNS = (
    "D", "m", "g", "seed", "energy", "kinetic", "phi1", "phi2", "phi3", "phi4",
    "grad_norm", "iters", "status",
)


def export_records(records, fmt: str, path: str) -> list:
    """Write records to ``path``; returns the list of files written.

    JSON keeps everything including the state matrices.  CSV writes the
    summary table plus plot-ready companions: energy, |<phi>| and <:phi^2:>
    versus coupling (best seed per cell), and relative energy error versus
    bond dimension where a reference energy is known.
    """
    if fmt == "json":
        payload = [rec.to_dict() for rec in records]
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)
        return [path]
    if fmt != "csv":
        raise ConfigError(f"unknown export format {fmt!r}")

    files = [path]
    with open(path, "w") as fh:
        fh.write(",".join(_CSV_COLUMNS) + "\n")
        for rec in records:
            mom = rec.observables.phi_moments if rec.observables else (None,) * 4
            row = [
                rec.D, rec.m, rec.g, rec.seed,
                _fmt(rec.energy), _fmt(rec.observables.kinetic_part if rec.observables else None),
                _fmt(mom[0]), _fmt(mom[1]), _fmt(mom[2]), _fmt(mom[3]),
                _fmt(rec.grad_norm), rec.iterations, rec.status,
            ]
            fh.write(",".join(str(v) for v in row) + "\n")

    stem, _ = os.path.splitext(path)
    best = best_records(records)
    by_g = sorted(best.items())

    def companion(name, header, rows):
        cpath = f"{stem}_{name}.csv"
        with open(cpath, "w") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(str(v) for v in row) + "\n")
        files.append(cpath)

    companion(
        "energy_vs_g", "D,m,g,energy",
        [(D, m, g, _fmt(rec.energy)) for (D, m, g), rec in by_g],
    )
    companion(
        "phi_vs_g", "D,m,g,phi,abs_phi",
        [
            (D, m, g, _fmt(rec.observables.phi_moments[0]),
             _fmt(abs(rec.observables.phi_moments[0])))
            for (D, m, g), rec in by_g
        ],
    )
    companion(
        "phi2_vs_g", "D,m,g,phi2",
        [(D, m, g, _fmt(rec.observables.phi_moments[1])) for (D, m, g), rec in by_g],
    )
    error_rows = []
    for (D, m, g), rec in by_g:
        ref = REFERENCE_ENERGIES.get(g)
        if ref is not None:
            error_rows.append(
                (D, m, g, _fmt(rec.energy), ref, _fmt(abs(rec.energy - ref) / abs(ref)))
            )
    companion("error_vs_D", "D,m,g,energy,reference,rel_error", error_rows)
    return files


def _fmt(value):
    return "" if value is None else f"{value:.12g}"


# -- config file ---------------------------------------------------------------


def load_config(path: str):
    """Parse {model, optimizer, numerics} sections from a JSON config file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    spec = SweepSpec.from_dict(raw.get("model", {}))
    try:
        opt = OptimizerConfig(**raw.get("optimizer", {}))
        numerics = Numerics(**raw.get("numerics", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad optimizer/numerics section: {exc}")
    return spec, opt, numerics
